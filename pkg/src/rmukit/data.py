"""Sequence datasets: JSONL / CSV-directory formats, a synthetic generator and the variance split.

JSONL record (one per line)::

    {"id": "v001", "features": [[...], ...], "target": 3.2,
     "per_step_targets": [...], "variance_key": 0.04}

``per_step_targets`` and ``variance_key`` are optional.

A ``csv_dir`` dataset is a directory holding ``manifest.csv`` with columns
``id,path,target,variance_key`` (``path`` relative to the directory) and one
header-less CSV of ``T`` rows by ``d`` columns per sequence.
"""

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DatasetError, InputError, SchemaError

FORMATS = ("jsonl", "csv_dir")
SPLIT_KEYS = ("variance_key", "per_step_target_variance")


@dataclass
class FeatureSequence:
    id: str
    features: np.ndarray
    target: float
    per_step_targets: np.ndarray = None
    variance_key: float = None

    def __post_init__(self):
        self.id = str(self.id)
        try:
            self.features = np.asarray(self.features, dtype=np.float64)
        except ValueError as exc:
            raise SchemaError(f"sequence {self.id!r}: features are ragged or non-numeric ({exc})") from None
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise SchemaError(f"sequence {self.id!r}: features must be a non-empty T x d matrix, "
                              f"got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise SchemaError(f"sequence {self.id!r}: features contain non-finite values")
        self.target = float(self.target)
        if not math.isfinite(self.target):
            raise SchemaError(f"sequence {self.id!r}: target is not finite")
        if self.per_step_targets is not None:
            self.per_step_targets = np.asarray(self.per_step_targets, dtype=np.float64)
            if self.per_step_targets.shape != (self.length,):
                raise SchemaError(f"sequence {self.id!r}: per_step_targets has shape "
                                  f"{self.per_step_targets.shape}, expected ({self.length},)")
        if self.variance_key is not None:
            self.variance_key = float(self.variance_key)

    @property
    def length(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def to_record(self):
        rec = {"id": self.id, "features": self.features.tolist(), "target": self.target}
        if self.per_step_targets is not None:
            rec["per_step_targets"] = self.per_step_targets.tolist()
        if self.variance_key is not None:
            rec["variance_key"] = self.variance_key
        return rec

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        def same(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a, b)
        return (self.id == other.id and self.target == other.target
                and self.variance_key == other.variance_key
                and np.array_equal(self.features, other.features)
                and same(self.per_step_targets, other.per_step_targets))


def _check_uniform(dataset, source):
    dims = {s.dim for s in dataset}
    if len(dims) > 1:
        raise SchemaError(f"{source}: feature dimension is not uniform across sequences: {sorted(dims)}")


def _load_jsonl(path):
    dataset = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seq = FeatureSequence(
                    rec["id"], rec["features"], rec["target"],
                    rec.get("per_step_targets"), rec.get("variance_key"),
                )
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc!r})") from exc
            if dataset and seq.dim != dataset[0].dim:
                raise SchemaError(f"{path}:{lineno}: feature dimension {seq.dim} differs from "
                                  f"{dataset[0].dim} in earlier records")
            dataset.append(seq)
    return dataset


def _load_csv_dir(path):
    manifest = os.path.join(path, "manifest.csv")
    dataset = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "path", "target"} - set(reader.fieldnames or ())
        if missing:
            raise DatasetError(f"{manifest}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            seq_path = os.path.join(path, row["path"])
            try:
                features = np.loadtxt(seq_path, delimiter=",", ndmin=2)
                vk = row.get("variance_key") or None
                seq = FeatureSequence(row["id"], features, row["target"], variance_key=vk)
            except SchemaError as exc:
                raise SchemaError(f"{manifest}:{lineno} ({seq_path}): {exc}") from exc
            except (OSError, ValueError) as exc:
                raise DatasetError(f"{manifest}:{lineno} ({seq_path}): {exc}") from exc
            dataset.append(seq)
    _check_uniform(dataset, manifest)
    return dataset


def load_dataset(path, format="jsonl"):
    """Read and validate a dataset; an empty file yields an empty list with a warning."""
    if format not in FORMATS:
        raise ConfigurationError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if not os.path.exists(path):
        raise DatasetError(f"{path}: no such file or directory")
    dataset = _load_jsonl(path) if format == "jsonl" else _load_csv_dir(path)
    if not dataset:
        warnings.warn(f"{path}: dataset is empty", stacklevel=2)
    return dataset


def save_dataset(dataset, path, format="jsonl"):
    """Write ``dataset``; floats are written with round-trip precision."""
    if format == "jsonl":
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for seq in dataset:
                fh.write(json.dumps(seq.to_record()) + "\n")
        os.replace(tmp, path)
    elif format == "csv_dir":
        os.makedirs(path, exist_ok=True)
        rows = []
        for i, seq in enumerate(dataset):
            name = f"seq_{i:05d}.csv"
            with open(os.path.join(path, name), "w", encoding="utf-8") as fh:
                for row in seq.features:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            vk = "" if seq.variance_key is None else repr(seq.variance_key)
            rows.append([seq.id, name, repr(seq.target), vk])
        with open(os.path.join(path, "manifest.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "path", "target", "variance_key"])
            w.writerows(rows)
    else:
        raise ConfigurationError(f"unknown dataset format {format!r}; expected one of {FORMATS}")


@dataclass
class SyntheticSpec:
    """Piecewise-constant latent quality with a mean/min mixed retrospective target."""

    num_sequences: int = 10
    T: int = 50
    d_1: int = 3
    num_segments: int = 4
    quality_range: tuple = (0.0, 1.0)
    noise: float = 0.05
    alpha: float = 0.5
    seed: int = 0

    def validate(self):
        if self.num_sequences < 0 or self.T < 1:
            raise ConfigurationError("num_sequences must be >= 0 and T >= 1")
        if self.d_1 < 2:
            raise ConfigurationError(f"d_1 must be >= 2 (quality and its change), got {self.d_1}")
        if not 1 <= self.num_segments <= self.T:
            raise ConfigurationError(f"num_segments must lie in [1, T={self.T}], got {self.num_segments}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        lo, hi = self.quality_range
        if not lo <= hi:
            raise ConfigurationError(f"quality_range must be ordered, got {self.quality_range}")


def retrospective_target(q, alpha):
    q = np.asarray(q, dtype=np.float64)
    return float(alpha * q.mean() + (1.0 - alpha) * q.min())


def synth_generate(spec=None):
    """Generate ``spec.num_sequences`` sequences.

    Per sequence: ``K`` segments with random boundaries and a quality level
    each drawn from ``quality_range``; features per step are
    ``[q_t, q_t - q_{t-1}, noise...]`` (the first change is 0); the target is
    ``alpha * mean(q) + (1 - alpha) * min(q)``. ``variance_key`` is the
    population variance of ``q``.
    """
    spec = spec or SyntheticSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.quality_range
    dataset = []
    for n in range(spec.num_sequences):
        cuts = np.sort(rng.choice(np.arange(1, spec.T), size=spec.num_segments - 1, replace=False))
        levels = rng.uniform(lo, hi, size=spec.num_segments)
        q = np.repeat(levels, np.diff(np.concatenate(([0], cuts, [spec.T]))))
        dq = np.diff(q, prepend=q[0])
        noise = spec.noise * rng.standard_normal((spec.T, spec.d_1 - 2))
        features = np.column_stack([q, dq, noise])
        dataset.append(FeatureSequence(
            f"synth_{n:05d}", features, retrospective_target(q, spec.alpha),
            per_step_targets=q, variance_key=float(np.var(q)),
        ))
    return dataset


def split_key_value(seq, key):
    if key == "variance_key":
        if seq.variance_key is None:
            raise InputError(f"sequence {seq.id!r} has no variance_key")
        return seq.variance_key
    if key == "per_step_target_variance":
        if seq.per_step_targets is None:
            raise InputError(f"sequence {seq.id!r} has no per_step_targets")
        return float(np.var(seq.per_step_targets))
    raise ConfigurationError(f"unknown split key {key!r}; expected one of {SPLIT_KEYS}")


def variance_split(dataset, train_fraction=0.8, key="variance_key"):
    """Lowest-variance ``floor(train_fraction * N)`` sequences train, the rest test.

    Ties in the key are broken by id.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    keyed = sorted(dataset, key=lambda s: (split_key_value(s, key), s.id))
    # guard against 0.29 * 100 == 28.999999999999996
    n_train = math.floor(train_fraction * len(keyed) + 1e-9)
    return keyed[:n_train], keyed[n_train:]
