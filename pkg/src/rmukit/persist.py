"""Checkpoint files and per-timestep memory traces.

A checkpoint is JSON with every tensor stored as base64 of its little-endian
float64 bytes, so files are bit-exact and readable from any language::

    {"format": "rmukit-checkpoint", "version": 1, "cell": "rmu",
     "dims": {"d_feat": 3, "d_proj": 4, "d_hid": 4}, ...,
     "tensors": {"cell.W_s": {"shape": [4, 4], "data": "..."}, ...}}
"""

import base64
import csv
import io
import json
import os
import tempfile

import numpy as np

from .errors import CheckpointError, ConfigurationError
from .mathops import default_dtype
from .network import AssessmentNet, net_forward

FORMAT = "rmukit-checkpoint"
VERSION = 1
RAW_TRACE_MAX_HIDDEN = 4


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(a):
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(entry):
    raw = base64.b64decode(entry["data"].encode("ascii"), validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(default_dtype())


def checkpoint_to_dict(net, config=None, seed=None, extra=None):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "cell": net.cell_kind,
        "dims": {"d_feat": net.d_feat, "d_proj": net.d_proj, "d_hid": net.d_hid},
        "dropout_rate": net.dropout_rate,
        "output_mode": net.output_mode,
        "input_activation": net.input_activation,
        "cell_param_count": net.cell_param_count,
        "config": config or {},
        "seed": seed,
        "tensors": {name: encode_tensor(a) for name, a in net.params.items()},
    }
    if extra:
        doc["extra"] = extra
    return doc


def dumps_checkpoint(doc):
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(path, net, config=None, seed=None, extra=None):
    atomic_write(path, dumps_checkpoint(checkpoint_to_dict(net, config, seed, extra)))


def checkpoint_from_dict(doc):
    """Rebuild the network; returns ``(net, doc)``."""
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not an rmukit checkpoint (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}; this build reads {VERSION}")
    try:
        dims = doc["dims"]
        params = {name: decode_tensor(entry) for name, entry in doc["tensors"].items()}
        net = AssessmentNet(doc["cell"], dims["d_feat"], dims["d_proj"], dims["d_hid"], params,
                            doc["dropout_rate"], doc["output_mode"], doc["input_activation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return net, doc


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    return checkpoint_from_dict(doc)


# --- memory traces -------------------------------------------------------------

TRACE_FIELDS = {"rmu": ("s", "c_plus", "c_minus", "h"), "lstm": ("c", "h"), "gru": ("h",)}


def _field_values(state, cache, name):
    return cache.s if name == "s" else getattr(state, name)


def _columns(name, d_hid):
    if d_hid == 1:
        return [name]
    if d_hid <= RAW_TRACE_MAX_HIDDEN:
        return [f"{name}_{j}" for j in range(d_hid)]
    return [f"{name}_mean", f"{name}_min", f"{name}_max"]


def _summarise(v, d_hid):
    v = np.asarray(v, dtype=np.float64)
    if d_hid <= RAW_TRACE_MAX_HIDDEN:
        return list(v)
    return [v.mean(), v.min(), v.max()]


def memory_trace(net, seq):
    """Per-timestep cell internals for one sequence, evaluated in eval mode.

    RMU rows hold the stimulus response, both reinforcement memories and
    the appraisal; LSTM rows hold C and h; GRU rows only h. ``pred`` is the
    head applied to ``h_t``. Units are written individually up to
    ``RAW_TRACE_MAX_HIDDEN`` hidden units, summarised as mean/min/max beyond.
    Returns ``(header, rows)``.
    """
    _, trace = net_forward(net, seq, mode="eval")
    fields = TRACE_FIELDS[net.cell_kind]
    header = ["t"]
    for name in fields:
        header += _columns(name, net.d_hid)
    header.append("pred")
    rows = []
    ct = trace.cell_trace
    for t, (state, cache) in enumerate(zip(ct.states[1:], ct.caches), start=1):
        row = [t]
        for name in fields:
            row += _summarise(_field_values(state, cache, name), net.d_hid)
        row.append(float(trace.outputs[t - 1]))
        rows.append(row)
    return header, rows


def trace_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()


def read_trace_csv(text):
    """Parse trace CSV text into a dict of column name -> float array."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise ConfigurationError("empty trace")
    data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64).reshape(-1, len(header))
    return {name: data[:, j] for j, name in enumerate(header)}
