"""ADAM, the deterministic training loop and the finite-difference gradient checker."""

import csv
import io
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cells
from .errors import ConfigurationError, InputError, IntegrityError, MetricsUndefinedError, TrainingDivergence
from .losses import mse_loss
from .mathops import default_dtype
from .metrics import compute_metrics
from .network import AssessmentNet, build_net, dropout_masks, forward_arrays, net_backward

__all__ = [
    "AdamState", "adam_step", "TrainConfig", "TrainLog", "EpochRecord", "TrainResult",
    "train", "mse_loss", "batch_gradients", "predict", "dataset_loss",
    "GradCheckReport", "finite_difference_grads", "grad_check", "random_instance", "randomized",
]


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """Bias-corrected ADAM update of ``params`` in place. Returns ``(params, state)``."""
    if set(grads) != set(params):
        raise IntegrityError(f"gradient names {sorted(grads)} do not match parameters {sorted(params)}")
    for k, p in params.items():
        if np.shape(grads[k]) != np.shape(p):
            raise IntegrityError(f"gradient for {k} has shape {np.shape(grads[k])}, parameter {np.shape(p)}")
        if k in state.m and state.m[k].shape != np.shape(p):
            raise IntegrityError(f"optimizer moments for {k} have shape {state.m[k].shape}, parameter {np.shape(p)}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, p in params.items():
        g = grads[k]
        m = state.m.setdefault(k, np.zeros_like(p))
        v = state.v.setdefault(k, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    lr: float = 3e-4
    dropout: float = 0.5
    cell_kind: str = "rmu"
    init: str = "uniform_scaled"
    output_mode: str = "final_step"
    hidden: int = 32
    proj: int = None
    input_activation: str = "identity"
    clip_norm: float = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive, got {self.clip_norm}")

    def build_net(self, d_feat):
        return build_net(self.cell_kind, d_feat, self.hidden, self.proj, self.init, self.seed,
                         self.dropout, self.output_mode, self.input_activation)

    def as_dict(self):
        return asdict(self)


LOG_COLUMNS = ("epoch", "train_loss", "test_loss", "plcc", "srocc", "krocc", "rmse", "seconds")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float = None
    plcc: float = None
    srocc: float = None
    krocc: float = None
    rmse: float = None
    seconds: float = None


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, include_timing=False):
        """CSV text with a fixed header. Wall-clock seconds are left blank unless requested."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            row = []
            for name in LOG_COLUMNS:
                v = getattr(r, name)
                if name == "seconds" and not include_timing:
                    v = None
                row.append("" if v is None else repr(v))
            w.writerow(row)
        return buf.getvalue()

    def to_records(self):
        return [asdict(r) for r in self.records]


@dataclass
class TrainResult:
    final: AssessmentNet
    best: AssessmentNet
    log: TrainLog
    best_epoch: int = None


def _group_by_length(seqs):
    groups = {}
    for s in seqs:
        groups.setdefault(s.length, []).append(s)
    return [groups[T] for T in sorted(groups)]


def _stack(group):
    return np.ascontiguousarray(np.stack([s.features for s in group], axis=1))


def _targets(net, group):
    if net.output_mode == "per_step":
        if any(s.per_step_targets is None for s in group):
            raise InputError("per_step output mode needs per_step_targets on every sequence")
        return np.stack([s.per_step_targets for s in group], axis=1)
    return np.array([s.target for s in group])


def batch_gradients(net, seqs, rng=None):
    """Mean loss over ``seqs`` and its gradients.

    Sequences of equal length are stacked and run together; groups are
    reduced in ascending length order so the result does not depend on how
    the batch was assembled. Dropout masks come from ``rng`` when given.
    """
    if not seqs:
        raise InputError("empty batch")
    total = {k: np.zeros_like(v) for k, v in net.params.items()}
    loss = 0.0
    n = len(seqs)
    for group in _group_by_length(seqs):
        xs = _stack(group)
        masks = None
        if rng is not None and net.dropout_rate > 0:
            masks = dropout_masks(xs.shape[:2] + (net.d_proj,), net.dropout_rate, rng).astype(default_dtype())
        pred, trace = forward_arrays(net, xs, masks)
        y = _targets(net, group)
        diff = pred - y
        if net.output_mode == "per_step":
            T = xs.shape[0]
            loss += float(np.sum(diff * diff)) / (T * n)
            d_out = 2.0 * diff / (T * n)
        else:
            loss += float(np.sum(diff * diff)) / n
            d_out = 2.0 * diff / n
        g = net_backward(net, trace, grad_output=d_out)
        for k in total:
            total[k] += g.params[k]
    return loss, total


def predict(net, dataset):
    """Eval-mode final-step predictions, in dataset order."""
    out = np.empty(len(dataset))
    index = {id(s): i for i, s in enumerate(dataset)}
    for group in _group_by_length(dataset):
        pred, trace = forward_arrays(net, _stack(group))
        final = trace.outputs[-1]
        for s, p in zip(group, final):
            out[index[id(s)]] = p
    return out


def dataset_loss(net, dataset):
    """Eval-mode training objective averaged over sequences."""
    total = 0.0
    for group in _group_by_length(dataset):
        pred, _ = forward_arrays(net, _stack(group))
        diff = pred - _targets(net, group)
        per_seq = np.mean((diff * diff).reshape(diff.shape[0], -1), axis=0) if net.output_mode == "per_step" \
            else diff * diff
        total += float(np.sum(per_seq))
    return total / len(dataset)


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


def train(net, dataset, config, test=None):
    """Train ``net`` (copied, not modified) on ``dataset``.

    Each epoch shuffles with a generator seeded by ``config.seed``, takes an
    ADAM step per mini-batch, then logs the eval-mode loss on the training
    set and, when ``test`` is given, the test loss and metrics. The best
    network by test RMSE is kept alongside the final one.
    """
    config.validate()
    if not dataset:
        raise InputError("training set is empty")
    net = net.copy()
    net.dropout_rate = config.dropout
    net.output_mode = config.output_mode
    opt = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)
    rng = np.random.default_rng(config.seed)
    log = TrainLog()
    best, best_rmse, best_epoch = None, math.inf, None
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        for b, lo in enumerate(range(0, n, config.batch_size), start=1):
            batch = [dataset[i] for i in order[lo:lo + config.batch_size]]
            loss, grads = batch_gradients(net, batch, rng)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergence(epoch, b, loss)
            if config.clip_norm is not None:
                _clip(grads, config.clip_norm)
            adam_step(opt, net.params, grads)
        record = EpochRecord(epoch, dataset_loss(net, dataset))
        if not math.isfinite(record.train_loss):
            raise TrainingDivergence(epoch, b, record.train_loss)
        if test:
            record.test_loss = dataset_loss(net, test)
        if test and len(test) >= 2:
            try:
                m = compute_metrics(predict(net, test), [s.target for s in test])
            except MetricsUndefinedError:
                m = None
            if m is not None:
                record.plcc, record.srocc, record.krocc, record.rmse = m.plcc, m.srocc, m.krocc, m.rmse
                if m.rmse < best_rmse:
                    best, best_rmse, best_epoch = net.copy(), m.rmse, epoch
        record.seconds = time.perf_counter() - start
        log.records.append(record)
    if best is None:
        best, best_epoch = net.copy(), config.epochs
    return TrainResult(net, best, log, best_epoch)


# --- finite-difference oracle -------------------------------------------------

FD_STEP = 1e-5
_MAX_STACK = 4096


def finite_difference_grads(loss_fn, arrays, step=FD_STEP, dtype=np.longdouble):
    """Central differences of ``loss_fn`` w.r.t. every entry of every array.

    ``loss_fn`` receives a dict shaped like ``arrays`` but with one extra
    leading axis holding a stack of perturbed copies, and must return one
    loss per stacked copy. Only forward evaluations are used.

    The forward passes run in ``dtype``. Extended precision keeps the
    round-off of the difference quotient (about eps * |loss| / step) well
    below the 1e-8 floor of the relative-error denominator.
    """
    names = list(arrays)
    coords = [(name, idx) for name in names for idx in np.ndindex(np.shape(arrays[name]))]
    fd = {name: np.zeros(np.shape(arrays[name])) for name in names}
    per_call = max(1, _MAX_STACK // 2)
    for lo in range(0, len(coords), per_call):
        chunk = coords[lo:lo + per_call]
        P = 2 * len(chunk)
        stacked = {name: np.repeat(np.asarray(arrays[name], dtype=dtype)[None], P, axis=0)
                   for name in names}
        for j, (name, idx) in enumerate(chunk):
            stacked[name][(2 * j,) + idx] += step
            stacked[name][(2 * j + 1,) + idx] -= step
        losses = np.asarray(loss_fn(stacked), dtype=dtype)
        for j, (name, idx) in enumerate(chunk):
            fd[name][idx] = (losses[2 * j] - losses[2 * j + 1]) / dtype(2 * step)
    return fd


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float
    note: str = ""

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return not self.note and self.max_error < self.tolerance

    def __str__(self):
        lines = [f"{name:>14s}  {err:.3e}" for name, err in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        if self.note:
            lines.append(self.note)
        lines.append(f"{status}  max relative error {self.max_error:.3e} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def randomized(model, seed=0):
    """Copy of ``model`` with every entry, biases included, drawn from U[-1, 1] / sqrt(fan_in).

    Used for gradient checks so no unit sits exactly on a relu or max kink.
    """
    rng = np.random.default_rng(seed)
    arrays = model.arrays if isinstance(model, cells.CellParams) else model.params
    fresh = {}
    for name, a in arrays.items():
        fan_in = a.shape[0] if a.ndim == 2 else a.shape[-1]
        fresh[name] = rng.uniform(-1.0, 1.0, size=a.shape).astype(a.dtype) / np.sqrt(fan_in)
    if isinstance(model, cells.CellParams):
        return cells.CellParams(model.kind, model.d_in, model.d_hid, fresh)
    return model.with_params(fresh)


def random_instance(model, T, seed=0):
    """A seeded random input sequence plus loss weights for ``grad_check``.

    For a cell the loss is ``sum_t <weights_t, h_t>``; for a network it is the
    MSE against random per-step or final targets, with frozen dropout masks
    when the network has dropout.
    """
    rng = np.random.default_rng(seed)
    if isinstance(model, cells.CellParams):
        return {"xs": rng.standard_normal((T, model.d_in)),
                "weights": rng.standard_normal((T, model.d_hid))}
    shape = (T,) if model.output_mode == "per_step" else ()
    inst = {"xs": rng.standard_normal((T, model.d_feat)), "targets": rng.standard_normal(shape)}
    if model.dropout_rate > 0:
        inst["masks"] = dropout_masks((T, model.d_proj), model.dropout_rate, rng)
    return inst


def _cell_loss(model, inst):
    def loss(stacked):
        xs = np.moveaxis(stacked.pop("inputs"), 0, 1)  # (T, P, d_in)
        p = cells.CellParams(model.kind, model.d_in, model.d_hid, stacked)
        hs = cells.unroll(p, xs).hs
        return np.einsum("tpj,tj->p", hs, inst["weights"])

    def analytic():
        trace = cells.unroll(model, inst["xs"])
        grads, dxs = cells.backward(model, trace, inst["weights"])
        return grads, dxs

    return dict(model.arrays), loss, analytic


def _net_loss(model, inst):
    masks = inst.get("masks")

    def loss(stacked):
        xs = np.moveaxis(stacked.pop("inputs"), 0, 1)  # (T, P, d_feat)
        net = model.with_params(stacked)
        m = None if masks is None else masks[:, None, :]
        pred, _ = forward_arrays(net, xs, m, dtype=xs.dtype)
        diff = pred - (inst["targets"][:, None] if model.output_mode == "per_step" else inst["targets"])
        return np.mean((diff * diff).reshape(-1, diff.shape[-1]), axis=0)

    def analytic():
        pred, trace = forward_arrays(model, inst["xs"], masks)
        g = net_backward(model, trace, targets=inst["targets"])
        return g.params, g.inputs

    return dict(model.params), loss, analytic


def grad_check(model, instance=None, tolerance=1e-4, step=FD_STEP, backward=None, T=4, seed=0):
    """Compare analytic gradients of a cell or network with central differences.

    Reports the max relative error per parameter block (and for the inputs);
    never raises on mismatch. ``backward`` optionally replaces the analytic
    gradient routine (``instance -> (param_grads, input_grads)``) so the
    checker itself can be tested.
    """
    if default_dtype() != np.float64:
        return GradCheckReport({}, tolerance, note="gradient checks require double precision (RMUKIT_PRECISION=f64)")
    instance = instance if instance is not None else random_instance(model, T, seed)
    if isinstance(model, cells.CellParams):
        arrays, loss, analytic = _cell_loss(model, instance)
    elif isinstance(model, AssessmentNet):
        arrays, loss, analytic = _net_loss(model, instance)
    else:
        raise ConfigurationError(f"grad_check expects CellParams or AssessmentNet, got {type(model).__name__}")
    param_grads, input_grads = backward(instance) if backward is not None else analytic()
    arrays = dict(arrays, inputs=instance["xs"])
    fd = finite_difference_grads(loss, arrays, step)
    errors = {}
    for name in arrays:
        a = input_grads if name == "inputs" else param_grads[name]
        errors[name] = float(np.max(relative_error(a, fd[name]), initial=0.0))
    return GradCheckReport(errors, tolerance)
