"""Recurrent cells: RMU, LSTM and GRU with exact reverse-mode gradients.

Every gate has the pre-activation ``h_prev @ W_g + x @ U_g + b_g``. Note the
naming: ``W_*`` is the square hidden-to-hidden matrix and ``U_*`` the
input-to-hidden matrix, so the RMU stimulus response reads
``s = tanh(h_prev @ W_s + x @ U_s + b_s)``.

RMU step::

    s     = tanh(h_prev W_s + x U_s + b_s)
    f+    = sigmoid(h_prev W_f+ + x U_f+ + b_f+)
    f-    = sigmoid(h_prev W_f- + x U_f- + b_f-)
    C+    = max(f+ * C+_prev, relu(s))
    C-    = max(f- * C-_prev, relu(-s))
    h     = tanh(C+ - C-)

Ties in the max go to the decayed-memory branch, and backward routes the
gradient to whichever branch won in the forward pass.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrityError, UnsupportedSchemeError
from .mathops import affine, default_dtype, elementwise, relu, sigmoid

CELL_KINDS = ("rmu", "lstm", "gru")
GATES = {
    "rmu": ("s", "f_plus", "f_minus"),
    "lstm": ("i", "f", "o", "c"),
    "gru": ("r", "z", "h"),
}
FORGET_GATES = {"rmu": ("f_plus", "f_minus"), "lstm": ("f",), "gru": ()}
INIT_SCHEMES = ("uniform_scaled", "constant_qoe")


def _check_kind(kind):
    if kind not in CELL_KINDS:
        raise ConfigurationError(f"unknown cell kind {kind!r}; expected one of {CELL_KINDS}")


def param_names(kind):
    _check_kind(kind)
    return tuple(f"{p}_{g}" for g in GATES[kind] for p in ("W", "U", "b"))


def param_shapes(kind, d_in, d_hid):
    shapes = {}
    for g in GATES[kind]:
        shapes[f"W_{g}"] = (d_hid, d_hid)
        shapes[f"U_{g}"] = (d_in, d_hid)
        shapes[f"b_{g}"] = (d_hid,)
    return shapes


@dataclass
class CellParams:
    """Named weight arrays of one cell.

    Arrays may carry extra leading axes (a stack of parameter sets); the
    forward pass broadcasts over them, backward requires plain arrays.
    """

    kind: str
    d_in: int
    d_hid: int
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_kind(self.kind)
        if self.d_in < 1 or self.d_hid < 1:
            raise ConfigurationError(f"d_in and d_hid must be >= 1, got {self.d_in}, {self.d_hid}")
        expected = param_shapes(self.kind, self.d_in, self.d_hid)
        if set(self.arrays) != set(expected):
            raise ConfigurationError(
                f"{self.kind} parameters must be {sorted(expected)}, got {sorted(self.arrays)}"
            )
        for name, shape in expected.items():
            got = np.shape(self.arrays[name])
            if got[len(got) - len(shape):] != shape:
                raise ConfigurationError(f"{name} has shape {got}, expected (..., {shape})")

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def names(self):
        return param_names(self.kind)

    @property
    def size(self):
        return int(sum(np.size(a) for a in self.arrays.values()))

    def copy(self):
        return CellParams(self.kind, self.d_in, self.d_hid,
                          {k: np.array(v, copy=True) for k, v in self.arrays.items()})


@dataclass
class RMUState:
    h: np.ndarray
    c_plus: np.ndarray
    c_minus: np.ndarray


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class GRUState:
    h: np.ndarray


@dataclass
class RMUStepCache:
    s: np.ndarray
    f_plus: np.ndarray
    f_minus: np.ndarray
    winners_plus: np.ndarray  # True where the decayed memory won the max
    winners_minus: np.ndarray
    pre_s: np.ndarray
    pre_f_plus: np.ndarray
    pre_f_minus: np.ndarray


@dataclass
class LSTMStepCache:
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c_tilde: np.ndarray
    tanh_c: np.ndarray


@dataclass
class GRUStepCache:
    r: np.ndarray
    z: np.ndarray
    h_tilde: np.ndarray


@dataclass
class CellTrace:
    """Forward unroll record: ``states[t]`` is the state before input ``xs[t]``."""

    kind: str
    xs: np.ndarray
    states: list
    caches: list

    @property
    def hs(self):
        return np.stack([s.h for s in self.states[1:]])


def zero_state(kind, d_hid, batch_shape=(), dtype=None):
    _check_kind(kind)
    dtype = dtype or default_dtype()
    z = lambda: np.zeros(tuple(batch_shape) + (d_hid,), dtype=dtype)  # noqa: E731
    if kind == "rmu":
        return RMUState(z(), z(), z())
    if kind == "lstm":
        return LSTMState(z(), z())
    return GRUState(z())


def _check_step(params, state, x):
    if np.shape(x)[-1:] != (params.d_in,):
        raise ConfigurationError(f"input has shape {np.shape(x)}, expected (..., {params.d_in})")
    if np.shape(state.h)[-1:] != (params.d_hid,):
        raise ConfigurationError(
            f"state has shape {np.shape(state.h)}, expected (..., {params.d_hid})"
        )


def fuse(params, gates=None):
    """Concatenate per-gate ``(W, U, b)`` along the output axis, in gate order."""
    gates = gates or GATES[params.kind]
    return tuple(np.concatenate([params[f"{p}_{g}"] for g in gates], axis=-1) for p in ("W", "U", "b"))


def _split(a, n):
    return np.split(a, n, axis=-1)


def rmu_step(params, state, x, fused=None):
    """One RMU step. Returns ``(new_state, cache)``.

    ``fused`` is ``fuse(params)``, passed in by callers that step repeatedly.
    """
    _check_step(params, state, x)
    W, U, b = fused or fuse(params)
    pre_s, pre_fp, pre_fm = _split(affine(W, state.h, U, x, b), 3)
    s = np.tanh(pre_s)
    f_plus = sigmoid(pre_fp)
    f_minus = sigmoid(pre_fm)
    c_plus, win_p = elementwise("max", f_plus * state.c_plus, relu(s), return_winners=True)
    c_minus, win_m = elementwise("max", f_minus * state.c_minus, relu(-s), return_winners=True)
    h = np.tanh(c_plus - c_minus)
    cache = RMUStepCache(s, f_plus, f_minus, win_p, win_m, pre_s, pre_fp, pre_fm)
    return RMUState(h, c_plus, c_minus), cache


def lstm_step(params, state, x, fused=None):
    _check_step(params, state, x)
    W, U, b = fused or fuse(params)
    pre_i, pre_f, pre_o, pre_c = _split(affine(W, state.h, U, x, b), 4)
    i, f, o = sigmoid(pre_i), sigmoid(pre_f), sigmoid(pre_o)
    c_tilde = np.tanh(pre_c)
    c = f * state.c + i * c_tilde
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return LSTMState(h, c), LSTMStepCache(i, f, o, c_tilde, tanh_c)


def gru_step(params, state, x, fused=None):
    _check_step(params, state, x)
    W, U, b = fused or fuse(params, ("r", "z"))
    pre_r, pre_z = _split(affine(W, state.h, U, x, b), 2)
    r, z = sigmoid(pre_r), sigmoid(pre_z)
    h_tilde = np.tanh(affine(params["W_h"], r * state.h, params["U_h"], x, params["b_h"]))
    h = z * state.h + (1.0 - z) * h_tilde
    return GRUState(h), GRUStepCache(r, z, h_tilde)


STEP = {"rmu": rmu_step, "lstm": lstm_step, "gru": gru_step}
_FUSED_GATES = {"rmu": GATES["rmu"], "lstm": GATES["lstm"], "gru": ("r", "z")}


def unroll(params, xs, state=None):
    """Run the cell over ``xs`` (shape ``(T, ..., d_in)``) from ``state``, zero by default."""
    xs = np.asarray(xs)
    if xs.ndim < 2 or xs.shape[0] < 1:
        raise ConfigurationError(f"expected inputs of shape (T, ..., d_in) with T >= 1, got {xs.shape}")
    if state is None:
        batch = np.broadcast_shapes(xs.shape[1:-1], np.shape(params[f"b_{GATES[params.kind][0]}"])[:-1])
        state = zero_state(params.kind, params.d_hid, batch, dtype=xs.dtype)
    step = STEP[params.kind]
    fused = fuse(params, _FUSED_GATES[params.kind])
    states, caches = [state], []
    for x in xs:
        state, cache = step(params, state, x, fused)
        states.append(state)
        caches.append(cache)
    return CellTrace(params.kind, xs, states, caches)


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def backward(params, trace, grad_h):
    """Reverse-mode gradients of a scalar loss through an unrolled cell.

    ``grad_h`` is either the loss gradient w.r.t. every ``h_t`` (shape
    ``(T, ..., d_hid)``) or only w.r.t. the final ``h_T`` (shape
    ``(..., d_hid)``). Returns ``(param_grads, input_grads)`` where the
    parameter gradients are summed over batch axes.
    """
    if trace.kind != params.kind:
        raise IntegrityError(f"trace was produced by a {trace.kind} cell, params are {params.kind}")
    T = len(trace.caches)
    if len(trace.states) != T + 1 or trace.xs.shape[0] != T:
        raise IntegrityError("trace is truncated: states, caches and inputs disagree in length")
    if trace.xs.shape[-1] != params.d_in or trace.states[0].h.shape[-1] != params.d_hid:
        raise IntegrityError(
            f"trace dims (d_in={trace.xs.shape[-1]}, d_hid={trace.states[0].h.shape[-1]}) "
            f"do not match params (d_in={params.d_in}, d_hid={params.d_hid})"
        )
    if any(np.ndim(params[n]) != len(s)
           for n, s in param_shapes(params.kind, params.d_in, params.d_hid).items()):
        raise IntegrityError("backward needs a single parameter set, not a stacked one")

    h_shape = trace.states[-1].h.shape
    grad_h = np.asarray(grad_h, dtype=trace.xs.dtype)
    if grad_h.shape == (T,) + h_shape:
        per_step = grad_h
    elif grad_h.shape == h_shape:
        per_step = np.zeros((T,) + h_shape, dtype=grad_h.dtype)
        per_step[-1] = grad_h
    else:
        raise IntegrityError(f"upstream gradient shape {grad_h.shape} does not match h {h_shape}")

    gates = _FUSED_GATES[params.kind]
    W, U, _ = fuse(params, gates)
    run = {"rmu": _rmu_backward, "lstm": _lstm_backward, "gru": _gru_backward}[params.kind]
    # d_pre[t] holds the pre-activation gradients of the fused gates at step t
    d_pre, extra = run(params, trace, per_step, W)
    h_prev = np.stack([s.h for s in trace.states[:-1]])
    dW = _flat(h_prev).T @ _flat(d_pre)
    dU = _flat(trace.xs).T @ _flat(d_pre)
    db = _flat(d_pre).sum(axis=0)
    dxs = d_pre @ U.T
    grads = {}
    for g, w, u, bb in zip(gates, _split(dW, len(gates)), _split(dU, len(gates)), _split(db, len(gates))):
        grads[f"W_{g}"], grads[f"U_{g}"], grads[f"b_{g}"] = w, u, bb
    if extra is not None:
        # GRU candidate: its recurrent input is r * h_prev, not h_prev
        d_pre_h, rh = extra
        grads["W_h"] = _flat(rh).T @ _flat(d_pre_h)
        grads["U_h"] = _flat(trace.xs).T @ _flat(d_pre_h)
        grads["b_h"] = _flat(d_pre_h).sum(axis=0)
        dxs = dxs + d_pre_h @ params["U_h"].T
    return {n: grads[n] for n in params.names}, dxs


def _rmu_backward(params, trace, per_step, W):
    d_pre = np.empty(per_step.shape[:-1] + (3 * params.d_hid,), dtype=per_step.dtype)
    dh_next = np.zeros_like(per_step[0])
    dcp_next = np.zeros_like(dh_next)
    dcm_next = np.zeros_like(dh_next)
    for t in range(len(trace.caches) - 1, -1, -1):
        c = trace.caches[t]
        prev, cur = trace.states[t], trace.states[t + 1]
        dh = per_step[t] + dh_next
        dz = dh * (1.0 - cur.h * cur.h)
        dcp = dcp_next + dz
        dcm = dcm_next - dz
        # max routes to the recorded winner; relu passes only where its input is > 0
        d_decay_p = np.where(c.winners_plus, dcp, 0.0)
        d_decay_m = np.where(c.winners_minus, dcm, 0.0)
        ds = np.where(c.winners_plus | (c.s <= 0), 0.0, dcp)
        ds = ds - np.where(c.winners_minus | (c.s >= 0), 0.0, dcm)
        d_pre[t] = np.concatenate([
            ds * (1.0 - c.s * c.s),
            d_decay_p * prev.c_plus * c.f_plus * (1.0 - c.f_plus),
            d_decay_m * prev.c_minus * c.f_minus * (1.0 - c.f_minus),
        ], axis=-1)
        dcp_next = d_decay_p * c.f_plus
        dcm_next = d_decay_m * c.f_minus
        dh_next = d_pre[t] @ W.T
    return d_pre, None


def _lstm_backward(params, trace, per_step, W):
    d_pre = np.empty(per_step.shape[:-1] + (4 * params.d_hid,), dtype=per_step.dtype)
    dh_next = np.zeros_like(per_step[0])
    dc_next = np.zeros_like(dh_next)
    for t in range(len(trace.caches) - 1, -1, -1):
        c = trace.caches[t]
        prev = trace.states[t]
        dh = per_step[t] + dh_next
        dc = dc_next + dh * c.o * (1.0 - c.tanh_c * c.tanh_c)
        d_pre[t] = np.concatenate([
            dc * c.c_tilde * c.i * (1.0 - c.i),
            dc * prev.c * c.f * (1.0 - c.f),
            dh * c.tanh_c * c.o * (1.0 - c.o),
            dc * c.i * (1.0 - c.c_tilde * c.c_tilde),
        ], axis=-1)
        dc_next = dc * c.f
        dh_next = d_pre[t] @ W.T
    return d_pre, None


def _gru_backward(params, trace, per_step, W):
    d_pre = np.empty(per_step.shape[:-1] + (2 * params.d_hid,), dtype=per_step.dtype)
    d_pre_h = np.empty_like(per_step)
    rh = np.empty_like(per_step)
    W_h = params["W_h"]
    dh_next = np.zeros_like(per_step[0])
    for t in range(len(trace.caches) - 1, -1, -1):
        c = trace.caches[t]
        h_prev = trace.states[t].h
        dh = per_step[t] + dh_next
        d_pre_h[t] = dh * (1.0 - c.z) * (1.0 - c.h_tilde * c.h_tilde)
        rh[t] = c.r * h_prev
        d_rh = d_pre_h[t] @ W_h.T
        d_pre[t] = np.concatenate([
            d_rh * h_prev * c.r * (1.0 - c.r),
            dh * (h_prev - c.h_tilde) * c.z * (1.0 - c.z),
        ], axis=-1)
        dh_next = dh * c.z + d_rh * c.r + d_pre[t] @ W.T
    return d_pre, (d_pre_h, rh)


def init_params(kind, d_in, d_hid, scheme="uniform_scaled", seed=0, dtype=None):
    """Fresh parameters for a cell.

    ``uniform_scaled`` draws every weight from U[-1/sqrt(d_hid), 1/sqrt(d_hid)]
    with zero biases, except forget-gate biases (RMU f+/f-, LSTM f) set to 1.

    ``constant_qoe`` (RMU only, meant for d_hid = 1) sets U_s = -1, every
    other weight to 1, forget biases to 1 and the stimulus bias to 0.
    """
    _check_kind(kind)
    if d_in < 1 or d_hid < 1:
        raise ConfigurationError(f"d_in and d_hid must be >= 1, got {d_in}, {d_hid}")
    dtype = dtype or default_dtype()
    shapes = param_shapes(kind, d_in, d_hid)
    forget_biases = {f"b_{g}" for g in FORGET_GATES[kind]}
    arrays = {}
    if scheme == "uniform_scaled":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d_hid)
        for name in param_names(kind):
            if name.startswith("b_"):
                arrays[name] = np.full(shapes[name], 1.0 if name in forget_biases else 0.0)
            else:
                arrays[name] = rng.uniform(-bound, bound, size=shapes[name])
    elif scheme == "constant_qoe":
        if kind != "rmu":
            raise UnsupportedSchemeError(f"constant_qoe initialisation is defined for rmu only, not {kind}")
        for name in param_names(kind):
            if name.startswith("b_"):
                value = 1.0 if name in forget_biases else 0.0
            else:
                value = -1.0 if name == "U_s" else 1.0
            arrays[name] = np.full(shapes[name], value)
    else:
        raise UnsupportedSchemeError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    return CellParams(kind, d_in, d_hid, {k: v.astype(dtype) for k, v in arrays.items()})


def param_count(kind, n1, n2):
    """Trainable scalars of a cell with ``n1`` inputs and ``n2`` hidden units."""
    _check_kind(kind)
    gates = len(GATES[kind])
    return gates * (n1 * n2 + n2 * n2 + n2)


def memory_estimate(kind, n1, n2):
    """Per-step memory in scalars: inputs, state vectors and weight matrices.

    LSTM counts 6 state vectors, GRU 4 and RMU 6; biases are not counted.
    """
    _check_kind(kind)
    state_vectors = {"lstm": 6, "gru": 4, "rmu": 6}[kind]
    gates = len(GATES[kind])
    return n1 + state_vectors * n2 + gates * (n1 * n2 + n2 * n2)
