"""Assessment network: input projection -> dropout -> recurrent cell -> linear head.

The head has no output nonlinearity, so targets are regressed on their
native scale. In ``final_step`` mode only ``h_T`` is mapped to a score; in
``per_step`` mode every ``h_t`` is.
"""

from dataclasses import dataclass, field

import numpy as np

from . import cells
from .errors import ConfigurationError, InputError, IntegrityError
from .losses import mse_loss
from .mathops import default_dtype, matvec

OUTPUT_MODES = ("final_step", "per_step")
INPUT_ACTIVATIONS = ("identity", "tanh")
CELL_PREFIX = "cell."


@dataclass
class AssessmentNet:
    cell_kind: str
    d_feat: int
    d_proj: int
    d_hid: int
    params: dict = field(default_factory=dict)
    dropout_rate: float = 0.5
    output_mode: str = "final_step"
    input_activation: str = "identity"

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.output_mode not in OUTPUT_MODES:
            raise ConfigurationError(f"output_mode must be one of {OUTPUT_MODES}, got {self.output_mode!r}")
        if self.input_activation not in INPUT_ACTIVATIONS:
            raise ConfigurationError(
                f"input_activation must be one of {INPUT_ACTIVATIONS}, got {self.input_activation!r}"
            )
        expected = net_param_shapes(self.cell_kind, self.d_feat, self.d_proj, self.d_hid)
        if set(self.params) != set(expected):
            raise ConfigurationError(f"network parameters must be {sorted(expected)}, got {sorted(self.params)}")
        for name, shape in expected.items():
            got = np.shape(self.params[name])
            if got[len(got) - len(shape):] != shape:
                raise ConfigurationError(f"{name} has shape {got}, expected (..., {shape})")

    @property
    def cell(self):
        """A :class:`cells.CellParams` view sharing this network's arrays."""
        arrays = {k[len(CELL_PREFIX):]: v for k, v in self.params.items() if k.startswith(CELL_PREFIX)}
        return cells.CellParams(self.cell_kind, self.d_proj, self.d_hid, arrays)

    @property
    def cell_param_count(self):
        return self.cell.size

    def with_params(self, params):
        return AssessmentNet(self.cell_kind, self.d_feat, self.d_proj, self.d_hid, params,
                             self.dropout_rate, self.output_mode, self.input_activation)

    def copy(self):
        return self.with_params({k: np.array(v, copy=True) for k, v in self.params.items()})


def net_param_shapes(cell_kind, d_feat, d_proj, d_hid):
    shapes = {"proj.W": (d_feat, d_proj), "proj.b": (d_proj,)}
    for name, shape in cells.param_shapes(cell_kind, d_proj, d_hid).items():
        shapes[CELL_PREFIX + name] = shape
    shapes["head.W"] = (d_hid, 1)
    shapes["head.b"] = (1,)
    return shapes


def build_net(cell_kind, d_feat, d_hid, d_proj=None, init="uniform_scaled", seed=0,
              dropout_rate=0.5, output_mode="final_step", input_activation="identity"):
    """Construct a freshly initialised network.

    With ``uniform_scaled`` the projection and head weights are drawn from
    U[-1/sqrt(fan_in), 1/sqrt(fan_in)]. With ``constant_qoe`` they are all
    1.0 (biases 0), matching the constant cell initialisation.
    """
    d_proj = d_hid if d_proj is None else d_proj
    if min(d_feat, d_proj, d_hid) < 1:
        raise ConfigurationError(f"all widths must be >= 1, got d_feat={d_feat}, d_proj={d_proj}, d_hid={d_hid}")
    dtype = default_dtype()
    rng = np.random.default_rng(seed)
    cell_seed = int(rng.integers(2**32))
    if init == "constant_qoe":
        proj_W = np.ones((d_feat, d_proj))
        head_W = np.ones((d_hid, 1))
    else:
        proj_W = rng.uniform(-1, 1, size=(d_feat, d_proj)) / np.sqrt(d_feat)
        head_W = rng.uniform(-1, 1, size=(d_hid, 1)) / np.sqrt(d_hid)
    cell = cells.init_params(cell_kind, d_proj, d_hid, init, seed=cell_seed, dtype=dtype)
    params = {"proj.W": proj_W.astype(dtype), "proj.b": np.zeros(d_proj, dtype)}
    params.update({CELL_PREFIX + k: v for k, v in cell.arrays.items()})
    params["head.W"] = head_W.astype(dtype)
    params["head.b"] = np.zeros(1, dtype)
    return AssessmentNet(cell_kind, d_feat, d_proj, d_hid, params, dropout_rate, output_mode, input_activation)


@dataclass
class ForwardTrace:
    """Everything net_backward needs; time is the leading axis of every array."""

    xs: np.ndarray
    proj: np.ndarray
    masks: np.ndarray  # None when no dropout was applied
    cell_trace: cells.CellTrace
    outputs: np.ndarray
    output_mode: str

    def __len__(self):
        return self.xs.shape[0]


@dataclass
class NetGradients:
    params: dict
    inputs: np.ndarray
    loss: float = None


def dropout_masks(shape, rate, rng):
    """Inverted-dropout masks: 0 with probability ``rate``, else ``1/(1-rate)``."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward_arrays(net, xs, masks=None, dtype=None):
    """Forward pass on time-major features ``xs`` of shape ``(T, ..., d_feat)``.

    Parameters of ``net`` may be stacked along extra leading axes; they
    broadcast against the batch axes of ``xs``.
    """
    xs = np.asarray(xs, dtype=dtype or default_dtype())
    if xs.ndim < 2 or xs.shape[0] == 0:
        raise InputError("cannot run the network on an empty sequence")
    if xs.shape[-1] != net.d_feat:
        raise ConfigurationError(f"features have dimension {xs.shape[-1]}, network expects {net.d_feat}")
    W, b = net.params["proj.W"], net.params["proj.b"]
    proj = np.stack([matvec(x, W) + b for x in xs])
    if net.input_activation == "tanh":
        proj = np.tanh(proj)
    cell_in = proj if masks is None else proj * masks
    trace = cells.unroll(net.cell, cell_in)
    hW, hb = net.params["head.W"], net.params["head.b"]
    outputs = np.stack([(matvec(s.h, hW) + hb)[..., 0] for s in trace.states[1:]])
    ftrace = ForwardTrace(xs, proj, masks, trace, outputs, net.output_mode)
    pred = outputs if net.output_mode == "per_step" else outputs[-1]
    return pred, ftrace


def _as_features(seq):
    return seq.features if hasattr(seq, "features") else np.asarray(seq)


def net_forward(net, seq, mode="eval", seed=None, rng=None):
    """Predict for one sequence (a FeatureSequence or a ``(T, d_feat)`` array).

    In ``train`` mode dropout masks are drawn from ``rng`` (or a generator
    seeded with ``seed``) and recorded in the trace.
    """
    xs = np.asarray(_as_features(seq))
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise InputError(f"expected a non-empty (T, d_feat) sequence, got shape {xs.shape}")
    masks = None
    if mode == "train":
        if net.dropout_rate > 0:
            rng = rng if rng is not None else np.random.default_rng(seed)
            masks = dropout_masks((xs.shape[0], net.d_proj), net.dropout_rate, rng).astype(default_dtype())
    elif mode != "eval":
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    return forward_arrays(net, xs, masks)


def net_backward(net, trace, targets=None, grad_output=None):
    """Gradients of the MSE against ``targets`` (or of an arbitrary upstream ``grad_output``).

    ``targets`` has the shape of the prediction: per batch element in
    ``final_step`` mode, per step and batch element in ``per_step`` mode.
    """
    if trace.output_mode != net.output_mode:
        raise IntegrityError(f"trace was produced in {trace.output_mode} mode, network is {net.output_mode}")
    if trace.xs.shape[-1] != net.d_feat or trace.proj.shape[-1] != net.d_proj:
        raise IntegrityError("trace dimensions do not match the network")
    pred = trace.outputs if net.output_mode == "per_step" else trace.outputs[-1]
    loss = None
    if grad_output is None:
        if targets is None:
            raise ConfigurationError("net_backward needs targets or grad_output")
        targets = np.asarray(targets, dtype=float)
        if targets.shape != pred.shape:
            raise IntegrityError(f"targets have shape {targets.shape}, predictions {pred.shape}")
        loss, grad_output = mse_loss(pred, targets)
    grad_output = np.asarray(grad_output, dtype=trace.xs.dtype)
    if grad_output.shape == pred.shape and net.output_mode == "final_step":
        d_out = np.zeros_like(trace.outputs)
        d_out[-1] = grad_output
    elif grad_output.shape == trace.outputs.shape:
        d_out = grad_output
    else:
        raise IntegrityError(f"upstream gradient shape {grad_output.shape} does not match outputs")

    p = net.params
    grads = {}
    hs = trace.cell_trace.hs
    grads["head.W"] = (hs.reshape(-1, net.d_hid).T @ d_out.reshape(-1))[:, None]
    grads["head.b"] = np.array([d_out.sum()], dtype=d_out.dtype)
    dh = d_out[..., None] * p["head.W"][:, 0]
    cell_grads, d_cell_in = cells.backward(net.cell, trace.cell_trace, dh)
    grads.update({CELL_PREFIX + k: v for k, v in cell_grads.items()})
    d_proj = d_cell_in if trace.masks is None else d_cell_in * trace.masks
    if net.input_activation == "tanh":
        d_proj = d_proj * (1.0 - trace.proj * trace.proj)
    grads["proj.W"] = trace.xs.reshape(-1, net.d_feat).T @ d_proj.reshape(-1, net.d_proj)
    grads["proj.b"] = d_proj.reshape(-1, net.d_proj).sum(axis=0)
    d_inputs = matvec(d_proj, p["proj.W"].T)
    return NetGradients({k: grads[k] for k in p}, d_inputs, loss)
