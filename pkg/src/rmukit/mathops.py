"""Dense linear-algebra and activation primitives with derivatives.

Vectors are numpy arrays whose last axis is the feature axis. Any leading
axes are batch axes and broadcast between operands, so the same code runs
one sequence, a mini-batch of sequences, or a stack of perturbed parameter
sets (used by the finite-difference checker).

Matrices use the row-vector convention: a matrix of shape ``(n_in, n_out)``
maps a vector ``v`` of length ``n_in`` to ``v @ M``.
"""

import os

import numpy as np

from .errors import ConfigurationError

PRECISION_ENV = "RMUKIT_PRECISION"
_DTYPES = {"f64": np.float64, "f32": np.float32}

ACTIVATIONS = ("tanh", "sigmoid", "relu")


def default_dtype():
    """Arithmetic width selected by ``RMUKIT_PRECISION`` (``f64`` unless set to ``f32``)."""
    name = os.environ.get(PRECISION_ENV, "f64").strip().lower() or "f64"
    try:
        return _DTYPES[name]
    except KeyError:
        raise ConfigurationError(
            f"{PRECISION_ENV} must be one of {sorted(_DTYPES)}, got {name!r}"
        ) from None


def matvec(v, M):
    """``v @ M`` with leading batch axes broadcast between ``v`` and ``M``."""
    if M.ndim == 2:
        return v @ M
    return np.matmul(v[..., None, :], M)[..., 0, :]


def affine(W, a, U, b_vec, bias):
    """Return ``a @ W + b_vec @ U + bias``.

    This is the shared pre-activation of every gate: ``W`` acts on the
    previous hidden state and ``U`` on the current input.
    """
    W, a, U, b_vec, bias = (np.asarray(o) for o in (W, a, U, b_vec, bias))
    for name, M, v in (("W", W, a), ("U", U, b_vec)):
        if M.ndim < 2 or v.ndim < 1 or M.shape[-2] != v.shape[-1]:
            raise ConfigurationError(
                f"{name} with shape {M.shape} cannot map a vector of shape {v.shape}"
            )
    if W.shape[-1] != U.shape[-1] or bias.shape[-1] != W.shape[-1]:
        raise ConfigurationError(
            f"output widths disagree: W -> {W.shape[-1]}, U -> {U.shape[-1]}, "
            f"bias has {bias.shape[-1]}"
        )
    return matvec(a, W) + matvec(b_vec, U) + bias


def sigmoid(v):
    # logaddexp keeps both tails finite and accurate
    return np.exp(-np.logaddexp(0.0, -np.asarray(v)))


def relu(v):
    return np.maximum(v, 0.0)


def activation(kind, v):
    v = np.asarray(v)
    if kind == "tanh":
        return np.tanh(v)
    if kind == "sigmoid":
        return sigmoid(v)
    if kind == "relu":
        return relu(v)
    raise ConfigurationError(f"unknown activation {kind!r}")


def activation_grad(kind, v):
    """Derivative of ``activation(kind, .)`` evaluated at ``v``.

    The relu derivative at exactly zero is 0.
    """
    v = np.asarray(v)
    if kind == "tanh":
        t = np.tanh(v)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = sigmoid(v)
        return s * (1.0 - s)
    if kind == "relu":
        return (v > 0).astype(np.result_type(v, np.float32))
    raise ConfigurationError(f"unknown activation {kind!r}")


def elementwise(op, a, b, return_winners=False):
    """Elementwise ``mul``, ``sub`` or ``max`` of two equal-length vectors.

    For ``max`` with ``return_winners=True`` a boolean array is returned as
    well, True where ``a`` won. Exact ties go to ``a``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise ConfigurationError(f"length mismatch: {a.shape} vs {b.shape}")
    if op == "mul":
        return a * b
    if op == "sub":
        return a - b
    if op == "max":
        a_won = a >= b
        out = np.where(a_won, a, b)
        return (out, a_won) if return_winners else out
    raise ConfigurationError(f"unknown elementwise op {op!r}")
