import numpy as np

from .errors import ConfigurationError, InputError


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.size == 0:
        raise InputError("mse_loss needs at least one element")
    if pred.shape != target.shape:
        raise ConfigurationError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n
