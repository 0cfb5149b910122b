"""PLCC, SROCC, KROCC and RMSE between predicted and ground-truth scores."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigurationError, InputError, MetricsUndefinedError


@dataclass(frozen=True)
class MetricReport:
    plcc: float
    srocc: float
    krocc: float
    rmse: float

    def as_dict(self):
        return asdict(self)


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ConfigurationError(f"pred has {pred.size} values, truth has {truth.size}")
    if pred.size < 2:
        raise InputError("correlations need at least two samples")
    for side, v in (("truth", truth), ("pred", pred)):
        if not np.all(np.isfinite(v)):
            raise InputError(f"{side} contains non-finite values")
        if np.all(v == v[0]):
            raise MetricsUndefinedError(f"{side} is constant; correlation is undefined")
    return pred, truth


def pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    r = float(np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)))
    return min(1.0, max(-1.0, r))


def average_ranks(v):
    """1-based ranks; tied values share the mean of their positions."""
    return rankdata(v, method="average")


def kendall_tau_b(a, b):
    """Tie-corrected Kendall tau over all pairs, O(n^2) memory."""
    sa = np.sign(a[:, None] - a[None, :])
    sb = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(a.size, k=1)
    sa, sb = sa[iu], sb[iu]
    numer = float(np.sum(sa * sb))
    denom = np.sqrt(float(np.count_nonzero(sa)) * float(np.count_nonzero(sb)))
    return numer / denom


def compute_metrics(pred, truth):
    pred, truth = _check_pair(pred, truth)
    diff = pred - truth
    return MetricReport(
        plcc=pearson(pred, truth),
        srocc=pearson(average_ranks(pred), average_ranks(truth)),
        krocc=kendall_tau_b(pred, truth),
        rmse=float(np.sqrt(np.mean(diff * diff))),
    )
