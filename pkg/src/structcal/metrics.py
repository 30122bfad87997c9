"""Proper scoring rules and relative-improvement aggregation."""

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DimensionMismatch
from .probcore import PROB_FLOOR, check_labels


@dataclass(frozen=True)
class EvalReport:
    logloss: float
    brier: float
    n: int
    per_sample_logloss_clip: float = PROB_FLOOR

    def to_dict(self):
        return asdict(self)


def _check(p, y):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionMismatch("probabilities must be an n x k matrix")
    y = np.asarray(y)
    if y.shape != (p.shape[0],):
        raise DimensionMismatch(f"{y.shape[0] if y.ndim else 0} labels for {p.shape[0]} rows")
    return p, check_labels(y, k=p.shape[1])


def logloss(p, y):
    """Mean negative log-probability of the true class, floored at ``PROB_FLOOR``."""
    p, y = _check(p, y)
    picked = np.maximum(p[np.arange(len(y)), y], PROB_FLOOR)
    return float(-np.log(picked).mean())


def brier(p, y):
    """Mean squared distance to the one-hot label, summed over all ``k`` classes."""
    p, y = _check(p, y)
    d = p.copy()
    d[np.arange(len(y)), y] -= 1.0
    return float(np.einsum("ij,ij->i", d, d).mean())


def evaluate(p, y):
    return EvalReport(logloss=logloss(p, y), brier=brier(p, y), n=int(len(y)))


def relative_improvement(before, after):
    """``(after - before) / before`` clipped to ``[-1, 1]``; negative is better."""
    if not before > 0:
        raise ValueError("before must be positive")
    return float(np.clip((after - before) / before, -1.0, 1.0))
