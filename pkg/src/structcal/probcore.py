"""Probability and logit transforms with float32-safe clipping.

Logits are always computed in float64, but log-probabilities are clipped to
the log of the smallest normal float32 so that zero probabilities never
produce infinities.
"""

import warnings

import numpy as np

from .exceptions import DimensionMismatch, RenormalizedWarning

#: log(2**-126), the log of the smallest positive normal float32.
CLIP_LO = float(np.log(np.float64(np.finfo(np.float32).tiny)))
#: exp(CLIP_LO), the matching probability floor.
PROB_FLOOR = float(np.finfo(np.float32).tiny)

ROW_SUM_TOL = 1e-6


def check_probs(p, k=None, copy=True):
    """Validate an ``n x k`` probability matrix and return it as float64.

    Rows off the simplex by more than ``1e-6`` are renormalized with a
    :class:`RenormalizedWarning`; negative or non-finite entries raise.
    """
    p = np.array(p, dtype=np.float64, copy=copy)
    if p.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d probability matrix, got shape {p.shape}")
    if p.shape[1] < 2:
        raise DimensionMismatch("probability matrix needs at least 2 classes")
    if k is not None and p.shape[1] != k:
        raise DimensionMismatch(f"expected {k} classes, got {p.shape[1]}")
    if not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite")
    if np.any(p < -ROW_SUM_TOL) or np.any(p > 1 + ROW_SUM_TOL):
        raise ValueError("probabilities must lie in [0, 1]")
    np.clip(p, 0.0, 1.0, out=p)
    sums = p.sum(axis=1)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        if np.any(sums[bad] <= 0):
            raise ValueError("probability rows must have positive mass")
        warnings.warn(
            f"{int(bad.sum())} probability rows renormalized", RenormalizedWarning, stacklevel=2
        )
        p[bad] /= sums[bad, None]
    return p


def check_labels(y, n=None, k=None):
    """Return labels as an int64 vector, checking range and length."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionMismatch(f"labels must be 1-d, got shape {y.shape}")
    if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if n is not None and y.shape[0] != n:
        raise DimensionMismatch(f"{y.shape[0]} labels for {n} prediction rows")
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative")
    if k is not None and y.size and y.max() >= k:
        raise ValueError(f"label {int(y.max())} out of range for {k} classes")
    return y


def softmax_rows(z):
    """Row-wise softmax with max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def center_rows(z):
    """Apply the centering matrix ``I - 11^T/k`` to each row."""
    z = np.asarray(z, dtype=np.float64)
    return z - z.mean(axis=-1, keepdims=True)


def logits_from_probs(p, center=False):
    """Clipped log-probabilities, optionally centered row-wise.

    Centering happens after clipping, so clipped rows are still exactly
    zero-sum. The upper clip is a no-op for valid probabilities but keeps the
    output inside ``[CLIP_LO, -CLIP_LO]`` for any input.
    """
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        z = np.log(p)
    np.clip(z, CLIP_LO, -CLIP_LO, out=z)
    if center:
        z = center_rows(z)
    return z


def binary_logit(p):
    """``log p - log(1 - p)`` via ``log1p``, clipped to ``[CLIP_LO, -CLIP_LO]``."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        z = np.log(p) - np.log1p(-p)
    return np.clip(z, CLIP_LO, -CLIP_LO)


def sigmoid(x):
    """Logistic function, evaluated branch-wise so ``exp`` never overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else out[()]


def log_sigmoid(x):
    """``log(sigmoid(x))`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)
