"""Synthetic Gaussian class-conditional problems with analytic Bayes calibration maps.

Features are drawn as ``X | Y=i ~ N(mu_i, Sigma_i)`` and scored by a fixed
linear classifier: ``softmax(W X)`` in the multiclass case and
``sigmoid(w^T X)`` in the binary case. The logits are Gaussian per class, so
the exact posterior given the classifier output is available in closed form:

* binary: ``P(Y=1 | logit=x) = sigmoid(a x^2 + b x + c)``;
* multiclass: ``P(Y | centered logits=x) = softmax(x^T A x + B x + C)`` built
  from the pseudo-inverses and pseudo-determinants of the (rank ``k-1``)
  centered logit covariances.

Binary specs put the negative class at index 0 and the positive class at
index 1.
"""

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputError, DimensionMismatch
from .probcore import (
    binary_logit,
    center_rows,
    logits_from_probs,
    sigmoid,
    softmax_rows,
)

PSD_TOL = 1e-9
SVD_RCOND = 1e-10


@dataclass
class GaussianMixtureSpec:
    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        k, d = self.means.shape
        if k < 2:
            raise DimensionMismatch("need at least 2 classes")
        if self.priors.shape != (k,):
            raise DimensionMismatch("priors must have one entry per class")
        if np.any(self.priors < 0) or abs(self.priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must lie on the simplex")
        if self.covariances.shape != (k, d, d):
            raise DimensionMismatch(f"covariances must have shape {(k, d, d)}")
        for i, S in enumerate(self.covariances):
            if not np.allclose(S, S.T, atol=1e-12):
                raise ValueError(f"covariance {i} is not symmetric")
            if np.linalg.eigvalsh(S).min() < -PSD_TOL:
                raise ValueError(f"covariance {i} is not positive semidefinite")
        if self.weights.ndim == 1:
            if k != 2 or self.weights.shape != (d,):
                raise DimensionMismatch("a weight vector requires k=2 and length d")
        elif self.weights.shape != (k, d):
            raise DimensionMismatch(f"weights must have shape {(k, d)} or {(d,)}")

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def binary(self):
        return self.weights.ndim == 1

    def to_dict(self):
        return {
            "name": self.name,
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            priors=d["priors"],
            means=d["means"],
            covariances=d["covariances"],
            weights=d["weights"],
            name=d.get("name", ""),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _factor(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(S)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample(spec, n, seed):
    """Draw ``n`` labelled samples and score them with the mixture's linear classifier.

    Returns ``(probs, labels, logits)`` where ``logits`` is ``n x k`` in the
    multiclass case and a length-``n`` vector in the binary case.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    y = rng.choice(spec.k, size=n, p=spec.priors)
    noise = rng.standard_normal((n, spec.d))
    X = np.empty((n, spec.d))
    for i in range(spec.k):
        idx = y == i
        X[idx] = spec.means[i] + noise[idx] @ _factor(spec.covariances[i]).T
    if spec.binary:
        z = X @ spec.weights
        s = sigmoid(z)
        return np.column_stack([1.0 - s, s]), y, z
    z = X @ spec.weights.T
    return softmax_rows(z), y, z


# --------------------------------------------------------------------------
# binary oracle
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryOracle:
    a: float
    b: float
    c: float
    m_pos: float
    m_neg: float
    var_pos: float
    var_neg: float
    pi_pos: float
    pi_neg: float

    def posterior(self, x):
        """``P(Y=1 | logit=x)``."""
        x = np.asarray(x, dtype=np.float64)
        return sigmoid(self.a * x * x + self.b * x + self.c)

    def calibrate(self, p):
        s = self.posterior(binary_logit(np.asarray(p)[:, 1]))
        return np.column_stack([1.0 - s, s])

    def to_dict(self):
        return dict(self.__dict__)


def binary_oracle(spec):
    if not spec.binary:
        raise ValueError("binary oracle needs a spec with a weight vector")
    w = spec.weights
    m_neg, m_pos = float(spec.means[0] @ w), float(spec.means[1] @ w)
    var_neg = float(w @ spec.covariances[0] @ w)
    var_pos = float(w @ spec.covariances[1] @ w)
    if var_neg <= 0 or var_pos <= 0:
        raise DegenerateInputError("projected class variances must be positive")
    pi_neg, pi_pos = float(spec.priors[0]), float(spec.priors[1])
    a = 1.0 / (2.0 * var_neg) - 1.0 / (2.0 * var_pos)
    b = m_pos / var_pos - m_neg / var_neg
    c = (np.log(pi_pos / pi_neg) + 0.5 * np.log(var_neg / var_pos)
         + m_neg ** 2 / (2.0 * var_neg) - m_pos ** 2 / (2.0 * var_pos))
    return BinaryOracle(a, b, float(c), m_pos, m_neg, var_pos, var_neg, pi_pos, pi_neg)


# --------------------------------------------------------------------------
# multiclass oracle
# --------------------------------------------------------------------------


def centering_matrix(k):
    return np.eye(k) - np.full((k, k), 1.0 / k)


def pinv_logpdet(S, rcond=SVD_RCOND):
    """Moore-Penrose pseudo-inverse, log pseudo-determinant and numerical rank."""
    U, s, Vt = np.linalg.svd(S)
    if s.size == 0 or s[0] <= 0:
        return np.zeros_like(S.T), 0.0, 0
    keep = s > rcond * s[0]
    inv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return inv, float(np.log(s[keep]).sum()), int(keep.sum())


@dataclass(frozen=True)
class MulticlassOracle:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    pinvs: np.ndarray
    log_pdets: np.ndarray
    ranks: np.ndarray

    @property
    def k(self):
        return self.B.shape[0]

    @property
    def quadratic_term_constant(self):
        """True when all classes share one quadratic form, so it cancels in the softmax."""
        return bool(all(np.allclose(P, self.pinvs[0], rtol=1e-8, atol=1e-10) for P in self.pinvs))

    def scores(self, x):
        """``x^T A x + B x + C`` for rows of centered logits."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        quad = np.einsum("nj,ijl,nl->ni", x, self.A, x)
        return quad + x @ self.B.T + self.C

    def posterior(self, x):
        """Class posterior from centered logits."""
        return softmax_rows(self.scores(x))

    def posterior_from_logits(self, z):
        return self.posterior(center_rows(z))

    def calibrate(self, p):
        return self.posterior(logits_from_probs(p, center=True))

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "ranks": self.ranks.tolist(),
            "log_pseudo_determinants": self.log_pdets.tolist(),
            "quadratic_term_constant": self.quadratic_term_constant,
        }


def multiclass_oracle(spec):
    """Closed-form posterior over centered logits ``C_k W X``.

    Raises :class:`DegenerateInputError` when a centered class covariance is
    numerically zero.
    """
    if spec.binary:
        raise ValueError("multiclass oracle needs a k x d weight matrix")
    k = spec.k
    Ck = centering_matrix(k)
    CW = Ck @ spec.weights
    means = spec.means @ CW.T
    covs = np.einsum("ab,ibc,dc->iad", CW, spec.covariances, CW)
    covs = 0.5 * (covs + covs.transpose(0, 2, 1))
    pinvs = np.empty_like(covs)
    log_pdets = np.empty(k)
    ranks = np.empty(k, dtype=np.int64)
    for i in range(k):
        pinvs[i], log_pdets[i], ranks[i] = pinv_logpdet(covs[i])
        if ranks[i] == 0:
            raise DegenerateInputError(f"centered logit covariance of class {i} has rank 0")
    A = -0.5 * pinvs
    B = np.einsum("ij,ijl->il", means, pinvs)
    with np.errstate(divide="ignore"):
        log_pi = np.log(spec.priors)
    C = -0.5 * np.einsum("ij,ij->i", B, means) + log_pi - 0.5 * log_pdets
    return MulticlassOracle(A, B, C, means, covs, pinvs, log_pdets, ranks)


def oracle(spec):
    return binary_oracle(spec) if spec.binary else multiclass_oracle(spec)


def _point_mass_posterior(spec, z):
    """Posterior when every class is a point mass in logit space."""
    if spec.binary:
        centers = spec.means @ spec.weights
        dist = np.abs(np.asarray(z)[:, None] - centers[None, :])
    else:
        CW = centering_matrix(spec.k) @ spec.weights
        centers = spec.means @ CW.T
        dist = np.linalg.norm(center_rows(z)[:, None, :] - centers[None], axis=2)
    scale = 1e-9 * max(1.0, float(np.abs(centers).max()))
    hit = (dist <= scale) * spec.priors
    return hit / hit.sum(axis=1, keepdims=True)


def oracle_posterior(spec, z, orc=None):
    """Exact class posterior for raw classifier logits ``z`` (``n x k`` probabilities)."""
    if orc is None:
        orc = oracle(spec)
    if spec.binary:
        s = orc.posterior(z)
        return np.column_stack([1.0 - s, s])
    return orc.posterior_from_logits(z)


def bayes_logloss(spec, n_mc=100_000, seed=0):
    """Monte-Carlo logloss of the exact posterior on fresh samples.

    Returns ``(mean, standard_error)``.
    """
    if n_mc < 10_000:
        raise ValueError("n_mc must be at least 1e4")
    _, y, z = sample(spec, n_mc, seed)
    try:
        post = oracle_posterior(spec, z)
    except DegenerateInputError:
        if not np.allclose(spec.covariances, 0.0):
            raise
        post = _point_mass_posterior(spec, z)
    picked = post[np.arange(n_mc), y]
    with np.errstate(divide="ignore"):
        losses = -np.log(np.maximum(picked, np.finfo(np.float64).tiny))
    return float(losses.mean()), float(losses.std(ddof=1) / np.sqrt(n_mc))


def binned_reliability(p, y, n_bins=20):
    """Equal-mass reliability table on the top-class probability.

    Returns ``(max_abs_deviation, confidences, accuracies)`` with one entry
    per bin.
    """
    p = np.asarray(p)
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == np.asarray(y)).astype(np.float64)
    order = np.argsort(conf, kind="stable")
    bins = np.array_split(order, n_bins)
    confs = np.array([conf[b].mean() for b in bins])
    accs = np.array([correct[b].mean() for b in bins])
    return float(np.abs(confs - accs).max()), confs, accs


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------


def _binary_unequal_variance():
    return GaussianMixtureSpec(
        priors=[0.5, 0.5],
        means=[[-1.0], [1.0]],
        covariances=[[[4.0]], [[1.0]]],
        weights=[1.0],
        name="binary-unequal-variance",
    )


def _multiclass_equal_cov():
    cov = np.array([[1.0, 0.3, 0.0], [0.3, 1.5, -0.2], [0.0, -0.2, 0.8]])
    W = np.array([[2.0, -0.5, 0.3], [-0.4, 1.8, 0.5], [0.2, 0.6, -1.6]])
    return GaussianMixtureSpec(
        priors=[0.5, 0.3, 0.2],
        means=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.3, -1.0]],
        covariances=np.stack([cov] * 3),
        weights=W,
        name="multiclass-equal-cov",
    )


def _multiclass_unequal_cov():
    covs = np.stack([
        np.diag([0.5, 1.0, 1.0]),
        np.array([[2.0, 0.4, 0.0], [0.4, 0.7, 0.1], [0.0, 0.1, 1.2]]),
        np.diag([1.0, 1.0, 3.0]),
    ])
    W = np.array([[2.0, -0.5, 0.3], [-0.4, 1.8, 0.5], [0.2, 0.6, -1.6]])
    return GaussianMixtureSpec(
        priors=[0.4, 0.35, 0.25],
        means=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.3, -1.0]],
        covariances=covs,
        weights=W,
        name="multiclass-unequal-cov",
    )


def _many_class_small_n():
    # Shared covariance, uniform priors and equal Mahalanobis norms make the
    # Bayes logits linear without intercepts; the classifier is 3x those
    # logits, so temperature scaling is well specified and any extra
    # parameters can only add variance.
    k = d = 10
    rng = np.random.default_rng(20240611)
    A = rng.standard_normal((d, d)) / np.sqrt(d)
    cov = A @ A.T + 0.5 * np.eye(d)
    prec = np.linalg.inv(cov)
    means = rng.standard_normal((k, d))
    means *= 2.0 / np.sqrt(np.einsum("ij,jl,il->i", means, prec, means))[:, None]
    return GaussianMixtureSpec(
        priors=np.full(k, 1.0 / k),
        means=means,
        covariances=np.stack([cov] * k),
        weights=3.0 * means @ prec,
        name="many-class-small-n",
    )


PRESETS = {
    "binary-unequal-variance": (_binary_unequal_variance, dict(n_train=10_000, n_cal=500_000, n_test=1_000_000)),
    "multiclass-equal-cov": (_multiclass_equal_cov, dict(n_train=10_000, n_cal=10_000, n_test=100_000)),
    "multiclass-unequal-cov": (_multiclass_unequal_cov, dict(n_train=10_000, n_cal=10_000, n_test=100_000)),
    "many-class-small-n": (_many_class_small_n, dict(n_train=2_000, n_cal=200, n_test=10_000)),
}


def preset(name):
    """Return the named :class:`GaussianMixtureSpec`."""
    try:
        return PRESETS[name][0]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def preset_sizes(name):
    return dict(PRESETS[name][1])
