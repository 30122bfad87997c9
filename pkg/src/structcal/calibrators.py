"""Logistic recalibration maps: temperature, binary polynomial and structured scaling.

Structured vector/matrix scaling (SVS/SMS) applies the softmax to

    (alpha I + diag(v) + (11^T - I) * M) x + b

on (temperature-rescaled) log-probabilities ``x``, and penalizes ``v``, the
off-diagonal of ``M`` and ``b`` as separate groups. Unregularized vector and
matrix scaling (VS/MS) are the same problems with every penalty set to zero.
"""

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .exceptions import DegenerateInputError, DimensionMismatch, SeparableDataWarning
from .penalties import Group, PenaltySpec, effective_weights
from .probcore import (
    binary_logit,
    check_labels,
    check_probs,
    log_sigmoid,
    logits_from_probs,
    sigmoid,
    softmax_rows,
)
from .saga import QuadraticLogistic, SolverConfig, StructuredSoftmax, solve


class Method(str, Enum):
    TS = "ts"
    BINARY_LINEAR = "binary-linear"
    BINARY_AFFINE = "binary-affine"
    BINARY_QUADRATIC = "binary-quadratic"
    VS = "vs"
    MS = "ms"
    SVS = "svs"
    SMS = "sms"

    @property
    def is_binary(self):
        return self in (Method.BINARY_LINEAR, Method.BINARY_AFFINE, Method.BINARY_QUADRATIC)

    @property
    def is_structured(self):
        return self in (Method.VS, Method.MS, Method.SVS, Method.SMS)


BINARY_ORDERS = {
    "linear": Method.BINARY_LINEAR,
    "affine": Method.BINARY_AFFINE,
    "quadratic": Method.BINARY_QUADRATIC,
}
_BINARY_BLOCKS = {
    Method.BINARY_LINEAR: ("alpha",),
    Method.BINARY_AFFINE: ("alpha", "beta"),
    Method.BINARY_QUADRATIC: ("gamma", "alpha", "beta"),
}

SEPARABLE_NORM_CAP = 1e4


@dataclass(frozen=True)
class FitOptions:
    """Options for :func:`fit`.

    ``binary_penalty`` switches binary fits from unregularized Newton to
    SAGA with the given penalty on ``beta`` (``lambda_b``) and ``gamma``
    (``lambda_M``).
    """

    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    preprocess_ts: bool = True
    center_logits: bool = False
    laplace: bool = True
    binary_penalty: PenaltySpec = None

    def to_dict(self):
        return {
            "penalty": self.penalty.to_dict(),
            "solver": self.solver.to_dict(),
            "preprocess_ts": self.preprocess_ts,
            "center_logits": self.center_logits,
            "laplace": self.laplace,
            "binary_penalty": None if self.binary_penalty is None else self.binary_penalty.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["penalty"] = PenaltySpec.from_dict(d["penalty"])
        d["solver"] = SolverConfig.from_dict(d["solver"])
        if d.get("binary_penalty") is not None:
            d["binary_penalty"] = PenaltySpec.from_dict(d["binary_penalty"])
        return cls(**d)


@dataclass
class CalibratorParams:
    """Fitted parameters of one calibrator.

    ``None`` blocks are structural zeros. ``preprocess_temperature`` divides
    the logits before the fitted map is applied, so ``apply`` needs only the
    raw probabilities.
    """

    method: Method
    k: int
    alpha: float = None
    v: np.ndarray = None
    M: np.ndarray = None
    b: np.ndarray = None
    gamma_beta: tuple = None
    preprocess_temperature: float = 1.0
    center_logits: bool = False
    fit_options: dict = None
    fit_info: dict = None

    def __post_init__(self):
        self.method = Method(self.method)
        for name in ("v", "b"):
            if getattr(self, name) is not None:
                setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.M is not None:
            self.M = np.asarray(self.M, dtype=np.float64)
        if self.gamma_beta is not None:
            self.gamma_beta = tuple(float(t) for t in self.gamma_beta)
        if not self.preprocess_temperature > 0:
            raise ValueError("preprocess_temperature must be positive")

    def weight_matrix(self):
        """Effective ``k x k`` matrix applied to the rescaled logits."""
        k = self.k
        W = np.zeros((k, k))
        if self.alpha is not None:
            W += self.alpha * np.eye(k)
        if self.v is not None:
            W += np.diag(self.v)
        if self.M is not None:
            W += self.M if self.method is Method.MS else self.M * (1.0 - np.eye(k))
        return W

    def to_dict(self):
        out = {"method": self.method.value, "k": int(self.k),
               "preprocess_temperature": float(self.preprocess_temperature),
               "center_logits": bool(self.center_logits)}
        if self.alpha is not None:
            out["alpha"] = float(self.alpha)
        for name in ("v", "M", "b"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val.tolist()
        if self.gamma_beta is not None:
            out["gamma_beta"] = list(self.gamma_beta)
        if self.fit_options is not None:
            out["fit_options"] = self.fit_options
        if self.fit_info is not None:
            out["fit_info"] = self.fit_info
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        keys = ("method", "k", "alpha", "v", "M", "b", "gamma_beta",
                "preprocess_temperature", "center_logits", "fit_options", "fit_info")
        return cls(**{key: d[key] for key in keys if key in d})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# temperature scaling
# --------------------------------------------------------------------------


def laplace_smooth(p, n):
    """Mix each row with the uniform distribution: ``(n p + 1/k) / (n + 1)``."""
    k = p.shape[1]
    return (p * n + 1.0 / k) / (n + 1.0)


def _onehot(y, k):
    T = np.zeros((len(y), k))
    T[np.arange(len(y)), y] = 1.0
    return T


def _ts_derivatives(alpha, u, T):
    q = softmax_rows(alpha * u)
    Eu = np.einsum("ij,ij->i", q, u)
    d = float(np.mean(Eu - np.einsum("ij,ij->i", T, u)))
    h = float(np.mean(np.einsum("ij,ij->i", q, u * u) - Eu * Eu))
    return d, h


def temperature_alpha(p, y, laplace=True, tol=1e-10, bound=1e6):
    """Minimize the logloss of ``softmax(alpha * log p)`` over ``alpha``.

    With ``laplace`` both the probabilities and the one-hot targets are mixed
    with the uniform distribution at weight ``1/(n+1)``; the smoothed targets
    keep the optimum finite even when every prediction is correct.
    """
    n, k = p.shape
    if laplace:
        u = np.log(laplace_smooth(p, n))
        T = laplace_smooth(_onehot(y, k), n)
    else:
        u = logits_from_probs(p)
        T = _onehot(y, k)
    if np.allclose(u, u[:, :1], rtol=0, atol=1e-12):
        return 1.0  # every row is uniform: any alpha is optimal
    if not laplace:
        # label is the strict argmax (argmin) of every row: the loss decreases
        # without bound as alpha grows (shrinks)
        uy = u[np.arange(n), y][:, None]
        rest = np.where(_onehot(y, k) > 0, np.nan, u)
        if np.all(uy[:, 0] > np.nanmax(rest, axis=1)) or np.all(uy[:, 0] < np.nanmin(rest, axis=1)):
            raise DegenerateInputError("labels are perfectly ranked; temperature optimum is unbounded")
    d0, _ = _ts_derivatives(0.0, u, T)
    if d0 == 0:
        return 0.0
    # bracket the root of the (nondecreasing) derivative
    if d0 < 0:
        lo, hi = 0.0, 1.0
        while _ts_derivatives(hi, u, T)[0] < 0:
            lo, hi = hi, 2.0 * hi
            if hi > bound:
                raise DegenerateInputError("temperature scaling optimum is unbounded")
    else:
        lo, hi = -1.0, 0.0
        while _ts_derivatives(lo, u, T)[0] > 0:
            lo, hi = 2.0 * lo, lo
            if lo < -bound:
                raise DegenerateInputError("temperature scaling optimum is unbounded")
    alpha = 1.0 if lo <= 1.0 <= hi else 0.5 * (lo + hi)
    for _ in range(200):
        d, h = _ts_derivatives(alpha, u, T)
        if d > 0:
            hi = alpha
        elif d < 0:
            lo = alpha
        else:
            break
        cand = alpha - d / h if h > 0 else np.nan
        if not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        done = abs(cand - alpha) <= tol * max(1.0, abs(alpha))
        alpha = cand
        if done:
            break
    return float(alpha)


def fit_temperature(p, y, laplace=True):
    p = check_probs(p)
    y = check_labels(y, n=p.shape[0], k=p.shape[1])
    if p.shape[0] < 1:
        raise ValueError("need at least one sample")
    alpha = temperature_alpha(p, y, laplace=laplace)
    return CalibratorParams(Method.TS, k=p.shape[1], alpha=alpha,
                            fit_info={"laplace": bool(laplace)})


# --------------------------------------------------------------------------
# binary scaling
# --------------------------------------------------------------------------


def _binary_loss(theta, F, y):
    z = F @ theta
    return float(-(y * log_sigmoid(z) + (1 - y) * log_sigmoid(-z)).mean())


def _newton_logistic(F, y, theta, grad_tol=1e-8, max_iter=200, cap=SEPARABLE_NORM_CAP):
    """Unregularized logistic regression by damped Newton.

    Returns ``(theta, info)``; stops at the norm cap as soon as the current
    iterate strictly separates the data (the optimum is then at infinity).
    """
    n = F.shape[0]
    sign = 2.0 * y - 1.0
    info = {"iterations": 0, "separable": False, "grad_norm": None}
    loss = _binary_loss(theta, F, y)
    for it in range(max_iter):
        z = F @ theta
        if np.all(sign * z > 0):
            nrm = np.linalg.norm(theta)
            theta = theta * (cap / nrm)
            info["separable"] = True
            break
        s = sigmoid(z)
        g = F.T @ (s - y) / n
        info["grad_norm"] = float(np.linalg.norm(g))
        if info["grad_norm"] < grad_tol:
            break
        H = (F * (s * (1.0 - s))[:, None]).T @ F / n
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        t, slope = 1.0, float(g @ step)
        while t > 1e-12:
            cand = theta - t * step
            new = _binary_loss(cand, F, y)
            if new <= loss - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        theta, loss = cand, new
        info["iterations"] = it + 1
        if np.linalg.norm(theta) > cap:
            theta = theta * (cap / np.linalg.norm(theta))
            info["separable"] = True
            break
    return theta, info


def fit_binary(p, y, order="quadratic", options=FitOptions()):
    """Logistic regression on ``(logit**2, logit, 1)`` restricted per ``order``.

    ``order`` is ``linear`` (temperature), ``affine`` or ``quadratic``.
    Unregularized fits use Newton's method to a ``1e-8`` gradient norm; on
    separable data the parameters are returned at norm ``1e4`` with a
    :class:`SeparableDataWarning`.
    """
    method = BINARY_ORDERS.get(order, order)
    method = Method(method)
    if not method.is_binary:
        raise ValueError(f"{method.value} is not a binary method")
    p = check_probs(p)
    if p.shape[1] != 2:
        raise DimensionMismatch("binary method requires k=2")
    y = check_labels(y, n=p.shape[0], k=2)
    blocks = _BINARY_BLOCKS[method]
    if p.shape[0] < len(blocks):
        raise ValueError(f"need at least {len(blocks)} samples")
    x = binary_logit(p[:, 1])
    model = QuadraticLogistic(blocks)
    F = model.features(x)
    yf = y.astype(np.float64)
    init = {"gamma": 0.0, "alpha": 1.0, "beta": 0.0}
    info = {}
    if options.binary_penalty is None:
        cols = [model.block_names.index(b) for b in blocks]
        sub, info = _newton_logistic(F[:, cols], yf, model.pack(init)[cols])
        theta = np.zeros(3)
        theta[cols] = sub
        if info["separable"]:
            warnings.warn("binary calibration data is separable; parameters capped at norm 1e4",
                          SeparableDataWarning, stacklevel=2)
        coef = model.unpack(theta)
    else:
        pen = options.binary_penalty
        denom = float(len(y)) ** pen.tau
        pmap = {"beta": (pen.family, pen.lambda_b / denom),
                "gamma": (pen.family, pen.lambda_M / denom)}
        coef, report = solve(model, F, yf, init, pmap, options.solver, pen.mcp_gamma)
        info = report.to_dict()
    gb = (coef["gamma"], coef["alpha"], coef["beta"])
    return CalibratorParams(method, k=2, alpha=coef["alpha"], gamma_beta=gb,
                            fit_options=options.to_dict(), fit_info=info)


# --------------------------------------------------------------------------
# structured scaling
# --------------------------------------------------------------------------

_STRUCTURED_BLOCKS = {
    Method.VS: ("alpha", "v", "b"),
    Method.SVS: ("alpha", "v", "b"),
    Method.MS: ("alpha", "v", "M", "b"),
    Method.SMS: ("alpha", "v", "M", "b"),
}


def structured_penalty_map(method, penalty, k, n):
    if method in (Method.VS, Method.MS):
        return {}
    weights = effective_weights(penalty, k, n)
    groups = [Group.INTERCEPT, Group.DIAGONAL]
    if method is Method.SMS:
        groups.append(Group.OFF_DIAGONAL)
    return {g: (penalty.family, weights[g].effective_weight) for g in groups}


def preprocess_temperature(p, y, options):
    """Temperature used to rescale logits before structured fitting."""
    if not options.preprocess_ts:
        return 1.0
    alpha = temperature_alpha(p, y, laplace=options.laplace)
    # a non-positive scale carries no usable ordering; skip the rescaling
    return 1.0 / alpha if alpha > 0 else 1.0


def fit_structured(p, y, method="sms", options=FitOptions()):
    """Fit SVS/SMS (penalized) or VS/MS (unpenalized) with proximal SAGA.

    Logits are rescaled by a Laplace-smoothed temperature fit first (unless
    ``options.preprocess_ts`` is false), then the map is initialized at the
    identity ``alpha=1, v=0, M=0, b=0``.
    """
    method = Method(method)
    if not method.is_structured:
        raise ValueError(f"{method.value} is not a structured method")
    p = check_probs(p)
    n, k = p.shape
    y = check_labels(y, n=n, k=k)
    if n < 1:
        raise ValueError("need at least one sample")
    T0 = preprocess_temperature(p, y, options)
    x = logits_from_probs(p, center=options.center_logits) / T0
    model = StructuredSoftmax(k, _STRUCTURED_BLOCKS[method])
    pmap = structured_penalty_map(method, options.penalty, k, n)
    init = {"alpha": 1.0, "v": np.zeros(k), "M": np.zeros((k, k)), "b": np.zeros(k)}
    coef, report = solve(model, x, y, init, pmap, options.solver, options.penalty.mcp_gamma)
    params = CalibratorParams(
        method, k=k, preprocess_temperature=T0, center_logits=options.center_logits,
        fit_options=options.to_dict(), fit_info=report.to_dict(),
        alpha=coef["alpha"], v=coef["v"], b=coef["b"],
        M=coef["M"] if model.use_M else None,
    )
    if method is Method.VS:
        params = replace(params, alpha=None, v=coef["alpha"] + coef["v"])
    elif method is Method.MS:
        params = replace(params, alpha=None, v=None,
                         M=coef["alpha"] * np.eye(k) + np.diag(coef["v"]) + coef["M"])
    return params


def fit(method, p, y, options=FitOptions()):
    """Fit any calibrator by method name."""
    method = Method(method)
    if method is Method.TS:
        params = fit_temperature(p, y, laplace=options.laplace)
        params.fit_options = options.to_dict()
        return params
    if method.is_binary:
        return fit_binary(p, y, method, options)
    return fit_structured(p, y, method, options)


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------


def apply(params, p):
    """Calibrated probabilities for raw predictions ``p``."""
    p = check_probs(p)
    if p.shape[1] != params.k:
        raise DimensionMismatch(f"calibrator expects k={params.k}, got {p.shape[1]}")
    if params.method.is_binary:
        g, a, b = params.gamma_beta
        x = binary_logit(p[:, 1]) / params.preprocess_temperature
        s = sigmoid(g * x * x + a * x + b)
        return np.column_stack([1.0 - s, s])
    x = logits_from_probs(p, center=params.center_logits) / params.preprocess_temperature
    z = x @ params.weight_matrix().T
    if params.b is not None:
        z = z + params.b
    return softmax_rows(z)


class Calibrator:
    """Scikit-learn style wrapper: ``Calibrator("sms").fit(p, y).predict_proba(p)``."""

    def __init__(self, method="sms", options=None, **penalty_kwargs):
        self.method = Method(method)
        options = options or FitOptions()
        if penalty_kwargs:
            options = replace(options, penalty=replace(options.penalty, **penalty_kwargs))
        self.options = options
        self.params_ = None

    def fit(self, p, y):
        self.params_ = fit(self.method, p, y, self.options)
        return self

    def predict_proba(self, p):
        if self.params_ is None:
            raise RuntimeError("calibrator is not fitted")
        return apply(self.params_, p)
