"""Proximal SAGA for logistic calibration models.

Two linear-in-parameters models are supported:

* :class:`StructuredSoftmax` -- ``z = (alpha I + diag(v) + offdiag(M)) x + b``
  followed by a softmax, on ``n x k`` logit features.
* :class:`QuadraticLogistic` -- ``z = gamma x**2 + alpha x + beta`` followed by a
  sigmoid, on a vector of binary logits.

Both losses have gradients that factor through the per-sample derivative of
the loss with respect to ``z``, so the SAGA memory stores one vector of
size ``k`` (or a scalar) per sample instead of a full parameter gradient.
"""

from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np

from .exceptions import DimensionMismatch, NonFiniteError
from .penalties import DEFAULT_MCP_GAMMA, FAMILY_CODES, Family, Group, penalty_value
from .probcore import log_sigmoid, log_softmax_rows, sigmoid, softmax_rows


class Shuffle(str, Enum):
    EVERY_EPOCH = "every-epoch"
    ONCE = "once"


@dataclass(frozen=True)
class SolverConfig:
    step_size: object = "auto"
    max_epochs: int = 1000
    tol: float = 1e-7
    seed: int = 0
    shuffle: Shuffle = Shuffle.EVERY_EPOCH
    step_cap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shuffle", Shuffle(self.shuffle))
        if self.step_size != "auto" and not float(self.step_size) > 0:
            raise ValueError("step_size must be positive or 'auto'")
        if int(self.max_epochs) < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def to_dict(self):
        return {
            "step_size": self.step_size,
            "max_epochs": int(self.max_epochs),
            "tol": float(self.tol),
            "seed": int(self.seed),
            "shuffle": self.shuffle.value,
            "step_cap": float(self.step_cap),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SolveReport:
    epochs_run: int
    final_objective: float
    initial_objective: float
    converged: bool
    step_size: float
    objective_trace: list = field(default_factory=list)
    retries: int = 0

    def to_dict(self):
        return {
            "epochs_run": self.epochs_run,
            "final_objective": self.final_objective,
            "initial_objective": self.initial_objective,
            "converged": self.converged,
            "step_size": self.step_size,
            "retries": self.retries,
        }


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _prox_block(theta, start, stop, code, s, gamma):
    if s == 0.0:
        return
    if code == 0:
        f = 1.0 / (1.0 + 2.0 * s)
        for j in range(start, stop):
            theta[j] *= f
    elif code == 1:
        for j in range(start, stop):
            t = theta[j]
            a = abs(t) - s
            theta[j] = 0.0 if a <= 0.0 else (a if t > 0 else -a)
    elif code == 2:
        norm = 0.0
        for j in range(start, stop):
            norm += theta[j] * theta[j]
        norm = np.sqrt(norm)
        f = 0.0 if norm <= s else 1.0 - s / norm
        for j in range(start, stop):
            theta[j] *= f
    else:
        for j in range(start, stop):
            t = theta[j]
            a = abs(t)
            if s < gamma:
                if a <= gamma:
                    r = a - s
                    r = 0.0 if r <= 0.0 else r / (1.0 - s / gamma)
                    theta[j] = r if t > 0 else -r
            elif a * a <= s * gamma:
                theta[j] = 0.0


@numba.njit(cache=True, nogil=True)
def _prox_all(theta, g_start, g_stop, g_code, g_weight, step, gamma):
    for g in range(g_start.shape[0]):
        _prox_block(theta, g_start[g], g_stop[g], g_code[g], step * g_weight[g], gamma)


@numba.njit(cache=True, nogil=True)
def _epoch_softmax(theta, X, y, order, mem, avg, step, active, use_M,
                   g_start, g_stop, g_code, g_weight, gamma):
    n, k = X.shape
    mo = 1 + k
    bo = 1 + k + k * k
    z = np.empty(k)
    diff = np.empty(k)
    inv_n = 1.0 / n
    for t in range(order.shape[0]):
        i = order[t]
        x = X[i]
        a0 = theta[0]
        for j in range(k):
            z[j] = (a0 + theta[1 + j]) * x[j] + theta[bo + j]
        if use_M:
            for j in range(k):
                acc = 0.0
                row = mo + j * k
                for l in range(k):
                    if l != j:
                        acc += theta[row + l] * x[l]
                z[j] += acc
        zmax = z[0]
        for j in range(1, k):
            if z[j] > zmax:
                zmax = z[j]
        tot = 0.0
        for j in range(k):
            z[j] = np.exp(z[j] - zmax)
            tot += z[j]
        yi = y[i]
        da = 0.0
        for j in range(k):
            g = z[j] / tot
            if j == yi:
                g -= 1.0
            diff[j] = g - mem[i, j]
            mem[i, j] = g
            da += diff[j] * x[j]
        theta[0] -= step * (da + avg[0]) * active[0]
        avg[0] += da * inv_n
        for j in range(k):
            dv = diff[j] * x[j]
            theta[1 + j] -= step * (dv + avg[1 + j]) * active[1 + j]
            avg[1 + j] += dv * inv_n
            theta[bo + j] -= step * (diff[j] + avg[bo + j]) * active[bo + j]
            avg[bo + j] += diff[j] * inv_n
        if use_M:
            for j in range(k):
                row = mo + j * k
                dj = diff[j]
                for l in range(k):
                    if l != j:
                        dm = dj * x[l]
                        theta[row + l] -= step * (dm + avg[row + l]) * active[row + l]
                        avg[row + l] += dm * inv_n
        _prox_all(theta, g_start, g_stop, g_code, g_weight, step, gamma)


@numba.njit(cache=True, nogil=True)
def _epoch_binomial(theta, F, y, order, mem, avg, step, active,
                    g_start, g_stop, g_code, g_weight, gamma):
    n, p = F.shape
    inv_n = 1.0 / n
    for t in range(order.shape[0]):
        i = order[t]
        f = F[i]
        z = 0.0
        for j in range(p):
            z += theta[j] * f[j]
        if z >= 0:
            s = 1.0 / (1.0 + np.exp(-z))
        else:
            e = np.exp(z)
            s = e / (1.0 + e)
        g = s - y[i]
        d = g - mem[i]
        mem[i] = g
        for j in range(p):
            dj = d * f[j]
            theta[j] -= step * (dj + avg[j]) * active[j]
            avg[j] += dj * inv_n
        _prox_all(theta, g_start, g_stop, g_code, g_weight, step, gamma)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------

_GROUP_BLOCKS = {Group.INTERCEPT: "b", Group.DIAGONAL: "v", Group.OFF_DIAGONAL: "M"}


class StructuredSoftmax:
    """Softmax regression on logits with weight ``alpha I + diag(v) + offdiag(M)``.

    ``blocks`` names the free parameter blocks among ``alpha, v, M, b``;
    the others are held at zero. The diagonal of ``M`` is never free.
    """

    curvature = 0.5
    block_names = ("alpha", "v", "M", "b")

    def __init__(self, k, blocks=("alpha", "v", "M", "b")):
        if k < 2:
            raise DimensionMismatch("need at least 2 classes")
        unknown = set(blocks) - set(self.block_names)
        if unknown:
            raise ValueError(f"unknown blocks {sorted(unknown)}")
        self.k = k
        self.blocks = tuple(b for b in self.block_names if b in blocks)
        self.slices = {
            "alpha": slice(0, 1),
            "v": slice(1, 1 + k),
            "M": slice(1 + k, 1 + k + k * k),
            "b": slice(1 + k + k * k, 1 + 2 * k + k * k),
        }
        self.size = 1 + 2 * k + k * k
        self.offdiag = ~np.eye(k, dtype=bool)
        active = np.zeros(self.size)
        for name in self.blocks:
            active[self.slices[name]] = 1.0
        active[self.slices["M"]] *= self.offdiag.ravel()
        self.active = active
        self.use_M = "M" in self.blocks

    def check_data(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.k:
            raise DimensionMismatch(f"expected n x {self.k} logits, got {X.shape}")
        y = np.ascontiguousarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise DimensionMismatch("labels do not match logits")
        if not np.all(np.isfinite(X)):
            raise ValueError("logits must be finite")
        return X, y

    def pack(self, params):
        theta = np.zeros(self.size)
        k = self.k
        theta[0] = float(np.asarray(params.get("alpha", 0.0)).reshape(()))
        for name, shape in (("v", (k,)), ("M", (k, k)), ("b", (k,))):
            if params.get(name) is not None:
                block = np.asarray(params[name], dtype=np.float64)
                if block.shape != shape:
                    raise DimensionMismatch(f"block {name} has shape {block.shape}, expected {shape}")
                theta[self.slices[name]] = block.ravel()
        return theta * self.active

    def unpack(self, theta):
        k = self.k
        return {
            "alpha": float(theta[0]),
            "v": theta[self.slices["v"]].copy(),
            "M": theta[self.slices["M"]].reshape(k, k) * self.offdiag,
            "b": theta[self.slices["b"]].copy(),
        }

    def weight_matrix(self, theta):
        p = self.unpack(theta)
        return p["alpha"] * np.eye(self.k) + np.diag(p["v"]) + p["M"]

    def predictor(self, theta, X):
        W = self.weight_matrix(theta)
        return X @ W.T + theta[self.slices["b"]]

    def loss(self, theta, X, y):
        Z = self.predictor(theta, X)
        return float(-log_softmax_rows(Z)[np.arange(len(y)), y].mean())

    def sample_grads(self, theta, X, y):
        G = softmax_rows(self.predictor(theta, X))
        G[np.arange(len(y)), y] -= 1.0
        return G

    def mean_grad(self, G, X):
        n = X.shape[0]
        GX = G.T @ X / n
        grad = np.zeros(self.size)
        grad[0] = np.trace(GX)
        grad[self.slices["v"]] = np.diag(GX)
        grad[self.slices["M"]] = (GX * self.offdiag).ravel()
        grad[self.slices["b"]] = G.mean(axis=0)
        return grad * self.active

    def feature_sq_norms(self, X):
        return np.einsum("ij,ij->i", X, X)

    def group_slices(self, penalty_map):
        out = []
        for group, (family, weight) in penalty_map.items():
            name = group if group in self.slices else _GROUP_BLOCKS[Group(group)]
            if name == "alpha":
                raise ValueError("alpha is never penalized")
            if name in self.blocks:
                out.append((self.slices[name], Family(family), float(weight)))
        return out

    def run_epoch(self, theta, X, y, order, mem, avg, step, groups, gamma):
        _epoch_softmax(theta, X, y, order, mem, avg, step, self.active, self.use_M, *groups, gamma)


class QuadraticLogistic:
    """Binary logistic regression on features ``(x**2, x, 1)``.

    Parameter vector is ``(gamma, alpha, beta)``; ``blocks`` selects the free
    ones. Labels are 0/1 with 1 the positive class.
    """

    curvature = 0.25
    block_names = ("gamma", "alpha", "beta")

    def __init__(self, blocks=("gamma", "alpha", "beta")):
        self.blocks = tuple(b for b in self.block_names if b in blocks)
        self.slices = {name: slice(i, i + 1) for i, name in enumerate(self.block_names)}
        self.size = 3
        self.active = np.array([float(b in self.blocks) for b in self.block_names])

    @staticmethod
    def features(x):
        x = np.asarray(x, dtype=np.float64)
        return np.ascontiguousarray(np.column_stack([x * x, x, np.ones_like(x)]))

    def check_data(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = self.features(X)
        if X.ndim != 2 or X.shape[1] != 3:
            raise DimensionMismatch("expected a vector of binary logits")
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.shape != (X.shape[0],):
            raise DimensionMismatch("labels do not match logits")
        return np.ascontiguousarray(X), y

    def pack(self, params):
        theta = np.array([float(params.get(name, 0.0)) for name in self.block_names])
        return theta * self.active

    def unpack(self, theta):
        return {name: float(theta[i]) for i, name in enumerate(self.block_names)}

    def loss(self, theta, F, y):
        z = F @ theta
        return float(-(y * log_sigmoid(z) + (1 - y) * log_sigmoid(-z)).mean())

    def sample_grads(self, theta, F, y):
        return sigmoid(F @ theta) - y

    def mean_grad(self, G, F):
        return (F.T @ G / F.shape[0]) * self.active

    def feature_sq_norms(self, F):
        return np.einsum("ij,ij->i", F, F)

    def group_slices(self, penalty_map):
        out = []
        for name, (family, weight) in penalty_map.items():
            if name in self.blocks:
                out.append((self.slices[name], Family(family), float(weight)))
        return out

    def run_epoch(self, theta, F, y, order, mem, avg, step, groups, gamma):
        _epoch_binomial(theta, F, y, order, mem, avg, step, self.active, *groups, gamma)


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _compile_groups(groups):
    start = np.array([g[0].start for g in groups], dtype=np.int64)
    stop = np.array([g[0].stop for g in groups], dtype=np.int64)
    code = np.array([FAMILY_CODES[g[1]] for g in groups], dtype=np.int64)
    weight = np.array([g[2] for g in groups], dtype=np.float64)
    return start, stop, code, weight


def composite_objective(model, theta, X, y, groups, mcp_gamma=DEFAULT_MCP_GAMMA):
    """Mean loss plus the group penalties at ``theta``."""
    val = model.loss(theta, X, y)
    for sl, family, weight in groups:
        val += penalty_value(family, theta[sl], weight, mcp_gamma)
    return val


def auto_step_size(X, model, cap=1.0):
    """``1 / (3 L)`` with ``L = curvature * max_i ||x_i||^2``, capped at ``cap``.

    ``curvature`` is 0.5 for the softmax loss and 0.25 for the sigmoid loss.
    Ridge terms are left out of ``L``: their prox is exact and contractive
    for any step, and counting them would freeze ``alpha`` once the ridge
    weights are large.
    """
    sq = model.feature_sq_norms(X)
    L = model.curvature * (float(sq.max()) if sq.size else 0.0)
    if L <= 0:
        return cap
    return min(cap, 1.0 / (3.0 * L))


def solve(model, X, y, params0, penalty_map, config=SolverConfig(), mcp_gamma=DEFAULT_MCP_GAMMA):
    """Minimize mean logloss plus group penalties with proximal SAGA.

    ``penalty_map`` maps a group (a :class:`Group` or a block name) to a
    ``(family, effective_weight)`` pair. Unpenalized blocks are updated by
    the stochastic steps and skipped by the prox.

    Returns ``(params, SolveReport)``. Raises :class:`NonFiniteError` when the
    objective blows up even after one retry at a tenth of the step size.
    """
    X, y = model.check_data(X, y)
    theta0 = model.pack(params0)
    groups = model.group_slices(penalty_map)
    step = (auto_step_size(X, model, config.step_cap)
            if config.step_size == "auto" else float(config.step_size))
    try:
        theta, report = _run(model, X, y, theta0, groups, step, config, mcp_gamma)
    except NonFiniteError:
        theta, report = _run(model, X, y, theta0, groups, step / 10.0, config, mcp_gamma)
        report.retries = 1
    return model.unpack(theta), report


def _run(model, X, y, theta0, groups, step, config, mcp_gamma):
    n = X.shape[0]
    compiled = _compile_groups(groups)
    theta = theta0.copy()
    G = model.sample_grads(theta, X, y)
    mem = np.ascontiguousarray(G, dtype=np.float64)
    avg = model.mean_grad(G, X)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n).astype(np.int64)
    initial = composite_objective(model, theta, X, y, groups, mcp_gamma)
    trace = []
    converged = False
    best, best_obj = theta0.copy(), initial
    for epoch in range(int(config.max_epochs)):
        if epoch and config.shuffle is Shuffle.EVERY_EPOCH:
            order = rng.permutation(n).astype(np.int64)
        prev = theta.copy()
        model.run_epoch(theta, X, y, order, mem, avg, step, compiled, mcp_gamma)
        obj = composite_objective(model, theta, X, y, groups, mcp_gamma) \
            if np.all(np.isfinite(theta)) else np.nan
        if not np.isfinite(obj):
            raise NonFiniteError(f"objective became non-finite at epoch {epoch} (step {step:g})")
        trace.append(obj)
        if obj <= best_obj:
            best, best_obj = theta.copy(), obj
        if np.max(np.abs(theta - prev)) < config.tol:
            converged = True
            break
    report = SolveReport(
        epochs_run=len(trace),
        final_objective=best_obj,
        initial_objective=initial,
        converged=converged,
        step_size=step,
        objective_trace=trace,
    )
    return best, report
