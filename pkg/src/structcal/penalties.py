"""Penalty families, their proximal operators and structured group weights.

Each parameter group ``g`` of a structured scaling model (intercept ``b``,
diagonal deviations ``v``, off-diagonal entries of ``M``) receives the weight

    lambda_g * size_g**rho / n_cal**tau

with ``size_g`` equal to ``k``, ``k`` and ``k(k-1)`` respectively. The
global scale ``alpha`` has no group and is never penalized.
"""

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np


class Family(str, Enum):
    RIDGE = "ridge"
    LASSO = "lasso"
    GROUP_LASSO = "group-lasso"
    MCP = "mcp"


class Group(str, Enum):
    INTERCEPT = "intercept"
    DIAGONAL = "diagonal"
    OFF_DIAGONAL = "off-diagonal"


# Integer codes shared with the compiled solver kernels.
FAMILY_CODES = {Family.RIDGE: 0, Family.LASSO: 1, Family.GROUP_LASSO: 2, Family.MCP: 3}

DEFAULT_MCP_GAMMA = 3.0


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family, exponents and per-group multipliers.

    The defaults are all ones with ridge, i.e. the objective
    ``k/n ||b||^2 + k/n ||v||^2 + k(k-1)/n ||M||^2``.
    """

    family: Family = Family.RIDGE
    rho: float = 1.0
    tau: float = 1.0
    lambda_b: float = 1.0
    lambda_v: float = 1.0
    lambda_M: float = 1.0
    mcp_gamma: float = DEFAULT_MCP_GAMMA

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        for name in ("lambda_b", "lambda_v", "lambda_M"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.mcp_gamma > 1:
            raise ValueError("mcp_gamma must be > 1")

    @classmethod
    def unpenalized(cls):
        return cls(lambda_b=0.0, lambda_v=0.0, lambda_M=0.0)

    def to_dict(self):
        d = asdict(self)
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class GroupWeight:
    group: Group
    size: int
    effective_weight: float


def group_size(group, k):
    group = Group(group)
    return k * (k - 1) if group is Group.OFF_DIAGONAL else k


def effective_weights(spec, k, n_cal):
    """Effective penalty weight for each structural group.

    Returns a dict ``{Group: GroupWeight}``.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if n_cal < 1:
        raise ValueError("n_cal must be at least 1")
    lambdas = {
        Group.INTERCEPT: spec.lambda_b,
        Group.DIAGONAL: spec.lambda_v,
        Group.OFF_DIAGONAL: spec.lambda_M,
    }
    # divide rather than multiply by n**-tau so the defaults are exactly k/n
    denom = float(n_cal) ** spec.tau
    out = {}
    for group, lam in lambdas.items():
        size = group_size(group, k)
        out[group] = GroupWeight(group, size, lam * float(size) ** spec.rho / denom)
    return out


def mcp_unit(t, gamma):
    """Unit-lambda minimax concave penalty, applied element-wise."""
    a = np.abs(t)
    return np.where(a <= gamma, a - a * a / (2.0 * gamma), gamma / 2.0)


def penalty_value(family, w, weight, mcp_gamma=DEFAULT_MCP_GAMMA):
    """Value of ``weight * penalty(w)`` for one parameter block."""
    family = Family(family)
    if weight < 0:
        raise ValueError("weight must be non-negative")
    w = np.ravel(np.asarray(w, dtype=np.float64))
    if family is Family.RIDGE:
        return weight * float(w @ w)
    if family is Family.LASSO:
        return weight * float(np.abs(w).sum())
    if family is Family.GROUP_LASSO:
        return weight * float(np.sqrt(w @ w))
    return weight * float(mcp_unit(w, mcp_gamma).sum())


def soft_threshold(z, s):
    return np.sign(z) * np.maximum(np.abs(z) - s, 0.0)


def mcp_prox(z, s, gamma):
    """Proximal map of ``s * mcp_unit(., gamma)``.

    For ``s < gamma`` the per-coordinate problem is convex and the solution is
    the rescaled soft threshold inside ``[-gamma, gamma]`` and the identity
    outside. For ``s >= gamma`` it degenerates to a hard threshold at
    ``sqrt(s * gamma)``.
    """
    z = np.asarray(z, dtype=np.float64)
    a = np.abs(z)
    if s < gamma:
        inner = soft_threshold(z, s) / (1.0 - s / gamma)
        return np.where(a <= gamma, inner, z)
    return np.where(a * a > s * gamma, z, 0.0)


def prox(family, z, step_weight, mcp_gamma=DEFAULT_MCP_GAMMA):
    """``argmin_w 1/2 ||w - z||^2 + step_weight * penalty(w)``."""
    family = Family(family)
    if step_weight < 0:
        raise ValueError("step_weight must be non-negative")
    z = np.asarray(z, dtype=np.float64)
    if family is Family.RIDGE:
        return z / (1.0 + 2.0 * step_weight)
    if family is Family.LASSO:
        return soft_threshold(z, step_weight)
    if family is Family.GROUP_LASSO:
        norm = float(np.sqrt(np.sum(z * z)))
        if norm == 0.0:
            return np.zeros_like(z)
        return z * max(0.0, 1.0 - step_weight / norm)
    return mcp_prox(z, step_weight, mcp_gamma)
