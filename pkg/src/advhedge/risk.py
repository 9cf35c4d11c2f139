"""Terminal PL with proportional costs, and the ERM / CVaR utilities.

All functions accept plain numpy input or tape ``Var`` input; with ``Var``
input the result is recorded and differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import autodiff as ad


class UtilityKind(str, Enum):
    ERM = "erm"
    CVAR = "cvar"


@dataclass(frozen=True)
class CostSpec:
    c: float = 1e-4

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"cost rate must be non-negative, got {self.c}")


@dataclass(frozen=True)
class UtilitySpec:
    kind: UtilityKind = UtilityKind.ERM
    lam: float = 1.0
    alpha: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "kind", UtilityKind(self.kind))
        if self.kind is UtilityKind.ERM and not self.lam > 0:
            raise ValueError(f"ERM needs lambda > 0, got {self.lam}")
        if self.kind is UtilityKind.CVAR and not 0 <= self.alpha < 1:
            raise ValueError(f"CVaR needs 0 <= alpha < 1, got {self.alpha}")

    @classmethod
    def parse(cls, text: str) -> "UtilitySpec":
        """Parse ``erm:10`` / ``cvar:0.95`` (also ``ERM(10)`` / ``CVaR(0.95)``)."""
        t = text.strip().lower().replace("(", ":").rstrip(")")
        kind, _, arg = t.partition(":")
        if kind not in ("erm", "cvar") or not arg:
            raise ValueError(f"cannot parse utility {text!r}; expected erm:<lambda> or cvar:<alpha>")
        if kind == "erm":
            return cls(UtilityKind.ERM, lam=float(arg))
        return cls(UtilityKind.CVAR, alpha=float(arg))

    @property
    def label(self) -> str:
        if self.kind is UtilityKind.ERM:
            return f"ERM({self.lam:g})"
        return f"CVaR({self.alpha:g})"


def pl_terminal(payoff_value, path: Sequence, positions: Sequence, cost: CostSpec):
    """-Z + sum delta_i (S_{i+1} - S_i) - sum_{i=0}^{n} c S_i |delta_i - delta_{i-1}|.

    ``path`` holds n+1 prices (per-date columns or scalars), ``positions`` the
    n positions delta_0..delta_{n-1}; delta_{-1} = delta_n = 0.
    """
    n = len(positions)
    if len(path) != n + 1:
        raise ValueError(f"path has {len(path)} prices but {n} positions were given")
    gains = 0.0
    costs = 0.0
    prev = 0.0
    for i in range(n):
        d = positions[i]
        gains = gains + d * (path[i + 1] - path[i])
        if cost.c:
            costs = costs + path[i] * ad.absolute(d - prev)
        prev = d
    pl = gains - payoff_value
    if cost.c:
        costs = costs + path[n] * ad.absolute(prev)
        pl = pl - cost.c * costs
    return pl


def erm_utility(pl_samples, lam: float, axis: int = -1):
    """-(1/lam) log mean exp(-lam x) along ``axis``, shifted for stability."""
    xv = ad.value_of(pl_samples)
    if xv.size == 0 or xv.shape[axis] == 0:
        raise ValueError("ERM of an empty sample")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    z = pl_samples * (-lam)
    shift = np.max(ad.value_of(z), axis=axis, keepdims=True)
    lme = ad.log(ad.vmean(ad.exp(z - shift), axis=axis)) + np.squeeze(shift, axis=axis)
    return lme * (-1.0 / lam)


def cvar_tail_size(n: int, alpha: float) -> int:
    # the epsilon keeps (1 - 0.95) * 20 from rounding up to 2
    return max(1, math.ceil((1.0 - alpha) * n - 1e-9))


def cvar_utility(pl_samples, alpha: float, axis: int = -1):
    """Mean of the worst ceil((1-alpha) N) samples along ``axis``.

    The tail selection is computed from values and held constant, so the
    gradient flows only through the selected samples.
    """
    xv = ad.value_of(pl_samples)
    if xv.size == 0 or xv.shape[axis] == 0:
        raise ValueError("CVaR of an empty sample")
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    n = xv.shape[axis]
    k = cvar_tail_size(n, alpha)
    if not isinstance(pl_samples, ad.Var):
        # the sum of the k smallest values does not depend on tie order
        tail = np.take(np.partition(xv, k - 1, axis=axis), np.arange(k), axis=axis)
        return np.mean(tail, axis=axis)
    order = np.argsort(xv, axis=axis, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(n).reshape(_axis_shape(xv.ndim, axis, n)), order.shape), axis=axis)
    mask = (ranks < k).astype(np.float64) / k
    return ad.vsum(pl_samples * mask, axis=axis)


def _axis_shape(ndim: int, axis: int, n: int) -> tuple[int, ...]:
    shape = [1] * ndim
    shape[axis] = n
    return tuple(shape)


def utility(pl_samples, spec: UtilitySpec, axis: int = -1):
    if spec.kind is UtilityKind.ERM:
        return erm_utility(pl_samples, spec.lam, axis)
    return cvar_utility(pl_samples, spec.alpha, axis)


def hedge_loss(pl_samples, spec: UtilitySpec, axis: int = -1):
    """Hedge cost l = -u(PL): lower is better."""
    return -utility(pl_samples, spec, axis)
