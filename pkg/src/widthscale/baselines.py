"""Baseline width configurations at a given parameter budget.

``uniform_match`` multiplies the default widths by one ratio found by
monotone search. ``morphnet_taylor`` first prunes the network with the gate
importance criterion until half of its channels survive, then scales the
surviving widths by one multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import ArchSpec, count_params, round_width
from .data import Dataset
from .errors import DomainError, InfeasibleBudgetError
from .prune import PruneConfig, prune_to_fraction
from .scaler import repair_widths

SEARCH_STEPS = 200


def scaled(base, m: float) -> tuple[int, ...]:
    return tuple(round_width(w * m) for w in base)


def scale_to_budget(arch: ArchSpec, base, tau_hat: int) -> tuple[float, tuple[int, ...]]:
    """Multiplier ``m`` and widths ``round(m * base)`` whose count is closest to ``tau_hat``.

    Searches ``m`` in log space for the point where the count first reaches
    ``tau_hat``, then keeps whichever neighbouring configuration is closer
    (the one at or above the target wins ties).
    """
    floor = count_params(arch, (1,) * arch.num_prunable)
    if tau_hat < floor:
        raise InfeasibleBudgetError(f"budget {tau_hat} is below the minimum {floor} of {arch.name}")
    base = tuple(base)

    def h(m):
        return count_params(arch, scaled(base, m))

    if h(1.0) == tau_hat:
        return 1.0, scaled(base, 1.0)
    lo = 1.0
    while h(lo) >= tau_hat:
        lo /= 2
        if lo < 1e-12:
            return lo, scaled(base, lo)
    hi = 1.0
    while h(hi) < tau_hat:
        hi *= 2
        if hi > 1e12:
            raise InfeasibleBudgetError(f"budget {tau_hat} is out of reach")
    for _ in range(SEARCH_STEPS):
        mid = math.sqrt(lo * hi)
        if mid in (lo, hi):
            break
        if h(mid) >= tau_hat:
            hi = mid
        else:
            lo = mid
    if abs(h(lo) - tau_hat) < abs(h(hi) - tau_hat):
        return lo, scaled(base, lo)
    return hi, scaled(base, hi)


def uniform_match_ratio(arch: ArchSpec, tau_hat: int) -> tuple[float, tuple[int, ...]]:
    """Ratio and widths of the uniformly scaled defaults closest to ``tau_hat``."""
    return scale_to_budget(arch, arch.default_widths, tau_hat)


def uniform_match(arch: ArchSpec, tau_hat: int) -> tuple[int, ...]:
    return uniform_match_ratio(arch, tau_hat)[1]


@dataclass(frozen=True)
class MorphNetResult:
    widths: tuple[int, ...]
    survivors: tuple[int, ...]
    multiplier: float
    achieved_params: int
    initial_gates: int
    repaired: bool = False

    @property
    def surviving_gates(self) -> int:
        return sum(self.survivors)


def morphnet_taylor(arch: ArchSpec, data: Dataset, tau_hat: int, cfg: PruneConfig,
                    fraction: float = 0.5, tol: float = 0.01, survivors=None, widths=None) -> MorphNetResult:
    """Prune to ``ceil(fraction * gates)`` survivors, then scale them to ``tau_hat``.

    ``survivors`` skips the pruning run (useful when one pruned shape is
    scaled to several budgets). If no single multiplier lands within ``tol``,
    the configuration is nudged by :func:`~widthscale.scaler.repair_widths`.
    """
    start = arch.default_widths if widths is None else tuple(widths)
    if survivors is None:
        survivors, _ = prune_to_fraction(arch, data, cfg, fraction, widths=start)
    survivors = tuple(survivors)
    if len(survivors) != arch.num_prunable:
        raise DomainError("survivor widths do not match the architecture")
    m, ws = scale_to_budget(arch, survivors, tau_hat)
    repaired = False
    if abs(count_params(arch, ws) - tau_hat) > tol * tau_hat:
        fixed = repair_widths(arch, ws, tau_hat, tol, [w * m for w in survivors])
        repaired = fixed != ws
        ws = fixed
    return MorphNetResult(ws, survivors, m, count_params(arch, ws), sum(start), repaired)
