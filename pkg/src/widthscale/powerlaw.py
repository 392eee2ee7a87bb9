"""Per-layer power-law fit of width against total parameter count.

Each layer is modelled as ``phi_l = alpha_l * tau ** beta_l``. Taking logs
gives a linear model ``ln phi_l = ln alpha_l + beta_l ln tau`` that shares one
N x 2 design matrix ``T = [1, ln tau]`` across layers, so all layers are
solved at once from ``Theta = (T^T T)^-1 T^T Phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InsufficientDataError, NumericalError, SingularDesignError

COND_LIMIT = 1e10


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    T: np.ndarray
    Phi: np.ndarray

    @property
    def n(self) -> int:
        return self.T.shape[0]


@dataclass(frozen=True)
class ScalingParams:
    """Fitted (alpha, beta) per layer plus log-space diagnostics."""

    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    rss: tuple[float, ...] = ()
    n: int = 0
    arch_name: str = ""

    def __post_init__(self):
        if len(self.alpha) != len(self.beta):
            raise DomainError("alpha and beta differ in length")
        if self.rss and len(self.rss) != len(self.alpha):
            raise DomainError("rss length differs from alpha")
        for a, b in zip(self.alpha, self.beta):
            if not (math.isfinite(a) and a > 0 and math.isfinite(b)):
                raise NumericalError(f"invalid scaling parameters alpha={a}, beta={b}")

    @property
    def num_layers(self) -> int:
        return len(self.alpha)

    def widths_at(self, tau: float) -> np.ndarray:
        """Unrounded widths of every layer at budget variable ``tau``."""
        if not tau > 0:
            raise DomainError(f"tau must be positive, got {tau}")
        return np.asarray(self.alpha) * float(tau) ** np.asarray(self.beta)

    def slopes_at(self, tau: float) -> np.ndarray:
        """d phi_l / d tau for every layer."""
        a, b = np.asarray(self.alpha), np.asarray(self.beta)
        return b * a * float(tau) ** (b - 1.0)


def design_from_arrays(taus, phis) -> DesignMatrices:
    """Log-log design matrices from raw counts (N taus, N x L widths)."""
    taus = np.asarray(taus, dtype=np.float64)
    phis = np.asarray(phis, dtype=np.float64)
    if phis.ndim == 1:
        phis = phis[:, None]
    if taus.ndim != 1 or phis.shape[0] != taus.shape[0]:
        raise DomainError(f"need N taus and N width rows, got {taus.shape} and {phis.shape}")
    if len(taus) < 2:
        raise InsufficientDataError(f"a power-law fit needs N >= 2 records, got {len(taus)}")
    if not (np.all(np.isfinite(taus)) and np.all(np.isfinite(phis))):
        raise DomainError("non-finite tau or width")
    if taus.min() < 1 or phis.min() < 1:
        raise DomainError("tau and widths must be >= 1")
    T = np.column_stack([np.ones(len(taus)), np.log(taus)])
    return DesignMatrices(T, np.log(phis))


def build_design(traj) -> DesignMatrices:
    """Design matrices from a :class:`~widthscale.prune.PruneTrajectory`."""
    if len(traj.records) < 2:
        raise InsufficientDataError(f"a power-law fit needs N >= 2 records, got {len(traj.records)}")
    return design_from_arrays(traj.taus, traj.phis)


def _check_rank(T: np.ndarray) -> None:
    if np.ptp(T[:, 1]) == 0:
        raise SingularDesignError("all tau values are equal; the fit is undetermined")


def solve_theta_normal(dm: DesignMatrices) -> np.ndarray:
    """Theta (2 x L) from the normal equations."""
    _check_rank(dm.T)
    gram = dm.T.T @ dm.T
    return np.linalg.solve(gram, dm.T.T @ dm.Phi)


def solve_theta_qr(dm: DesignMatrices) -> np.ndarray:
    """Theta (2 x L) from a reduced QR factorization of T."""
    _check_rank(dm.T)
    q, r = np.linalg.qr(dm.T)
    if abs(r[1, 1]) <= 1e-12 * abs(r[0, 0]):
        raise SingularDesignError("design matrix is numerically rank deficient")
    return np.linalg.solve(r, q.T @ dm.Phi)


def solve_theta(dm: DesignMatrices, arch_name: str = "") -> ScalingParams:
    """Least-squares power-law parameters for every layer.

    Uses the normal equations, switching to QR when ``cond(T^T T)`` exceeds
    ``COND_LIMIT``.
    """
    _check_rank(dm.T)
    if np.linalg.cond(dm.T.T @ dm.T) > COND_LIMIT:
        theta = solve_theta_qr(dm)
    else:
        theta = solve_theta_normal(dm)
    if not np.all(np.isfinite(theta)):
        raise NumericalError("least-squares solve produced non-finite parameters")
    resid = dm.T @ theta - dm.Phi
    rss = (resid ** 2).sum(axis=0)
    return ScalingParams(alpha=tuple(float(v) for v in np.exp(theta[0])),
                         beta=tuple(float(v) for v in theta[1]),
                         rss=tuple(float(v) for v in rss), n=dm.n, arch_name=arch_name)


def fit_trajectory(traj) -> ScalingParams:
    return solve_theta(build_design(traj), arch_name=traj.arch_name)


def predict_width(params: ScalingParams, l: int, tau: float) -> float:
    """``alpha_l * tau ** beta_l`` for the zero-based layer index ``l``."""
    if not 0 <= l < params.num_layers:
        raise DomainError(f"layer index {l} out of range for {params.num_layers} layers")
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    return params.alpha[l] * float(tau) ** params.beta[l]
