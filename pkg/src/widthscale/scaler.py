"""Meet a parameter budget by searching the scalar budget variable ``tau``.

Given fitted per-layer power laws, every ``tau`` yields a width vector
``Phi(tau)``. The search looks for ``tau*`` with ``h(Phi(tau*)) ~= tau_hat``
where ``h`` is the architecture's parameter count. Three methods are offered:

``paper-sgd``
    ``tau <- tau - eta * (h - tau_hat) * sum_l beta_l alpha_l tau^(beta_l - 1)``
    (the chain-rule factor dh/dphi is left out of the sum).
``exact-sgd``
    Same update with the full derivative ``sum_l dh/dphi_l * dphi_l/dtau``.
``bisection``
    Log-space bisection on the count of the rounded configuration, relying
    only on ``h(Phi(tau))`` being monotone in ``tau``.

The gradient methods evaluate ``h`` on continuous widths; bisection evaluates
it on the integer configuration that will be emitted.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .arch import ArchSpec, count_params, count_params_real, param_gradient, round_width
from .errors import DomainError, NoBracketError, StepSizeError
from .powerlaw import ScalingParams

METHODS = ("paper-sgd", "exact-sgd", "bisection")
MAX_BRACKET_STEPS = 60


@dataclass(frozen=True)
class TauDescentOpts:
    """Search settings.

    ``rel_tol`` is the relative budget error at which the search stops;
    ``budget_tol`` is the tolerance the emitted integer configuration must
    meet, with integer repair applied if rounding pushes it outside.
    """

    method: str = "bisection"
    eta: float | None = None
    max_iters: int = 200
    rel_tol: float = 0.005
    budget_tol: float = 0.01
    repair: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.rel_tol > 0 or not self.budget_tol > 0:
            raise DomainError("tolerances must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise DomainError("eta must be positive")


@dataclass
class DescentResult:
    tau_star: float
    trace: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


@dataclass(frozen=True)
class ScaledConfig:
    widths: tuple[int, ...]
    achieved_params: int
    target: int
    tau_star: float
    iterations_used: int
    converged: bool
    method: str
    repaired: bool = False

    @property
    def rel_error(self) -> float:
        return abs(self.achieved_params - self.target) / self.target


def init_tau(params: ScalingParams, tau_hat: float) -> float:
    """Starting point of the search: the target budget itself."""
    if not tau_hat >= 1:
        raise DomainError(f"target budget must be >= 1, got {tau_hat}")
    return float(tau_hat)


def rounded_widths(params: ScalingParams, tau: float) -> tuple[int, ...]:
    return tuple(round_width(w) for w in params.widths_at(tau))


def count_at(params: ScalingParams, arch: ArchSpec, tau: float) -> int:
    """Exact count of the integer configuration emitted at ``tau``."""
    return count_params(arch, rounded_widths(params, tau))


def count_at_real(params: ScalingParams, arch: ArchSpec, tau: float) -> float:
    """Count on the continuous widths ``Phi(tau)``."""
    return count_params_real(arch, params.widths_at(tau))


def paper_direction(params: ScalingParams, tau: float) -> float:
    """``sum_l beta_l alpha_l tau^(beta_l - 1)``."""
    return float(params.slopes_at(tau).sum())


def exact_direction(params: ScalingParams, arch: ArchSpec, tau: float) -> float:
    """``d h(Phi(tau)) / d tau`` on continuous widths."""
    return float(param_gradient(arch, params.widths_at(tau)) @ params.slopes_at(tau))


def paper_step(params: ScalingParams, arch: ArchSpec, tau: float, tau_hat: float, eta: float) -> float:
    """Amount subtracted from ``tau`` by one step without the dh/dphi factor."""
    return eta * (count_at_real(params, arch, tau) - tau_hat) * paper_direction(params, tau)


def paper_update(params: ScalingParams, arch: ArchSpec, tau: float, tau_hat: float, eta: float) -> float:
    return tau - paper_step(params, arch, tau, tau_hat, eta)


def exact_update(params: ScalingParams, arch: ArchSpec, tau: float, tau_hat: float, eta: float) -> float:
    return tau - eta * (count_at_real(params, arch, tau) - tau_hat) * exact_direction(params, arch, tau)


def default_eta(params: ScalingParams, arch: ArchSpec, tau_hat: float, method: str) -> float:
    """Step size that makes the first step well scaled.

    For ``paper-sgd`` this is ``0.5 / sum beta alpha tau_hat^(beta-1)``; for
    ``exact-sgd`` it is ``1 / G^2`` with ``G = dh/dtau`` at ``tau_hat``, i.e.
    a Newton step frozen at the start point.
    """
    if method == "paper-sgd":
        d = paper_direction(params, tau_hat)
        return 0.5 / abs(d) if d else 1.0
    g = exact_direction(params, arch, tau_hat)
    return 1.0 / (g * g) if g else 1.0


def _gradient_descent(params, arch, tau_hat, opts):
    update = paper_update if opts.method == "paper-sgd" else exact_update
    eta = opts.eta if opts.eta is not None else default_eta(params, arch, tau_hat, opts.method)
    tau = init_tau(params, tau_hat)
    res = DescentResult(tau)
    for i in range(opts.max_iters + 1):
        h = count_at_real(params, arch, tau)
        res.trace.append((tau, h))
        res.tau_star, res.iterations = tau, i
        if abs(h - tau_hat) <= opts.rel_tol * tau_hat:
            res.converged = True
            return res
        if i == opts.max_iters:
            break
        new = update(params, arch, tau, tau_hat, eta)
        if not math.isfinite(new) or new <= 0:
            raise StepSizeError(f"update left the positive reals (tau={new}); try a smaller eta than {eta:g}")
        tau = new
    return res


def _bisection(params, arch, tau_hat, opts):
    def f(t):
        h = count_at(params, arch, t)
        res.trace.append((t, float(h)))
        return h - tau_hat

    tau0 = init_tau(params, tau_hat)
    res = DescentResult(tau0)
    best = (abs(f(tau0)), tau0)
    f0 = res.trace[0][1] - tau_hat
    if best[0] <= opts.rel_tol * tau_hat:
        res.converged = True
        return res

    other = None
    for k in range(1, MAX_BRACKET_STEPS + 1):
        for t in (tau0 * 2.0 ** k, tau0 * 2.0 ** -k):
            ft = f(t)
            best = min(best, (abs(ft), t))
            if ft == 0 or (ft > 0) != (f0 > 0):
                other = (t, ft)
                break
        if other:
            break
    if other is None:
        res.tau_star = best[1]
        res.iterations = len(res.trace) - 1
        if all(b == 0 for b in params.beta):
            return res
        raise NoBracketError(f"no tau within 2^{MAX_BRACKET_STEPS} of the target brackets {tau_hat}")

    lo, flo = (tau0, f0)
    hi, fhi = other
    for _ in range(opts.max_iters):
        if best[0] <= opts.rel_tol * tau_hat or abs(math.log(hi / lo)) < 1e-12:
            break
        mid = math.sqrt(lo * hi)
        fm = f(mid)
        best = min(best, (abs(fm), mid))
        if (fm > 0) == (flo > 0) and fm != 0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    res.tau_star = best[1]
    res.iterations = len(res.trace) - 1
    res.converged = best[0] <= opts.rel_tol * tau_hat
    return res


def tau_descent(params: ScalingParams, arch: ArchSpec, tau_hat: float,
                opts: TauDescentOpts = TauDescentOpts()) -> DescentResult:
    """Search ``tau`` so that the generated configuration counts ``tau_hat``."""
    if params.num_layers != arch.num_prunable:
        raise DomainError(f"params cover {params.num_layers} layers, {arch.name} has {arch.num_prunable}")
    init_tau(params, tau_hat)
    if opts.method == "bisection":
        return _bisection(params, arch, tau_hat, opts)
    return _gradient_descent(params, arch, tau_hat, opts)


def repair_widths(arch: ArchSpec, widths, target: int, tol: float, predicted=None, rounds: int = 4):
    """Nudge an integer configuration into the budget tolerance.

    Tries every change of at most two layers by up to two channels, keeping
    the candidate closest to the predicted (unrounded) widths among those
    inside the tolerance; otherwise moves to the candidate with the smallest
    budget error and repeats.
    """
    widths = tuple(int(w) for w in widths)
    pred = np.asarray(widths if predicted is None else predicted, dtype=np.float64)

    def err(ws):
        return abs(count_params(arch, ws) - target)

    def deviation(ws):
        return float(np.sum(np.abs(np.asarray(ws) - pred) / np.maximum(pred, 1.0)))

    current = widths
    L = len(widths)
    for _ in range(rounds):
        if err(current) <= tol * target:
            return current
        cands = []
        steps = (-2, -1, 1, 2)
        for l in range(L):
            for d in steps:
                cands.append(((l, d),))
        for l, m in itertools.combinations(range(L), 2):
            for d, e in itertools.product(steps, steps):
                cands.append(((l, d), (m, e)))
        ok, fallback = None, None
        for change in cands:
            ws = list(current)
            for l, d in change:
                ws[l] += d
            if min(ws) < 1:
                continue
            ws = tuple(ws)
            e = err(ws)
            if e <= tol * target:
                key = (deviation(ws), ws)
                ok = key if ok is None or key < ok else ok
            elif fallback is None or (e, ws) < fallback:
                fallback = (e, ws)
        if ok is not None:
            return ok[1]
        if fallback is None or fallback[0] >= err(current):
            break
        current = fallback[1]
    return current


def generate_widths(params: ScalingParams, arch: ArchSpec, tau_hat: int,
                    opts: TauDescentOpts = TauDescentOpts()) -> ScaledConfig:
    """Integer width configuration meeting the budget ``tau_hat``."""
    res = tau_descent(params, arch, tau_hat, opts)
    predicted = params.widths_at(res.tau_star)
    widths = rounded_widths(params, res.tau_star)
    achieved = count_params(arch, widths)
    repaired = False
    if abs(achieved - tau_hat) > opts.budget_tol * tau_hat and opts.repair:
        fixed = repair_widths(arch, widths, int(tau_hat), opts.budget_tol, predicted)
        if fixed != widths:
            widths, achieved, repaired = fixed, count_params(arch, fixed), True
    converged = abs(achieved - tau_hat) <= opts.budget_tol * tau_hat
    return ScaledConfig(widths, achieved, int(tau_hat), float(res.tau_star), res.iterations,
                        converged, opts.method, repaired)
