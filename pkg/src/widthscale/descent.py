"""Architecture descent: repeat prune -> fit -> regenerate at a fixed budget.

Iteration 0 is the uniformly scaled default that meets the budget. Each
later iteration trains a freshly initialized network at the previous
iteration's widths, prunes it, fits the power laws and regenerates widths at
the same budget. The loop stops after ``max_iters`` iterations or once the
relative width change stays at or below ``threshold`` for ``patience``
consecutive iterations.

With a history directory every completed iteration is written to disk::

    history/
      manifest.json            index of iterations, config, status
      iter_000/widths.json     starting configuration
      iter_001/trajectory.jsonl
      iter_001/params.json
      iter_001/widths.json
      iter_001/manifest.json
      ...

and a rerun with the same settings resumes after the last completed one.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

from .arch import ArchSpec, count_params
from .baselines import uniform_match
from .data import Dataset
from .errors import StructuralError, WidthScaleError
from .io import load_params, load_trajectory, load_widths, read_json, save_params, save_trajectory, \
    save_widths, scaled_from_dict, write_json
from .powerlaw import ScalingParams, fit_trajectory
from .prune import PruneConfig, PruneTrajectory, iterative_prune
from .scaler import ScaledConfig, TauDescentOpts, generate_widths

log = logging.getLogger(__name__)

HISTORY_SCHEMA = "widthscale.descent-history"


def convergence_delta(prev, new) -> float:
    """``sum |new - prev| / sum prev``."""
    if len(prev) != len(new):
        raise StructuralError(f"width vectors differ in length ({len(prev)} vs {len(new)})")
    return sum(abs(int(b) - int(a)) for a, b in zip(prev, new)) / sum(int(a) for a in prev)


@dataclass(frozen=True)
class DescentConfig:
    prune: PruneConfig = PruneConfig()
    scale: TauDescentOpts = TauDescentOpts()
    max_iters: int = 15
    threshold: float = 0.02
    patience: int = 2

    def __post_init__(self):
        if self.max_iters < 1 or self.patience < 1 or self.threshold < 0:
            raise WidthScaleError("need max_iters >= 1, patience >= 1, threshold >= 0")

    def seed_for(self, iteration: int) -> int:
        return self.prune.seed + iteration

    def identity(self) -> dict:
        """Settings that must match for a history directory to be resumed."""
        return {"prune": self.prune.to_dict(), "scale": asdict(self.scale),
                "threshold": self.threshold, "patience": self.patience}


@dataclass
class DescentIteration:
    index: int
    seed: int
    start_widths: tuple[int, ...]
    params: ScalingParams
    scaled: ScaledConfig
    delta: float
    trajectory: PruneTrajectory | None = None
    trajectory_file: str | None = None

    @property
    def widths(self) -> tuple[int, ...]:
        return self.scaled.widths

    @property
    def achieved_params(self) -> int:
        return self.scaled.achieved_params


@dataclass
class DescentHistory:
    arch_name: str
    tau_hat: int
    initial_widths: tuple[int, ...]
    iterations: list[DescentIteration] = field(default_factory=list)
    converged: bool = False
    failure: dict | None = None

    def __len__(self):
        return len(self.iterations)

    @property
    def final_widths(self) -> tuple[int, ...]:
        return self.iterations[-1].widths if self.iterations else self.initial_widths


def _iter_dir(root: Path, i: int) -> Path:
    return root / f"iter_{i:03d}"


def _stable(history: DescentHistory, cfg: DescentConfig) -> bool:
    tail = history.iterations[-cfg.patience:]
    return len(tail) == cfg.patience and all(it.delta <= cfg.threshold for it in tail)


def _write_index(root: Path, arch: ArchSpec, history: DescentHistory, cfg: DescentConfig, status: str):
    write_json(root / "manifest.json", {
        "schema": HISTORY_SCHEMA, "version": 1, "arch": arch.name, "L": arch.num_prunable,
        "tau_hat": history.tau_hat, "config": cfg.identity(), "max_iters": cfg.max_iters,
        "initial_widths": list(history.initial_widths), "status": status,
        "converged": history.converged, "failure": history.failure,
        "iterations": [{"index": it.index, "dir": _iter_dir(Path("."), it.index).name, "seed": it.seed,
                        "achieved_params": it.achieved_params, "delta": it.delta} for it in history.iterations],
    })


def _save_iteration(root: Path, arch: ArchSpec, it: DescentIteration):
    d = _iter_dir(root, it.index)
    d.mkdir(parents=True, exist_ok=True)
    save_trajectory(it.trajectory, d / "trajectory.jsonl")
    save_params(it.params, d / "params.json")
    save_widths(d / "widths.json", arch.name, it.widths, it.scaled)
    write_json(d / "manifest.json", {
        "schema": "widthscale.descent-iteration", "version": 1, "arch": arch.name, "L": arch.num_prunable,
        "index": it.index, "seed": it.seed, "start_widths": list(it.start_widths), "delta": it.delta,
        "files": {"trajectory": "trajectory.jsonl", "params": "params.json", "widths": "widths.json"},
    })
    it.trajectory_file = str(d / "trajectory.jsonl")


def _load_iteration(root: Path, index: int) -> DescentIteration:
    d = _iter_dir(root, index)
    man = read_json(d / "manifest.json")
    w = load_widths(d / "widths.json")
    return DescentIteration(index, man["seed"], tuple(man["start_widths"]), load_params(d / "params.json"),
                            scaled_from_dict(w), man["delta"], load_trajectory(d / "trajectory.jsonl"),
                            str(d / "trajectory.jsonl"))


def _resume(root: Path, arch: ArchSpec, tau_hat: int, cfg: DescentConfig) -> DescentHistory | None:
    index = root / "manifest.json"
    if not index.exists():
        return None
    man = read_json(index)
    if man.get("arch") != arch.name or man.get("tau_hat") != tau_hat or man.get("config") != cfg.identity():
        raise WidthScaleError(f"{root} holds a descent run with different settings; use a fresh directory")
    history = DescentHistory(arch.name, tau_hat, tuple(man["initial_widths"]))
    for entry in man["iterations"]:
        history.iterations.append(_load_iteration(root, entry["index"]))
    history.converged = _stable(history, cfg)
    log.info("resuming %s after %d completed iterations", root, len(history))
    return history


def architecture_descent(arch: ArchSpec, data: Dataset, tau_hat: int, cfg: DescentConfig = DescentConfig(),
                         history_dir: str | Path | None = None,
                         on_iteration: Callable[[DescentIteration], None] | None = None) -> DescentHistory:
    """Run (or resume) architecture descent at budget ``tau_hat``.

    Iteration ``i`` prunes with seed ``cfg.prune.seed + i``. On failure the
    partial history is saved with a failure marker and attached to the
    exception as ``partial_history``.
    """
    root = Path(history_dir) if history_dir is not None else None
    history = _resume(root, arch, tau_hat, cfg) if root else None
    if history is None:
        history = DescentHistory(arch.name, tau_hat, uniform_match(arch, tau_hat))
        if root:
            _iter_dir(root, 0).mkdir(parents=True, exist_ok=True)
            save_widths(_iter_dir(root, 0) / "widths.json", arch.name, history.initial_widths,
                        achieved_params=count_params(arch, history.initial_widths), target=tau_hat)
            _write_index(root, arch, history, cfg, "running")

    history.failure = None
    while len(history) < cfg.max_iters and not history.converged:
        i = len(history) + 1
        start = history.final_widths
        seed = cfg.seed_for(i)
        try:
            traj = iterative_prune(arch, data, replace(cfg.prune, seed=seed), widths=start)
            params = fit_trajectory(traj)
            sc = generate_widths(params, arch, tau_hat, cfg.scale)
        except Exception as e:
            history.failure = {"iteration": i, "error": type(e).__name__, "message": str(e)}
            if root:
                _write_index(root, arch, history, cfg, "failed")
            e.partial_history = history
            raise
        it = DescentIteration(i, seed, start, params, sc, convergence_delta(start, sc.widths), traj)
        if not sc.converged:
            log.warning("iteration %d: config misses the budget by %.3f%%", i, 100 * sc.rel_error)
        history.iterations.append(it)
        history.converged = _stable(history, cfg)
        if root:
            _save_iteration(root, arch, it)
            _write_index(root, arch, history, cfg, "running")
        log.info("iteration %d: widths %s, params %d, delta %.4f", i, sc.widths, sc.achieved_params, it.delta)
        if on_iteration:
            on_iteration(it)
    if root:
        _write_index(root, arch, history, cfg, "done")
    return history
