"""Matched-budget comparison of width-scaling methods.

For every (method, budget) pair a width configuration is derived, ``R``
networks are trained from scratch with seeds ``seed + r`` and the best
per-epoch validation accuracy of each run is kept. Rows report the mean,
minimum and maximum over the ``R`` runs together with the raw values.

Methods:

``uniform``
    default widths times one ratio.
``morphnet-taylor``
    prune to half the channels, then one multiplier.
``powerlaw-iter1`` / ``powerlaw-iterK``
    power laws fitted in the first / last iteration of one architecture
    descent run at a reference budget, evaluated at each budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .arch import ArchSpec, count_params
from .baselines import morphnet_taylor, uniform_match
from .data import Dataset
from .descent import DescentConfig, DescentHistory, architecture_descent
from .engine import TrainSchedule, init_network, train
from .errors import WidthScaleError
from .io import write_csv, write_json
from .prune import prune_to_fraction
from .scaler import generate_widths

log = logging.getLogger(__name__)

METHODS = ("uniform", "morphnet-taylor", "powerlaw-iter1", "powerlaw-iterK")
REPORT_SCHEMA = "widthscale.comparison"
CSV_COLUMNS = ["params", "mean", "min", "max", "method"]


@dataclass
class ReportRow:
    method: str
    budget: int
    widths: tuple[int, ...] | None = None
    achieved_params: int | None = None
    accuracies: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    error: str | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def min(self) -> float:
        return float(np.min(self.accuracies)) if self.accuracies else float("nan")

    @property
    def max(self) -> float:
        return float(np.max(self.accuracies)) if self.accuracies else float("nan")

    def to_dict(self) -> dict:
        d = {"method": self.method, "budget": self.budget, "error": self.error, "seeds": self.seeds,
             "widths": None if self.widths is None else list(self.widths),
             "achieved_params": self.achieved_params, "accuracies": self.accuracies}
        if self.accuracies:
            d.update(mean=self.mean, min=self.min, max=self.max)
        return d


@dataclass
class ComparisonReport:
    arch_name: str
    budgets: list[int]
    methods: list[str]
    repeats: int
    rows: list[ReportRow]
    meta: dict = field(default_factory=dict)

    def row(self, method: str, budget: int) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.budget == budget:
                return r
        raise KeyError((method, budget))

    def max_budget_gap(self, budget: int) -> float:
        """Largest pairwise relative count difference among rows at ``budget``."""
        counts = [r.achieved_params for r in self.rows if r.budget == budget and r.achieved_params is not None]
        return (max(counts) - min(counts)) / budget if counts else 0.0

    def trend(self) -> dict:
        """Whether the last power-law iteration matches or beats uniform scaling at the smallest budget.

        Descriptive only.
        """
        b = min(self.budgets)
        ours = "powerlaw-iterK" if "powerlaw-iterK" in self.methods else "powerlaw-iter1"
        if ours not in self.methods or "uniform" not in self.methods:
            return {"budget": b, "available": False}
        a, u = self.row(ours, b), self.row("uniform", b)
        if not a.accuracies or not u.accuracies:
            return {"budget": b, "available": False}
        return {"budget": b, "available": True, "method": ours, "method_mean": a.mean,
                "uniform_mean": u.mean, "method_at_least_uniform": a.mean >= u.mean}

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "version": 1, "arch": self.arch_name, "budgets": self.budgets,
                "methods": self.methods, "repeats": self.repeats, "meta": self.meta,
                "rows": [r.to_dict() for r in self.rows], "trend": self.trend()}

    def csv_rows(self):
        for r in sorted(self.rows, key=lambda r: (r.method, r.budget)):
            if r.accuracies:
                yield [r.achieved_params, r.mean, r.min, r.max, r.method]

    def write(self, out_dir: str | Path) -> dict[str, str]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "report.json", self.to_dict())
        write_csv(out / "accuracy.csv", CSV_COLUMNS, self.csv_rows())
        return {"report": str(out / "report.json"), "accuracy_csv": str(out / "accuracy.csv")}


def best_accuracy(arch: ArchSpec, widths, data: Dataset, sched: TrainSchedule, seed: int) -> float:
    """Train a fresh network and return its best per-epoch validation accuracy."""
    net = init_network(arch, widths, seed)
    log_ = train(net, data, replace(sched, seed=seed), eval_every_epoch=True)
    return max(log_.val_accuracy) if log_.val_accuracy else 0.0


def compare(arch: ArchSpec, data: Dataset, budgets, methods=METHODS, repeats: int = 5, seed: int = 0,
            schedule: TrainSchedule = TrainSchedule(), descent: DescentConfig = DescentConfig(max_iters=3),
            reference_budget: int | None = None, history_dir: str | Path | None = None) -> ComparisonReport:
    """Derive configs for every (method, budget), train ``repeats`` times each, aggregate."""
    requested = set(methods)
    methods = [m for m in METHODS if m in requested]
    if requested - set(METHODS) or not methods:
        raise WidthScaleError(f"choose methods from {', '.join(METHODS)}")
    if repeats < 1:
        raise WidthScaleError("repeats must be >= 1")
    budgets = sorted(int(b) for b in budgets)
    ref = int(reference_budget) if reference_budget else count_params(arch, arch.default_widths)
    meta = {"seed": seed, "reference_budget": ref, "schedule": vars(schedule).copy()}
    meta["schedule"]["milestones"] = list(schedule.milestones)

    history: DescentHistory | None = None
    if any(m.startswith("powerlaw") for m in methods):
        history = architecture_descent(arch, data, ref, replace(descent, prune=replace(descent.prune, seed=seed)),
                                       history_dir=history_dir)
        meta["descent_iterations"] = len(history)
    survivors = None
    if "morphnet-taylor" in methods:
        survivors, _ = prune_to_fraction(arch, data, replace(descent.prune, seed=seed), 0.5)
        meta["morphnet_survivors"] = list(survivors)

    cells: dict[tuple[str, int], ReportRow] = {}
    for method in methods:
        for b in budgets:
            row = ReportRow(method, b)
            try:
                if method == "uniform":
                    row.widths = uniform_match(arch, b)
                elif method == "morphnet-taylor":
                    row.widths = morphnet_taylor(arch, data, b, descent.prune, survivors=survivors).widths
                else:
                    it = history.iterations[0] if method == "powerlaw-iter1" else history.iterations[-1]
                    row.widths = generate_widths(it.params, arch, b, descent.scale).widths
                row.achieved_params = count_params(arch, row.widths)
            except WidthScaleError as e:
                row.error = f"{type(e).__name__}: {e}"
            cells[(method, b)] = row

    for (method, b), row in sorted(cells.items()):
        if row.widths is None:
            continue
        for r in range(repeats):
            row.seeds.append(seed + r)
            row.accuracies.append(best_accuracy(arch, row.widths, data, schedule, seed + r))
        log.info("%s @ %d: widths %s, mean acc %.4f", method, b, row.widths, row.mean)

    rows = [cells[(m, b)] for m in methods for b in budgets]
    return ComparisonReport(arch.name, budgets, methods, repeats, rows, meta)
