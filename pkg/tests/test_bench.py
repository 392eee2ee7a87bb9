import numpy as np
import pytest

from widthscale.arch import count_params, mlp, uniform_widths
from widthscale.bench import CSV_COLUMNS, compare
from widthscale.data import make_blobs
from widthscale.descent import DescentConfig
from widthscale.engine import TrainSchedule
from widthscale.errors import WidthScaleError
from widthscale.io import read_csv, read_json
from widthscale.prune import PruneConfig

SCHED = TrainSchedule(epochs=1, batch_size=64)
DESC = DescentConfig(PruneConfig(pretrain_epochs=1, q=5), max_iters=2)


@pytest.fixture(scope="module")
def setup():
    arch = mlp(hidden=(30, 20, 10))
    budgets = [count_params(arch, uniform_widths(arch, r)) for r in (0.5, 0.75)]
    return arch, make_blobs(n_train=256, n_val=64), budgets


def test_single_method_single_repeat(setup):
    arch, data, budgets = setup
    rep = compare(arch, data, budgets[:1], ["uniform"], repeats=1, schedule=SCHED, descent=DESC)
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert row.widths == uniform_widths(arch, 0.5)
    assert len(row.accuracies) == 1 and 0.0 <= row.accuracies[0] <= 1.0
    assert row.mean == row.min == row.max


def test_full_comparison(setup, tmp_path):
    arch, data, budgets = setup
    rep = compare(arch, data, budgets, repeats=2, seed=3, schedule=SCHED, descent=DESC,
                  history_dir=tmp_path / "history")
    assert len(rep.rows) == 8 and not any(r.error for r in rep.rows)
    for b in budgets:
        assert rep.max_budget_gap(b) <= 0.02
        for r in rep.rows:
            if r.budget == b:
                assert abs(r.achieved_params - b) <= 0.01 * b
    assert sum(rep.meta["morphnet_survivors"]) == int(np.ceil(0.5 * sum(arch.default_widths)))
    paths = rep.write(tmp_path)
    stored = read_json(paths["report"])
    for r in stored["rows"]:
        assert r["seeds"] == [3, 4]
        assert r["mean"] == pytest.approx(np.mean(r["accuracies"]), abs=0, rel=1e-15)
        assert r["min"] == min(r["accuracies"]) and r["max"] == max(r["accuracies"])
    rows = read_csv(paths["accuracy_csv"])
    assert list(rows[0]) == CSV_COLUMNS and len(rows) == 8
    assert (tmp_path / "history" / "manifest.json").is_file()
    assert stored["trend"]["available"]


def test_infeasible_budget_is_reported(setup):
    arch, data, _ = setup
    rep = compare(arch, data, [10], ["uniform"], repeats=1, schedule=SCHED, descent=DESC)
    assert rep.rows[0].error.startswith("InfeasibleBudgetError") and not rep.rows[0].accuracies


def test_rejects_unknown_methods_and_repeats(setup):
    arch, data, budgets = setup
    with pytest.raises(WidthScaleError):
        compare(arch, data, budgets, ["magic"])
    with pytest.raises(WidthScaleError):
        compare(arch, data, budgets, ["uniform"], repeats=0)
