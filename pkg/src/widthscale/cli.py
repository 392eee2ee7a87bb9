"""Command-line interface.

Exit status: 0 success, 2 usage error, 3 invalid input (domain, structural
or parse errors), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .arch import count_params, load_arch, uniform_widths
from .bench import METHODS, compare
from .data import load_dataset, synthetic_for
from .descent import DescentConfig, architecture_descent
from .engine import TrainSchedule
from .errors import NumericalError, WidthScaleError
from .io import RunManifest, load_params, load_trajectory, load_widths, save_params, save_trajectory, \
    save_widths, write_csv
from .powerlaw import fit_trajectory, predict_width
from .prune import PruneConfig, iterative_prune
from .scaler import METHODS as SCALE_METHODS
from .scaler import TauDescentOpts, generate_widths

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("widthscale")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _number(text: str) -> int:
    """Integer budget, accepting forms like ``1e6`` or ``250000``."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"budget must be a whole number: {text!r}")
    return int(v)


def _int_list(text: str) -> list[int]:
    return [_number(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    g.add_argument("--arch", default="mlp", help="preset name or architecture JSON file (default mlp)")
    g.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bit-identical reruns")
    g.add_argument("--out", default=".", help="output directory (default .)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_opts(p):
    p.add_argument("--data", help="dataset file; default is a synthetic set matching the architecture")


def _prune_opts(p):
    g = p.add_argument_group("pruning")
    d = PruneConfig()
    g.add_argument("--pretrain-epochs", type=int, default=d.pretrain_epochs)
    g.add_argument("--pretrain-lr", type=float, default=d.pretrain_lr)
    g.add_argument("--prune-lr", type=float, default=None)
    g.add_argument("--q", type=int, default=d.q, help="training iterations between prune steps")
    g.add_argument("--prune-count", type=float, default=d.prune_count,
                   help="channels per prune step: count >= 1 or fraction of all channels")
    g.add_argument("--eps-fraction", type=float, default=d.eps_fraction)
    g.add_argument("--batch-size", type=int, default=d.batch_size)


def _scale_opts(p):
    g = p.add_argument_group("budget search")
    g.add_argument("--method", choices=SCALE_METHODS, default="bisection")
    g.add_argument("--eta", type=float, default=None)
    g.add_argument("--rel-tol", type=float, default=0.005)
    g.add_argument("--budget-tol", type=float, default=0.01)


def _budget_opts(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--target", type=_number, help="parameter budget, e.g. 1e6")
    g.add_argument("--ratio", type=float, help="budget = count of the defaults scaled by this ratio")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="widthscale", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("count", parents=[common], help="parameter count of a width configuration")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ratio", type=float, help="uniform ratio applied to the default widths")
    g.add_argument("--widths", help="comma-separated widths or a width-config file")

    p = sub.add_parser("prune", parents=[common], help="iterative pruning, writes trajectory.jsonl")
    _data_opts(p)
    _prune_opts(p)
    p.add_argument("--start-ratio", type=float, default=1.0, help="scale the starting widths")

    p = sub.add_parser("fit", parents=[common], help="fit power laws to a trajectory, writes params.json")
    p.add_argument("--trajectory", required=True)

    p = sub.add_parser("scale", parents=[common], help="widths meeting a budget, writes widths.json")
    p.add_argument("--params", required=True)
    _budget_opts(p)
    _scale_opts(p)

    p = sub.add_parser("descend", parents=[common], help="architecture descent, writes history/")
    _data_opts(p)
    _budget_opts(p)
    _prune_opts(p)
    _scale_opts(p)
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--patience", type=int, default=2)

    p = sub.add_parser("compare", parents=[common], help="train and compare methods at matched budgets")
    _data_opts(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--budgets", type=_int_list, help="comma-separated budgets")
    g.add_argument("--ratios", type=_float_list, help="budgets as counts of uniformly scaled defaults")
    p.add_argument("--methods", default=",".join(METHODS), help=f"subset of {','.join(METHODS)}")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=3, help="architecture descent iterations")
    p.add_argument("--reference", type=_number, default=None, help="budget the descent runs at")
    _prune_opts(p)
    _scale_opts(p)

    p = sub.add_parser("sweep-pretrain", parents=[common], help="descent for several pre-training lengths")
    _data_opts(p)
    _budget_opts(p)
    _prune_opts(p)
    _scale_opts(p)
    p.add_argument("--values", type=_int_list, required=True, help="comma-separated pre-training epochs")
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--patience", type=int, default=2)
    return parser


def _prune_config(a) -> PruneConfig:
    return PruneConfig(pretrain_epochs=a.pretrain_epochs, pretrain_lr=a.pretrain_lr, prune_lr=a.prune_lr,
                       q=a.q, prune_count=a.prune_count, eps_fraction=a.eps_fraction,
                       batch_size=a.batch_size, seed=a.seed)


def _scale_config(a) -> TauDescentOpts:
    return TauDescentOpts(method=a.method, eta=a.eta, rel_tol=a.rel_tol, budget_tol=a.budget_tol)


def _dataset(a, arch):
    return load_dataset(a.data) if a.data else synthetic_for(arch, seed=a.seed)


def _budget(a, arch) -> int:
    return a.target if a.target is not None else count_params(arch, uniform_widths(arch, a.ratio))


def _human(n: int) -> str:
    return f"{n / 1e6:.2f}M" if n >= 1e5 else f"{n / 1e3:.2f}K"


def _cmd_count(a, arch, out, man):
    if a.widths:
        if Path(a.widths).is_file():
            widths = load_widths(a.widths)["widths"]
        else:
            widths = tuple(int(t) for t in a.widths.split(","))
    else:
        widths = uniform_widths(arch, 1.0 if a.ratio is None else a.ratio)
    n = count_params(arch, widths)
    print(f"{arch.name} widths={','.join(map(str, widths))}")
    print(f"params {n} ({_human(n)})")
    man.config.update(widths=list(widths), params=n)


def _cmd_prune(a, arch, out, man):
    cfg = _prune_config(a)
    start = uniform_widths(arch, a.start_ratio)
    traj = iterative_prune(arch, _dataset(a, arch), cfg, widths=start)
    save_trajectory(traj, out / "trajectory.jsonl")
    man.config.update(prune=cfg.to_dict(), start_widths=list(start))
    man.artifacts["trajectory"] = "trajectory.jsonl"
    print(f"{len(traj)} records, tau {traj.records[0].tau} -> {traj.records[-1].tau}, "
          f"{traj.meta['final_alive']} channels left")


def _cmd_fit(a, arch, out, man):
    traj = load_trajectory(a.trajectory)
    params = fit_trajectory(traj)
    save_params(params, out / "params.json")
    rows = []
    for rec in traj.records:
        for l, phi in enumerate(rec.phi):
            rows.append([rec.tau, l, phi, predict_width(params, l, rec.tau)])
    write_csv(out / "curve.csv", ["params", "layer", "observed", "fitted"], rows)
    man.config.update(trajectory=str(a.trajectory))
    man.artifacts.update(params="params.json", curve_csv="curve.csv")
    for l, (al, be) in enumerate(zip(params.alpha, params.beta)):
        print(f"layer {l}: alpha {al:.6g} beta {be:.6g}")


def _cmd_scale(a, arch, out, man):
    params = load_params(a.params)
    target = _budget(a, arch)
    opts = _scale_config(a)
    sc = generate_widths(params, arch, target, opts)
    save_widths(out / "widths.json", arch.name, sc.widths, sc)
    man.config.update(params=str(a.params), target=target, scale=asdict(opts))
    man.artifacts["widths"] = "widths.json"
    print(f"widths {','.join(map(str, sc.widths))}")
    print(f"params {sc.achieved_params} target {target} error {100 * sc.rel_error:.3f}%"
          + ("" if sc.converged else " (outside tolerance)"))


def _descent_config(a, pretrain=None) -> DescentConfig:
    prune = _prune_config(a)
    if pretrain is not None:
        prune = replace(prune, pretrain_epochs=pretrain)
    return DescentConfig(prune, _scale_config(a), a.iters, a.threshold, a.patience)


def _run_descent(arch, data, target, cfg, hdir):
    hist = architecture_descent(arch, data, target, cfg, history_dir=hdir)
    for it in hist.iterations:
        print(f"iter {it.index}: widths {','.join(map(str, it.widths))} params {it.achieved_params} "
              f"delta {it.delta:.4f}")
    return hist


def _cmd_descend(a, arch, out, man):
    cfg = _descent_config(a)
    target = _budget(a, arch)
    man.config.update(target=target, descent=cfg.identity(), max_iters=cfg.max_iters)
    man.seeds = [cfg.seed_for(i) for i in range(1, cfg.max_iters + 1)]
    man.artifacts["history"] = "history"
    _run_descent(arch, _dataset(a, arch), target, cfg, out / "history")


def _cmd_sweep(a, arch, out, man):
    target = _budget(a, arch)
    data = _dataset(a, arch)
    man.config.update(target=target, values=a.values)
    for p in a.values:
        cfg = _descent_config(a, pretrain=p)
        print(f"pretrain epochs {p}")
        _run_descent(arch, data, target, cfg, out / f"pretrain_{p:03d}" / "history")
        man.artifacts[f"history_P{p}"] = f"pretrain_{p:03d}/history"


def _cmd_compare(a, arch, out, man):
    budgets = a.budgets or [count_params(arch, uniform_widths(arch, r)) for r in a.ratios]
    methods = [m.strip() for m in a.methods.split(",") if m.strip()]
    if set(methods) - set(METHODS):
        raise UsageError(f"unknown methods {sorted(set(methods) - set(METHODS))}; choose from {METHODS}")
    sched = TrainSchedule(learning_rate=a.lr, epochs=a.epochs, batch_size=a.batch_size, seed=a.seed)
    cfg = DescentConfig(_prune_config(a), _scale_config(a), max_iters=a.iters)
    report = compare(arch, _dataset(a, arch), budgets, methods, a.repeats, a.seed, sched, cfg,
                     reference_budget=a.reference, history_dir=out / "history")
    man.artifacts.update({k: Path(v).name for k, v in report.write(out).items()})
    man.artifacts["history"] = "history"
    man.config.update(budgets=budgets, methods=methods, repeats=a.repeats, descent=cfg.identity())
    man.seeds = [a.seed + r for r in range(a.repeats)]
    for row in report.rows:
        if row.error:
            print(f"{row.method:16s} {row.budget:>10d}  {row.error}")
        else:
            print(f"{row.method:16s} {row.budget:>10d} params {row.achieved_params:>10d} "
                  f"acc mean {row.mean:.4f} min {row.min:.4f} max {row.max:.4f}")
    t = report.trend()
    if t.get("available"):
        print(f"smallest budget {t['budget']}: {t['method']} mean {t['method_mean']:.4f} vs uniform "
              f"{t['uniform_mean']:.4f} (descriptive)")


COMMANDS = {"count": _cmd_count, "prune": _cmd_prune, "fit": _cmd_fit, "scale": _cmd_scale,
            "descend": _cmd_descend, "compare": _cmd_compare, "sweep-pretrain": _cmd_sweep}


def _limits(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        a = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(a.out)
    man = RunManifest(a.command, {"arch": a.arch, "seed": a.seed, "deterministic": a.deterministic},
                      seeds=[a.seed], argv=argv)
    code = EXIT_OK
    try:
        with _limits(a.deterministic):
            arch = load_arch(a.arch)
            out.mkdir(parents=True, exist_ok=True)
            COMMANDS[a.command](a, arch, out, man)
    except UsageError as e:
        print(f"widthscale: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"widthscale: numerical error: {e}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except (WidthScaleError, OSError) as e:
        print(f"widthscale: error: {e}", file=sys.stderr)
        code = EXIT_DOMAIN
    if out.is_dir():
        man.finish("ok" if code == EXIT_OK else f"error: exit {code}")
        man.write(out / "run.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
