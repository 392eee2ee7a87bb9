"""Text artifact formats: trajectories, fitted parameters, width configs, manifests.

Every file names its schema, schema version, architecture and layer count.
JSON floats are written with ``repr`` precision, so values round-trip
exactly.

Trajectory files are line-delimited JSON. Line 1 is a header::

    {"L": 4, "arch": "mlp", "meta": {...}, "n_records": 27,
     "schema": "widthscale.trajectory", "version": 1}

and each following line is one record ``{"phi": [...], "step": 22, "tau": 4155}``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ParseError, SchemaError
from .powerlaw import ScalingParams
from .prune import PruneTrajectory, TrajectoryRecord
from .scaler import ScaledConfig

TRAJECTORY_SCHEMA = "widthscale.trajectory"
PARAMS_SCHEMA = "widthscale.scaling-params"
WIDTHS_SCHEMA = "widthscale.widths"
MANIFEST_SCHEMA = "widthscale.run-manifest"
VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def write_json(path: str | Path, obj) -> None:
    """Deterministic, human-readable JSON with a trailing newline."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e.msg}", e.lineno) from None


def _check_schema(d, schema, path):
    if not isinstance(d, dict) or d.get("schema") != schema:
        found = d.get("schema") if isinstance(d, dict) else type(d).__name__
        raise SchemaError(f"{path}: expected schema {schema!r}, found {found!r}")
    if d.get("version") != VERSION:
        raise SchemaError(f"{path}: unsupported {schema} version {d.get('version')!r}")


# trajectories

def save_trajectory(traj: PruneTrajectory, path: str | Path) -> None:
    header = {"schema": TRAJECTORY_SCHEMA, "version": VERSION, "arch": traj.arch_name,
              "L": traj.num_layers, "n_records": len(traj.records), "meta": traj.meta}
    lines = [_dumps(header)]
    lines += [_dumps({"step": r.step, "tau": r.tau, "phi": list(r.phi)}) for r in traj.records]
    tmp = Path(str(path) + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _int_field(rec, key, lineno):
    v = rec.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise ParseError(f"line {lineno}: field {key!r} must be an integer, got {v!r}", lineno)
    return v


def load_trajectory(path: str | Path) -> PruneTrajectory:
    text = Path(path).read_text()
    if not text:
        raise ParseError(f"{path}: empty file, missing header", 1)
    if not text.endswith("\n"):
        raise ParseError(f"{path}: truncated file (no final newline)", text.count("\n") + 1)
    lines = text.splitlines()
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"line 1: malformed header: {e.msg}", 1) from None
    _check_schema(header, TRAJECTORY_SCHEMA, path)
    L = header.get("L")
    if not isinstance(L, int) or L < 1:
        raise ParseError(f"line 1: header field 'L' must be a positive integer, got {L!r}", 1)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"line {lineno}: malformed record: {e.msg}", lineno) from None
        if not isinstance(rec, dict):
            raise ParseError(f"line {lineno}: record must be an object", lineno)
        step = _int_field(rec, "step", lineno)
        tau = _int_field(rec, "tau", lineno)
        phi = rec.get("phi")
        if not isinstance(phi, list) or len(phi) != L:
            n = len(phi) if isinstance(phi, list) else phi
            raise ParseError(f"line {lineno}: phi has {n} entries, header declares L={L}", lineno)
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in phi):
            raise ParseError(f"line {lineno}: phi entries must be integers", lineno)
        records.append(TrajectoryRecord(step, tau, tuple(phi)))
    expected = header.get("n_records")
    if expected is not None and expected != len(records):
        raise ParseError(f"{path}: truncated file, header promises {expected} records, found {len(records)}",
                         len(lines) + 1)
    return PruneTrajectory(header.get("arch", ""), L, records, header.get("meta", {}))


# scaling parameters

def params_to_dict(params: ScalingParams) -> dict:
    rss = params.rss or (None,) * params.num_layers
    return {"schema": PARAMS_SCHEMA, "version": VERSION, "arch": params.arch_name,
            "L": params.num_layers, "n": params.n,
            "layers": [{"alpha": a, "beta": b, "rss": r} for a, b, r in zip(params.alpha, params.beta, rss)]}


def params_from_dict(d: dict, path="<dict>") -> ScalingParams:
    _check_schema(d, PARAMS_SCHEMA, path)
    layers = d.get("layers")
    if not isinstance(layers, list) or len(layers) != d.get("L"):
        raise ParseError(f"{path}: 'layers' must list L={d.get('L')} entries")
    try:
        alpha = tuple(float(x["alpha"]) for x in layers)
        beta = tuple(float(x["beta"]) for x in layers)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad layer entry: {e}") from None
    rss = () if any(x.get("rss") is None for x in layers) else tuple(float(x["rss"]) for x in layers)
    return ScalingParams(alpha, beta, rss, int(d.get("n", 0)), d.get("arch", ""))


def save_params(params: ScalingParams, path: str | Path) -> None:
    write_json(path, params_to_dict(params))


def load_params(path: str | Path) -> ScalingParams:
    return params_from_dict(read_json(path), path)


# width configurations

def save_widths(path: str | Path, arch_name: str, widths, scaled: ScaledConfig | None = None, **extra) -> None:
    d = {"schema": WIDTHS_SCHEMA, "version": VERSION, "arch": arch_name, "L": len(widths),
         "widths": [int(w) for w in widths]}
    if scaled is not None:
        d.update(achieved_params=scaled.achieved_params, target=scaled.target, tau_star=scaled.tau_star,
                 iterations_used=scaled.iterations_used, converged=scaled.converged,
                 method=scaled.method, repaired=scaled.repaired)
    d.update(extra)
    write_json(path, d)


def load_widths(path: str | Path) -> dict:
    """Width-config file as a dict; ``widths`` is returned as a tuple."""
    d = read_json(path)
    _check_schema(d, WIDTHS_SCHEMA, path)
    ws = d.get("widths")
    if not isinstance(ws, list) or len(ws) != d.get("L"):
        raise ParseError(f"{path}: 'widths' must list L={d.get('L')} integers")
    if not all(isinstance(w, int) and not isinstance(w, bool) for w in ws):
        raise ParseError(f"{path}: widths must be integers")
    d["widths"] = tuple(ws)
    return d


def scaled_from_dict(d: dict) -> ScaledConfig:
    return ScaledConfig(d["widths"], d["achieved_params"], d["target"], d["tau_star"],
                        d["iterations_used"], d["converged"], d["method"], d.get("repaired", False))


# manifests

def _version() -> str:
    from . import __version__
    return __version__


@dataclass
class RunManifest:
    """What was run, with what settings, producing which files."""

    command: str
    config: dict
    seeds: list[int] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    argv: list[str] = field(default_factory=list)
    tool_version: str = field(default_factory=_version)
    python: str = field(default_factory=lambda: f"{platform.python_implementation()} {sys.version.split()[0]}")
    started: str = field(default_factory=lambda: _now())
    finished: str | None = None
    status: str = "running"

    def to_dict(self) -> dict:
        return {"schema": MANIFEST_SCHEMA, "version": VERSION, **asdict(self)}

    def finish(self, status="ok") -> None:
        self.status = status
        self.finished = _now()

    def write(self, path: str | Path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        d = read_json(path)
        _check_schema(d, MANIFEST_SCHEMA, path)
        d = {k: v for k, v in d.items() if k not in ("schema", "version")}
        return cls(**d)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) and math.isfinite(v) else v for v in row])


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
