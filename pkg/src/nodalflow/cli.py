"""Spectral flows, nodal deficiency reports and lattice diagrams from the command line.

Usage:
    nodalflow flow1d     --config run.json [overrides]
    nodalflow rect       --alpha 0.9 --swap-axes --star 1,3 --out out/
    nodalflow verify-dtn --alpha 1 --star 1,3 --grids 31,63
    nodalflow lattice    --alpha 1 --star 1,3
    nodalflow report     out/report.json

Exit codes: 0 success, 2 bad configuration, 3 verification failed,
4 truncation or spectral-gap problem.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dtn2d
from . import oned_flow as od
from . import rect_flow as rf
from .config import DEFAULT_GRID, DEFAULT_SIGMA_COUNT, DEFAULT_SIGMA_MAX, MIN_GRID, TOL, sigma_grid
from .errors import GapError, NodalFlowError, TruncationError

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_WINDOW = 0, 2, 3, 4
POTENTIAL_SAMPLES = 2001


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kind: str = "rectangle"
    length: float = math.pi
    alpha: float = 1.0
    swap_axes: bool = False
    potential: str = "zero"  # interval q
    q_potential: str = "zero"
    r_potential: str = "zero"
    star: list = field(default_factory=lambda: [1, 1])
    sigma_max: float = DEFAULT_SIGMA_MAX
    sigma_count: int = DEFAULT_SIGMA_COUNT
    grid: int = DEFAULT_GRID
    grids: list = field(default_factory=lambda: [31, 63])
    align: bool = True
    epsilon: float | None = None
    out: str = "out"

    def validate(self):
        if self.kind not in ("interval", "rectangle"):
            raise ConfigError(f"kind must be 'interval' or 'rectangle', got {self.kind!r}")
        for name in ("length", "alpha", "sigma_max"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.sigma_count < 2:
            raise ConfigError("sigma_count must be >= 2")
        if self.grid < MIN_GRID or any(g < MIN_GRID for g in self.grids):
            raise ConfigError(f"grid sizes must be >= {MIN_GRID}")
        want = 1 if self.kind == "interval" else 2
        if len(self.star) != want or any(int(s) < 1 for s in self.star):
            raise ConfigError(f"star must have {want} positive integer(s), got {self.star}")
        for name in ("potential", "q_potential", "r_potential"):
            path = getattr(self, name)
            if path != "zero" and not Path(path).is_file():
                raise ConfigError(f"{name} file not found: {path}")
        return self


def load_potential(path: str, length: float) -> tuple:
    """Two-column CSV (coordinate, value) resampled uniformly onto [0, length]."""
    if path == "zero":
        return ()
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ConfigError(f"bad potential row {row} in {path}")
    if len(rows) < 2:
        raise ConfigError(f"potential file {path} needs at least two rows")
    data = np.array(sorted(rows))
    xs = np.linspace(0.0, length, POTENTIAL_SAMPLES)
    return tuple(np.interp(xs, data[:, 0], data[:, 1]))


def _parse_ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    known = RunConfig.__dataclass_fields__
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in known:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            data[key] = val
    if args.command == "flow1d":
        data.setdefault("kind", "interval")
    try:
        cfg = RunConfig(**data)
        cfg.star = [int(s) for s in cfg.star]
        cfg.grids = [int(g) for g in cfg.grids]
        cfg.grid = int(cfg.grid)
        cfg.sigma_count = int(cfg.sigma_count)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def rect_problem(cfg: RunConfig) -> rf.RectProblem:
    axis = "y" if cfg.swap_axes else "x"
    xlen = cfg.alpha * math.pi if axis == "x" else math.pi
    ylen = math.pi if axis == "x" else cfg.alpha * math.pi
    return rf.RectProblem(cfg.alpha, load_potential(cfg.q_potential, xlen),
                          load_potential(cfg.r_potential, ylen), axis)


def curves_csv(sigmas, columns: dict, limits: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["atan_sigma", *columns])
    cols = list(columns.values())
    for i, s in enumerate(sigmas):
        w.writerow([repr(math.atan(s))] + [repr(float(c[i])) for c in cols])
    w.writerow(["inf"] + [repr(float(v)) for v in limits])
    return buf.getvalue()


def write_outputs(out_dir: str, files: dict):
    """Write every file to a temp name first, then rename them into place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.")
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _metadata(cfg: RunConfig) -> dict:
    return {
        "sigma_max": cfg.sigma_max, "sigma_count": cfg.sigma_count,
        "sigma_sampling": "uniform in arctan(sigma) on [0, arctan(sigma_max)]",
        "grid": cfg.grid, "tolerances": asdict(TOL),
    }


def cmd_flow1d(cfg: RunConfig):
    if cfg.kind != "interval":
        raise ConfigError("flow1d needs kind 'interval'")
    k = cfg.star[0]
    base = od.Problem1D(cfg.length, load_potential(cfg.potential, cfg.length))
    zeros = od.nodal_zeros(base, k, cfg.grid)
    problem = base.with_partition(zeros)
    s = sigma_grid(cfg.sigma_max, cfg.sigma_count)
    curves = [od.branch_flow(problem, b, s, cfg.grid) for b in range(1, k + 2)]
    sturm = od.sturm_verify(problem, k, cfg.grid)
    op = od.build_operator(problem, 0.0, cfg.grid)
    summary = {
        "k": k,
        "partition": zeros,
        "snap_errors": list(op.snap_errors),
        "start_values": [c.start for c in curves],
        "limits": [c.limit for c in curves],
        "constant": [c.is_constant() for c in curves],
        "sturm": {"node_count": sturm.node_count, "expected": k - 1,
                  "limits_ok": sturm.limits_ok, "ok": sturm.ok},
        "metadata": _metadata(cfg),
    }
    cols = {f"gamma_{c.branch_index}": c.values for c in curves}
    write_outputs(cfg.out, {"curves.csv": curves_csv(s, cols, [c.limit for c in curves]),
                            "summary.json": _dump(summary)})
    print(_dump({k_: v for k_, v in summary.items() if k_ != "metadata"}), end="")
    return EXIT_OK if sturm.ok else EXIT_VERIFY


def _star(cfg: RunConfig) -> rf.ModeIndex:
    if cfg.kind != "rectangle":
        raise ConfigError("this command needs kind 'rectangle'")
    return rf.ModeIndex(*cfg.star)


def cmd_rect(cfg: RunConfig):
    star = _star(cfg)
    problem = rect_problem(cfg)
    s = sigma_grid(cfg.sigma_max, cfg.sigma_count)
    report, curves = rf.analyze(problem, star, cfg.grid, cfg.epsilon, s)
    cols = {f"gamma_{p.m}_{p.n}": c.values for p, c in curves.items()}
    limits = [c.limit for c in curves.values()]
    run = {"metadata": _metadata(cfg), "axes": problem.alpha_axis,
           "x_length": problem.x_length, "y_length": problem.y_length,
           "consistency_errors": report.consistency_errors()}
    write_outputs(cfg.out, {"curves.csv": curves_csv(s, cols, limits),
                            "report.json": _dump(report.to_dict()),
                            "run.json": _dump(run)})
    print(_dump(report.to_dict()), end="")
    return EXIT_OK


def cmd_verify_dtn(cfg: RunConfig):
    star = _star(cfg)
    problem = rect_problem(cfg)
    make = dtn2d.Grid2D.aligned if cfg.align else (lambda p, _s, n: dtn2d.Grid2D.on(p, n))
    grids = [make(problem, star, n) for n in cfg.grids]
    report = dtn2d.verify_formula(problem, star, grids, cfg.epsilon)
    body = report.to_dict()
    write_outputs(cfg.out, {"verify.json": _dump(body)})
    for r in report.results:
        print(f"{r.nx}x{r.ny}: schur={r.schur_morse} crossings={r.crossing_count} "
              f"lattice={r.lattice_morse} agree={r.agree}")
    return EXIT_OK if report.ok else EXIT_VERIFY


def lattice_diagram(factors: rf.SpectralFactors, star: rf.ModeIndex):
    lam = rf.lambda_mn(factors, star)
    tol = TOL.tol_match * max(1.0, lam)
    mmax = max(p.m for p in factors.modes() if rf.lambda_mn(factors, p) <= lam + tol) + 1
    nmax = max(p.n for p in factors.modes() if rf.lambda_mn(factors, p) <= lam + tol) + 1
    mmax, nmax = min(mmax, len(factors.x_values)), min(nmax, len(factors.y_values))
    sets = {"contributing": [], "on_ellipse": [], "non_contributing": [], "above": []}
    lines = []
    for n in range(nmax, 0, -1):
        row = []
        for m in range(1, mmax + 1):
            p = rf.ModeIndex(m, n)
            v = rf.lambda_mn(factors, p)
            if rf.contributes(factors, p, star):
                on = abs(v - lam) <= tol
                row.append("@" if on else "*")
                sets["on_ellipse" if on else "contributing"].append(p.as_list())
            elif v <= lam + tol:
                row.append("o")
                sets["non_contributing"].append(p.as_list())
            else:
                row.append(".")
                sets["above"].append(p.as_list())
        lines.append(f"{n:>3} " + " ".join(row))
    lines.append("    " + " ".join(str(m % 10) for m in range(1, mmax + 1)))
    return "\n".join(lines) + "\n", sets


def cmd_lattice(cfg: RunConfig):
    star = _star(cfg)
    factors = rf.auto_factors(rect_problem(cfg), star, cfg.grid)
    text, sets = lattice_diagram(factors, star)
    body = {"star": star.as_list(), "lambda_star": rf.lambda_mn(factors, star), **sets}
    write_outputs(cfg.out, {"lattice.txt": text, "lattice.json": _dump(body)})
    print(text, end="")
    return EXIT_OK


INTEGER_FIELDS = ("kstar", "multiplicity", "nodal_count", "deficiency", "morse_index")


def validate_report(path: str) -> tuple[dict, list]:
    data = json.loads(Path(path).read_text())
    report = rf.DeficiencyReport.from_dict(data)
    return {k: getattr(report, k) for k in INTEGER_FIELDS}, report.consistency_errors()


def cmd_report(path: str):
    try:
        fields, errors = validate_report(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid report {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_dump({**fields, "errors": errors}), end="")
    return EXIT_OK if not errors else EXIT_VERIFY


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodalflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("flow1d", "rect", "verify-dtn", "lattice"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--kind", choices=["interval", "rectangle"])
        p.add_argument("--length", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--swap-axes", dest="swap_axes", action="store_true",
                       help="domain [0, pi] x [0, alpha*pi] instead of [0, alpha*pi] x [0, pi]")
        p.add_argument("--potential", help="interval potential CSV or 'zero'")
        p.add_argument("--q", dest="q_potential", help="x-potential CSV or 'zero'")
        p.add_argument("--r", dest="r_potential", help="y-potential CSV or 'zero'")
        p.add_argument("--star", type=_parse_ints, help="k or m,n")
        p.add_argument("--sigma-max", dest="sigma_max", type=float)
        p.add_argument("--sigma-count", dest="sigma_count", type=int)
        p.add_argument("--grid", type=int)
        p.add_argument("--grids", type=_parse_ints, help="comma-separated 2D grid sizes")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--out")
    rp = sub.add_parser("report")
    rp.add_argument("path")
    return parser


COMMANDS = {"flow1d": cmd_flow1d, "rect": cmd_rect, "verify-dtn": cmd_verify_dtn, "lattice": cmd_lattice}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "report":
        return cmd_report(args.path)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TruncationError, GapError) as exc:
        needed = getattr(exc, "needed", None)
        extra = f" (needed truncation: {needed})" if needed else ""
        print(f"error: {exc}{extra}", file=sys.stderr)
        return EXIT_WINDOW
    except (NodalFlowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
