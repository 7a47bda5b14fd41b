"""Command-line front end: ``hoflow <subcommand> [flags]``.

Every subcommand prints one JSON report on stdout (and writes it to
``--out`` when given).  Exit codes: 0 pass, 2 numerical failure,
3 invariant failure, 4 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import curvature as cv
from . import diagnostics, evolve, samples, symbol
from .errors import (DegenerateMetricError, DiffeomorphismError, HoflowError,
                     InconclusiveSymbolError, NonFiniteError, UsageError)
from .flows import FlowSpec, ShearMap
from .grid import Grid, MetricField, read_snapshot

EXIT_OK, EXIT_NUMERIC, EXIT_INVARIANT, EXIT_USAGE = 0, 2, 3, 4

DEFAULTS = {
    "grid": [2, 32, 2 * np.pi],
    "scheme": "spectral",
    "flow": "plap:0",
    "deturck": "on",
    "dt": 1e-5,
    "steps": 100,
    "mu": 1.0,
    "alpha": 0.5,
    "tol": 1e-9,
    "out": None,
    "seed": 0,
    "metric": None,
    "init": "random",
    "amplitude": 0.05,
    "samples": 100,
    "time_steps": 16,
    "t_final": 1e-4,
    "store_every": 1,
    "trajectory": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parser():
    common = _Parser(add_help=False)
    a = common.add_argument
    a("--config", help="JSON file supplying any flag; explicit flags win")
    a("--grid", nargs=3, metavar=("n", "N", "L"), help="dimension, points per axis, period")
    a("--scheme", choices=("spectral", "central-4", "central-2"))
    a("--flow", help="plap:p or obstruction4")
    a("--deturck", choices=("on", "off"))
    a("--dt", type=float)
    a("--steps", type=int)
    a("--mu", type=float)
    a("--alpha", type=float)
    a("--tol", type=float)
    a("--out", help="output directory")
    a("--seed", type=int)
    a("--metric", help="metric snapshot file (overrides --init)")
    a("--init", choices=("flat", "conformal", "random"), help="synthetic initial metric")
    a("--amplitude", type=float, help="perturbation size for --init")
    a("--samples", type=int, help="symbol sample count")
    a("--time-steps", dest="time_steps", type=int, help="Picard time grid size")
    a("--t-final", dest="t_final", type=float, help="Picard horizon")
    a("--store-every", dest="store_every", type=int, help="IMEX output thinning")
    a("--trajectory", help="trajectory directory for pullback")

    p = _Parser(prog="hoflow", description="Higher-order geometric flow laboratory.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (
        ("curvature", "curvature pack and identity residuals for one metric"),
        ("symbol", "principal-symbol ellipticity check"),
        ("flow", "IMEX evolution with trajectory export"),
        ("picard", "Duhamel/Picard fixed-point solve"),
        ("verify", "structural invariant suite"),
        ("pullback", "DeTurck pull-back of a stored trajectory"),
    ):
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def _resolve(ns) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if ns.config:
        try:
            cfg = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        opts.update(cfg)
    for k, v in vars(ns).items():
        if v is not None and k not in ("config", "command"):
            opts[k] = v
    n, N, L = opts["grid"]
    try:
        opts["grid"] = (int(n), int(N), float(L))
    except ValueError as exc:
        raise UsageError("--grid expects integer n, integer N and real L") from exc
    return opts


def _grid(o) -> Grid:
    n, N, L = o["grid"]
    return Grid.cube(n, N, L, o["scheme"])


def _metric(o, grid: Grid | None = None) -> MetricField:
    if o["metric"]:
        f, _ = read_snapshot(o["metric"])
        return MetricField.from_field(f)
    grid = grid or _grid(o)
    if o["init"] == "flat":
        return samples.flat_metric(grid)
    if o["init"] == "conformal":
        u = samples.smooth_scalar(grid, o["amplitude"], 1, seed=o["seed"])
        return samples.conformal_metric(grid, u)
    return samples.random_smooth_metric(grid, o["amplitude"], 1, seed=o["seed"])


def _spec(o, h=None) -> FlowSpec:
    return FlowSpec.parse(o["flow"], background=h, deturck=o["deturck"] == "on")


def _emit(report: dict, o, name="report.json"):
    text = json.dumps(report, indent=2, default=_jsonable)
    print(text)
    if o.get("out"):
        d = Path(o["out"])
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    return str(x)


# ----------------------------------------------------------------------
# subcommands


def cmd_curvature(o) -> int:
    g = _metric(o)
    R = cv._riemann_lower(g)
    rest = tuple(range(4, R.ndim))

    def perm(*p):
        return np.transpose(R, p + rest)

    scale = max(float(np.max(np.abs(R))), 1e-300)
    sym = {
        "antisym_first": float(np.max(np.abs(R + perm(1, 0, 2, 3)))) / scale,
        "antisym_last": float(np.max(np.abs(R + perm(0, 1, 3, 2)))) / scale,
        "pair_exchange": float(np.max(np.abs(R - perm(2, 3, 0, 1)))) / scale,
        "bianchi": float(np.max(np.abs(R + perm(0, 2, 3, 1) + perm(0, 3, 1, 2)))) / scale,
    }
    ric = cv.ricci(g)
    S = cv.scalar_curvature(g)
    report = {
        "command": "curvature",
        "grid": {"dim": g.dim, "sizes": g.grid.sizes, "scheme": g.grid.scheme},
        "min_eigenvalue": g.min_eigenvalue(),
        "sup_riemann": scale if scale > 1e-300 else 0.0,
        "sup_ricci": ric.sup(),
        "scalar": {"min": float(S.data.min()), "max": float(S.data.max())},
        "riemann_symmetries": sym,
    }
    if g.dim == 4:
        report["bach"] = diagnostics.invariant_suite(g, ("trace_free", "div_free")).to_dict()
    ok = all(v <= 1e-10 for v in sym.values())
    report["pass"] = ok
    _emit(report, o)
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_symbol(o) -> int:
    h = _metric(o) if o["metric"] else samples.flat_metric(_grid(o))
    spec = _spec(o, h)
    rep = symbol.ellipticity_check(h, spec, sample_count=o["samples"], seed=o["seed"])
    out = {"command": "symbol", "flow": spec.label(), "deturck": spec.deturck, **rep.to_dict()}
    _emit(out, o)
    return EXIT_OK if rep.passed else EXIT_INVARIANT


def cmd_flow(o) -> int:
    h = _metric(o)
    spec = _spec(o, h)
    traj = evolve.imex_evolve(h, spec, o["dt"], o["steps"], store_every=o["store_every"])
    out = {"command": "flow", "flow": spec.label(), "slices": len(traj.times),
           "t_final": traj.times[-1], "min_eigenvalue": traj.metrics[-1].min_eigenvalue(),
           "sup_change": float(np.max(np.abs(traj.metrics[-1].g - h.g)))}
    if o["out"]:
        traj.export(o["out"])
        out["exported"] = str(o["out"])
    _emit(out, o)
    return EXIT_OK


def cmd_picard(o) -> int:
    h = _metric(o)
    spec = _spec(o, h)
    cfg = evolve.PicardConfig(mu=o["mu"], t_final=o["t_final"], time_steps=o["time_steps"],
                              tol=o["tol"], alpha=o["alpha"], seed=o["seed"])
    st = evolve.picard_solve(h, spec, cfg)
    out = {"command": "picard", "converged": st.converged, "stop_reason": st.stop_reason,
           "contraction_history": st.contraction_history, "update_norms": st.update_norms,
           "iterate_norms": st.iterate_norms, "fixed_point_residual": st.fixed_point_residual}
    if st.converged and o["out"]:
        st.trajectory.export(o["out"])
    _emit(out, o)
    return EXIT_OK if st.converged else EXIT_NUMERIC


def cmd_verify(o) -> int:
    """Resolution-pair invariant suite; Bach identities in dimension four."""
    n, N, L = o["grid"]
    coarse = Grid.cube(n, max(N // 4 * 3, 8), L, o["scheme"])
    fine = Grid.cube(n, N, L, o["scheme"])
    gs = [samples.random_smooth_metric(gr, o["amplitude"], 1, seed=o["seed"]) for gr in (coarse, fine)]
    diffeo = ShearMap.random(n, 0.05, seed=o["seed"])
    checks = {}
    if n == 4:
        rep = diagnostics.invariant_suite(gs, ("trace_free", "div_free", "naturality"),
                                          diffeo=diffeo, seed=o["seed"])
        c = diagnostics.invariant_suite(gs[-1], ("conformal_covariance",), rho=1.3)
        checks["conformal_covariance"] = c.residuals["conformal_covariance"][0] <= 1e-10
    else:
        rep = diagnostics.invariant_suite(gs, ("naturality",), diffeo=diffeo, seed=o["seed"])
    order = fine.scheme_order
    for k, rates in rep.rates.items():
        vals = rep.residuals[k]
        # spectral residuals sit at round-off, where rates carry no information
        checks[k] = bool(max(vals) < 1e-9 or rates[-1] >= order - 1)
    out = {"command": "verify", "scheme": o["scheme"], "scheme_order": order if np.isfinite(order) else "spectral",
           **rep.to_dict(), "checks": checks, "pass": all(checks.values())}
    _emit(out, o)
    return EXIT_OK if out["pass"] else EXIT_INVARIANT


def cmd_pullback(o) -> int:
    if not o["trajectory"]:
        raise UsageError("pullback needs --trajectory DIR")
    if o["metric"]:
        f, _ = read_snapshot(o["metric"])
        bg = MetricField.from_field(f)
    else:
        bg = None
    traj = evolve.Trajectory.load(o["trajectory"])
    if bg is None:
        bg = traj.metrics[0]
    traj.spec = traj.spec.with_background(bg)
    pb = evolve.deturck_pullback(traj)
    out = {"command": "pullback", "slices": len(pb.times),
           "max_displacement": pb.meta["max_displacement"],
           "residual": evolve.pullback_residual(pb) if len(pb.times) >= 3 else None}
    if o["out"]:
        pb.export(o["out"])
    _emit(out, o)
    return EXIT_OK


COMMANDS = {"curvature": cmd_curvature, "symbol": cmd_symbol, "flow": cmd_flow,
            "picard": cmd_picard, "verify": cmd_verify, "pullback": cmd_pullback}


def main(argv=None) -> int:
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        o = _resolve(ns)
        return COMMANDS[ns.command](o)
    except UsageError as exc:
        print(f"hoflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateMetricError, NonFiniteError, DiffeomorphismError,
            InconclusiveSymbolError, HoflowError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
