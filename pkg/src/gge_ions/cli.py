"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (also
when a sweep finished but some of its points failed; failed points are kept
in the CSV with an error string).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import ensembles, liouville
from .config import RunConfig, load_config
from .eff_ops import (
    PerturbativeRegimeWarning,
    boson_elimination_rate,
    effective_model,
    gamma_eff_lowest_order,
    gamma_eff_powerbroadened,
    raman_repump_rate,
    simulate_boson_decay,
    simulate_raman_decay,
    validate_effective_vs_full,
)
from .errors import ConfigError, GgeIonsError, NumericalError
from .ion_model import (
    LEAKAGE_TOL,
    TRAJECTORY_FIELDS,
    IonSystemParams,
    optimize_fidelity,
    simulate_preparation,
    trajectory_rows,
)
from .observables import CSV_FIELDS, ObservableSpec
from .pauli_algebra import build_charge_family
from .pipelines import EigenCache, correlator_points, eta_points, figure1_point
from .svg import line_chart

log = logging.getLogger("gge_ions")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

FIGURE1_COLUMNS = ["gamma", "route", "N", "e_density", "c4_density", "error"]


def _version() -> str:
    try:
        return metadata.version("gge-ions")
    except metadata.PackageNotFoundError:
        return "unknown"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


class Run:
    """Output directory, config and manifest bookkeeping of one invocation."""

    def __init__(self, args, cfg: RunConfig):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out} is not writable")
        self.t0 = time.perf_counter()
        self.failed = 0

    def manifest(self, path: Path, extra: dict | None = None) -> None:
        if "manifest" not in self.cfg.formats:
            return
        data = {
            "command": self.args.command,
            "output": path.name,
            "config": self.cfg.as_dict(),
            "config_file": self.args.config,
            "overrides": {"route": self.args.route, "n": self.args.n, "threads": self.args.threads},
            "versions": {"gge_ions": _version(), "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "tolerances": {
                "degeneracy_rtol": ensembles.DEGENERACY_RTOL,
                "nullity_ratio": liouville.NULLITY_RATIO,
                "newton_tol": ensembles.NEWTON_TOL,
                "leakage_tol": LEAKAGE_TOL,
            },
            "boundary": "periodic",
            "wall_time_s": time.perf_counter() - self.t0,
        }
        if extra:
            data.update(extra)
        with open(path.with_name(path.name + ".manifest.json"), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)

    def write_csv(self, name: str, header: list[str], rows, extra: dict | None = None) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                values = [r.get(k) for k in header] if isinstance(r, dict) else r
                w.writerow([_fmt(v) for v in values])
        self.manifest(path, extra)
        return path

    def svg(self, name: str, series, **kw) -> None:
        if "svg" in self.cfg.formats:
            line_chart(series, self.out / name, **kw)

    def map(self, fn, items):
        items = list(items)
        if self.args.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.args.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _routes(run: Run, default: tuple[str, ...]) -> tuple[str, ...]:
    if run.args.route:
        return (run.args.route,)
    if run.cfg.routes:
        return tuple(r for r in run.cfg.routes if r != "thermal") or default
    return default


def _sizes(run: Run, route: str, default: tuple[int, ...]) -> tuple[int, ...]:
    if run.args.n is not None:
        return (run.args.n,)
    configured = {"exact": run.cfg.exact_sizes, "bd": run.cfg.bd_sizes, "tgge": run.cfg.tgge_sizes}[route]
    if configured:
        return tuple(configured)
    if "N" in run.cfg.explicit.get("model", {}):
        return (run.cfg.model.N,)
    return default


def _grid(run: Run, default) -> tuple[float, ...]:
    return tuple(run.cfg.sweep_grid) if run.cfg.sweep_grid is not None else tuple(default)


def _apply(model, variable: str, value: float):
    if variable == "J_z/J_y":
        return model.replace(J_z=value * model.J_y)
    return model.replace(**{variable: value})


# --------------------------------------------------------------------------- figures

def _state_path(run: Run, route: str, N: int, variable: str, value: float) -> Path | None:
    if not getattr(run.args, "dump_states", False):
        return None
    name = variable.replace("/", "_over_")
    return run.out / f"state_{route}_N{N}_{name}{value:g}.txt"


def cmd_figure1(run: Run) -> int:
    """Energy and fourth-charge densities along a gamma sweep for each route."""
    cfg = run.cfg
    variable = cfg.sweep_variable or "gamma"
    grid = _grid(run, np.round(np.linspace(0.0, 1.0, 11), 10))
    defaults = {"exact": (6,), "bd": (6, 8, 10), "tgge": (8, 10)}
    cache = EigenCache(cfg.n_charges)
    series = {}
    for route in _routes(run, ("exact", "bd", "tgge")):
        rows = []
        for N in _sizes(run, route, defaults[route]):
            model = cfg.model.replace(N=N)
            points = run.map(lambda v: figure1_point(_apply(model, variable, v), route, cache,
                                                     cfg.include_h1, cfg.eta, cfg.h1_weight,
                                                     _state_path(run, route, N, variable, v)), grid)
            for v, pt in zip(grid, points):
                rows.append({variable: float(v), "route": route, "N": N, **pt})
                run.failed += bool(pt["error"])
            series[f"{route} N={N}"] = (list(grid), [pt["e_density"] for pt in points])
        header = [variable] + FIGURE1_COLUMNS[1:]
        run.write_csv(f"figure1_{route}.csv", header, rows,
                      {"route": route, "n_charges": cfg.n_charges, "charges": "C2..C5 (C1..C4 at isotropy)"})
    run.svg("figure1.svg", series, title="energy density", xlabel=variable, ylabel="<H0>/N")
    return EXIT_OK


def _eta_rows(run: Run, variable: str, grid, model, routes, point_fn):
    cache = EigenCache(run.cfg.n_charges)
    rows = []
    for route in routes:
        results = run.map(lambda v: point_fn(_apply(model, variable, v), route, cache), grid)
        for v, pts in zip(grid, results):
            for pt in pts:
                rows.append({"sweep_variable": variable, "value": float(v), **pt})
                run.failed += pt["raw"] is None
    return rows


def _eta_series(rows, key="eta"):
    series = {}
    for r in rows:
        s = series.setdefault(f"{r['observable']} ({r['route']})", ([], []))
        s[0].append(r["value"])
        s[1].append(r[key])
    return series


def cmd_figure2(run: Run) -> int:
    """Non-thermality ratio of energy and fourth charge versus anisotropy."""
    cfg = run.cfg
    grid = _grid(run, np.round(np.arange(1, 11) / 10, 10))
    model = cfg.model.replace(N=run.args.n or cfg.model.N)
    rows = _eta_rows(run, "J_z/J_y", grid, model, _routes(run, ("exact",)), eta_points)
    run.write_csv("figure2.csv", CSV_FIELDS, rows)
    run.svg("figure2.svg", _eta_series(rows), title="non-thermality ratio", xlabel="J_z/J_y", ylabel="eta")
    return EXIT_OK


def cmd_figure3(run: Run) -> int:
    """Non-thermality ratio versus field at J_z/J_y = 0.9 for several gammas."""
    cfg = run.cfg
    grid = _grid(run, np.round(np.arange(1, 9) / 4, 10))
    gammas = cfg.gammas or (0.1, 0.6, 0.9)
    base = cfg.model.replace(N=run.args.n or cfg.model.N)
    base = base.replace(J_z=0.9 * base.J_y) if "J_z" not in cfg.explicit.get("model", {}) else base
    series = {}
    for g in gammas:
        rows = _eta_rows(run, "h", grid, base.replace(gamma=g), _routes(run, ("exact",)), eta_points)
        run.write_csv(f"figure3_gamma{g:g}.csv", CSV_FIELDS, rows, {"gamma": g})
        for k, v in _eta_series(rows).items():
            series[f"{k} g={g:g}"] = v
    run.svg("figure3.svg", series, title="non-thermality ratio", xlabel="h", ylabel="eta")
    return EXIT_OK


def cmd_figure4(run: Run) -> int:
    """Three-site correlators at gamma = 0.8 versus anisotropy, with the thermal reference."""
    cfg = run.cfg
    grid = _grid(run, np.round(np.arange(1, 11) / 10, 10))
    model = cfg.model.replace(N=run.args.n or cfg.model.N)
    if "gamma" not in cfg.explicit.get("model", {}):
        model = model.replace(gamma=0.8)
    rows = []
    cache = EigenCache(cfg.n_charges)
    for route in _routes(run, ("exact",)):
        results = run.map(lambda v: correlator_points(_apply(model, "J_z/J_y", v), cache, route), grid)
        for v, pts in zip(grid, results):
            for pt in pts:
                rows.append({"sweep_variable": "J_z/J_y", "value": float(v), **pt})
                run.failed += pt["raw"] is None
    run.write_csv("figure4.csv", CSV_FIELDS, rows)
    run.svg("figure4.svg", _eta_series(rows, "raw"), title="three-site correlators", xlabel="J_z/J_y",
            ylabel="<S S S>")
    return EXIT_OK


# --------------------------------------------------------------------------- charges

def cmd_charges(run: Run) -> int:
    """Write the charge densities in the polynomial text format."""
    cfg = run.cfg
    family = build_charge_family(cfg.model, cfg.n_charges, ring_size=run.args.n)
    for label, poly in zip(family.labels, family.charges):
        text = poly.to_text()
        path = run.out / f"{label}.txt"
        with open(path, "w") as fh:
            fh.write(f"# {label}\n{text}")
        run.manifest(path, {"label": label, "max_support": poly.max_support})
        print(f"# {label}")
        print(text, end="" if text.endswith("\n") else "\n")
    return EXIT_OK


# --------------------------------------------------------------------------- ions

def _ion_params_from(path: str) -> tuple[IonSystemParams, float]:
    try:
        with open(path) as fh:
            data = json.load(fh)
        params = IonSystemParams(**data["params_opt"])
        return params, float(data["t_opt"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot replay parameters from {path}: {exc}") from exc


def _write_trajectory(run: Run, name: str, params: IonSystemParams, t: float, extra=None):
    res = simulate_preparation(params, t, n_steps=run.cfg.n_steps)
    run.write_csv(name, TRAJECTORY_FIELDS, list(trajectory_rows(res)),
                  {"ion_params": params.as_dict(), "t": t, "F": res.F, "P_e1_peak": res.P_e1,
                   "leakage": res.leakage, **(extra or {})})
    return res


def cmd_ion_sim(run: Run) -> int:
    """Trajectory CSV from |00>|0> for the configured (or replayed) parameters."""
    if run.args.params_from:
        params, t = _ion_params_from(run.args.params_from)
        jobs = [(params, t)]
    else:
        jobs = [(run.cfg.ion, t) for t in run.cfg.t_opt]
    for params, t in jobs:
        res = _write_trajectory(run, f"ion_sim_t{t:g}.csv", params, t)
        print(f"t={t:g} F={res.F:.6f} P_1e(peak)={res.P_e1:.4f} leakage={res.leakage:.2e}")
    return EXIT_OK


def cmd_ion_opt(run: Run) -> int:
    """Optimize the preparation fidelity for each configured t_opt."""
    cfg = run.cfg
    for t in cfg.t_opt:
        res = optimize_fidelity(t, free=cfg.free, base=cfg.ion, n_starts=cfg.n_starts,
                                threads=run.args.threads, maxiter=cfg.maxiter)
        path = run.out / f"ion_opt_t{t:g}.json"
        with open(path, "w") as fh:
            json.dump(res.to_manifest(), fh, indent=2, sort_keys=True, default=_json_default)
        run.manifest(path)
        _write_trajectory(run, f"ion_opt_t{t:g}_trajectory.csv", res.params_opt, t)
        q = res.params_opt
        print(f"t_opt={t:g} F={res.F_opt:.5f} Gamma={q.Gamma_e1:.4f} Omega={q.Omega:.4f} "
              f"Omega/Gamma={q.Omega / q.Gamma_e1:.3f} Delta={q.Delta:.4f} delta={q.delta:.4f} "
              f"P_1e(peak)={res.residual_Pe1:.4f}")
    return EXIT_OK


def cmd_eff_ops(run: Run) -> int:
    """Table of effective rates and validity flags for the configured ion parameters."""
    p = run.args.params_from and _ion_params_from(run.args.params_from)[0] or run.cfg.ion
    em = effective_model(p)
    table = [
        ("Omega", p.Omega), ("g", p.g), ("Delta", p.Delta), ("delta", p.delta), ("Gamma_e1", p.Gamma_e1),
        ("kappa", p.kappa),
        ("gamma_eff (effective operators)", em.gamma_eff),
        ("gamma_eff (lowest order 4 Omega^2/Gamma)",
         gamma_eff_lowest_order(p.Omega, p.Gamma_e1) if p.Gamma_e1 > 0 else float("nan")),
        ("gamma_eff (power broadened)", gamma_eff_powerbroadened(p.Omega, p.Gamma_e1) if p.Gamma_e1 > 0 else 0.0),
        ("stark_shift", em.stark_shift),
    ] + [(f"flag {k}", v) for k, v in em.flags.items()]
    width = max(len(k) for k, _ in table)
    for k, v in table:
        print(f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    run.write_csv("eff_ops.csv", ["quantity", "value"], [[k, v] for k, v in table])
    return EXIT_OK


def cmd_validate(run: Run) -> int:
    """Fit-ratio report of the closed-form rates against full simulations."""
    g = run.cfg.ion.g
    base = run.cfg.ion.replace(Delta=np.sqrt(2.0) * g, delta=np.sqrt(2.0) * g, kappa=0.0, Gamma_rep=0.0)
    points = {"weak_drive": base.replace(Omega=0.02 * g, Gamma_e1=0.2 * g),
              "omega_equals_gamma": base.replace(Omega=0.2 * g, Gamma_e1=0.2 * g),
              "configured": run.cfg.ion}
    report = {}
    for name, p in points.items():
        r = validate_effective_vs_full(p)
        report[name] = {"params": p.as_dict(), **r.as_dict()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbativeRegimeWarning)
        kappa, Gr = 1.0, 1.0
        report["boson_elimination"] = {"g_b": kappa / 20, "kappa": kappa,
                                       "formula": boson_elimination_rate(kappa / 20, kappa),
                                       "fitted": simulate_boson_decay(kappa / 20, kappa)}
        report["raman_repump"] = {"Gamma_0r": 0.5 * Gr, "Omega_rep": Gr / 20, "Gamma_r": Gr,
                                  "formula": raman_repump_rate(0.5 * Gr, Gr / 20, Gr),
                                  "fitted": simulate_raman_decay(0.5 * Gr, Gr / 20, Gr)}
    for key in ("boson_elimination", "raman_repump"):
        report[key]["ratio"] = report[key]["fitted"] / report[key]["formula"]
    path = run.out / "validate.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
    run.manifest(path)
    for name in points:
        r = report[name]
        print(f"{name}: fitted {r['fitted_rate']:.5g}  4W^2/G ratio {r['ratio_lowest_order']:.3f}  "
              f"power-broadened ratio {r['ratio_powerbroadened']:.3f}  max trace distance {r['max_trace_distance']:.3f}")
    for key in ("boson_elimination", "raman_repump"):
        r = report[key]
        print(f"{key}: fitted {r['fitted']:.5g}  formula {r['formula']:.5g}  ratio {r['ratio']:.3f}")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

COMMANDS = {
    "figure1": cmd_figure1,
    "figure2": cmd_figure2,
    "figure3": cmd_figure3,
    "figure4": cmd_figure4,
    "charges": cmd_charges,
    "ion-sim": cmd_ion_sim,
    "ion-opt": cmd_ion_opt,
    "eff-ops": cmd_eff_ops,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style configuration file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweep points / multi-start")
    common.add_argument("--route", choices=("exact", "bd", "tgge"), help="restrict to one ensemble route")
    common.add_argument("--n", type=int, help="override the number of sites")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="gge-ions", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        if name == "charges":
            p = sub.add_parser("charges", help="conserved-charge utilities")
            csub = p.add_subparsers(dest="action", required=True)
            csub.add_parser("dump", parents=[common], help=fn.__doc__)
            continue
        p = sub.add_parser(name, parents=[common], help=fn.__doc__)
        if name in ("ion-sim", "eff-ops"):
            p.add_argument("--params-from", help="replay parameters from an ion-opt manifest")
        if name == "figure1":
            p.add_argument("--dump-states", action="store_true",
                           help="also write every stationary state as 'row col re im' lines")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 for --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not hasattr(args, "params_from"):
        args.params_from = None
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        if args.n is not None:
            cfg.model.replace(N=args.n)  # validate early
        run = Run(args, cfg)
        code = COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GgeIonsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if run.failed:
        print(f"{run.failed} sweep point(s) failed; see the error column", file=sys.stderr)
        return EXIT_NUMERICAL
    return code


if __name__ == "__main__":
    sys.exit(main())
