"""Strict INI-style run configuration.

Sections and keys are fixed; an unknown section or key, a malformed value or
an invalid grid raises :class:`ConfigError`.  Every key has a default, so
an empty file (or no file) yields the default configuration::

    [model]
    N = 6
    J_y = 1.0
    J_z = 0.1

    [sweep]
    grid = 0, 0.25, 0.5, 0.75, 1
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .ion_model import IonSystemParams
from .params import SpinChainParams

__all__ = ["RunConfig", "load_config", "parse_config", "ROUTES", "FORMATS", "SCHEMA"]

ROUTES = ("exact", "bd", "tgge", "thermal")
FORMATS = ("csv", "svg", "manifest")


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"{s!r} is not finite")
    return v


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _words(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _optional_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none", "auto") else _float(s)


# section -> key -> parser
SCHEMA = {
    "model": {
        "N": int, "J_y": _float, "J_z": _float, "h": _float, "alpha": _float,
        "epsilon1": _optional_float, "epsilon": _float, "gamma": _float,
    },
    "ensemble": {
        "routes": _words, "n_charges": int, "include_h1": _bool, "eta": _optional_float,
        "h1_weight": _float, "exact_sizes": _ints, "bd_sizes": _ints, "tgge_sizes": _ints,
    },
    "sweep": {"variable": str, "grid": _floats, "gammas": _floats},
    "ion": {
        "Omega": _float, "g": _float, "Delta": _float, "delta": _float, "Gamma_e1": _float,
        "Gamma_rep": _float, "kappa": _float, "n_max": int, "stark_compensation": _float,
        "t_opt": _floats, "n_starts": int, "maxiter": int, "n_steps": int, "free": _words,
    },
    "output": {"formats": _words},
}

SWEEP_VARIABLES = ("gamma", "J_z", "h", "epsilon", "J_y")


@dataclass
class RunConfig:
    """Resolved configuration of one CLI run.

    ``sweep_grid`` / ``sweep_variable`` may be ``None`` to use the
    subcommand's own default sweep.
    """

    model: SpinChainParams = field(default_factory=SpinChainParams)
    routes: tuple[str, ...] | None = None
    n_charges: int = 4
    include_h1: bool = False
    eta: float | None = None
    h1_weight: float = 1.0
    exact_sizes: tuple[int, ...] | None = None
    bd_sizes: tuple[int, ...] | None = None
    tgge_sizes: tuple[int, ...] | None = None
    sweep_variable: str | None = None
    sweep_grid: tuple[float, ...] | None = None
    gammas: tuple[float, ...] | None = None
    ion: IonSystemParams = field(default_factory=IonSystemParams)
    t_opt: tuple[float, ...] = (50.0, 100.0, 200.0)
    n_starts: int = 6
    maxiter: int = 800
    n_steps: int = 400
    free: tuple[str, ...] = ("Gamma_e1", "Omega", "Delta", "delta")
    formats: tuple[str, ...] = FORMATS
    explicit: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "explicit":
                continue
            v = getattr(self, f.name)
            if hasattr(v, "as_dict"):
                v = v.as_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def _check_grid(grid: tuple[float, ...], what: str) -> None:
    if not grid:
        raise ConfigError(f"{what} is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"{what} must be strictly increasing, got {list(grid)}")


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse configuration text strictly; see the module docstring."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    cp.optionxform = str  # keys are case sensitive (J_y vs j_y)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {exc}") from exc
    return build_config(values)


def build_config(values: dict[str, dict]) -> RunConfig:
    model_kw = dict(values.get("model", {}))
    model = SpinChainParams(**model_kw)
    ens = values.get("ensemble", {})
    sweep = values.get("sweep", {})
    ion_kw = {k: v for k, v in values.get("ion", {}).items()
              if k in {f.name for f in dataclasses.fields(IonSystemParams)}}
    ion_run = {k: v for k, v in values.get("ion", {}).items() if k not in ion_kw}
    ion = IonSystemParams(**ion_kw)
    out = values.get("output", {})

    routes = ens.get("routes")
    if routes is not None:
        bad = [r for r in routes if r not in ROUTES]
        if bad or not routes:
            raise ConfigError(f"routes must be drawn from {ROUTES}, got {list(routes)}")
    if ens.get("n_charges", 4) < 1:
        raise ConfigError("n_charges must be >= 1")
    variable = sweep.get("variable")
    if variable is not None and variable not in SWEEP_VARIABLES:
        raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {variable!r}")
    if "grid" in sweep:
        _check_grid(sweep["grid"], "sweep grid")
    if "gammas" in sweep:
        _check_grid(sweep["gammas"], "sweep gammas")
    if "t_opt" in ion_run:
        _check_grid(ion_run["t_opt"], "ion t_opt list")
        if ion_run["t_opt"][0] <= 0:
            raise ConfigError("t_opt values must be positive")
    for key in ("exact_sizes", "bd_sizes", "tgge_sizes"):
        if key in ens:
            _check_grid(tuple(float(x) for x in ens[key]), f"ensemble {key}")
            for n in ens[key]:
                model.replace(N=n)  # validates the ring size
    formats = out.get("formats", FORMATS)
    if any(f not in FORMATS for f in formats):
        raise ConfigError(f"output formats must be drawn from {FORMATS}, got {list(formats)}")
    for key, lo in (("n_starts", 1), ("maxiter", 1), ("n_steps", 1)):
        if key in ion_run and ion_run[key] < lo:
            raise ConfigError(f"ion {key} must be >= {lo}")
    if "free" in ion_run:
        allowed = ("Omega", "Delta", "delta", "Gamma_e1", "Gamma_rep", "kappa", "stark_compensation")
        if not ion_run["free"] or any(f not in allowed for f in ion_run["free"]):
            raise ConfigError(f"ion free parameters must be drawn from {allowed}")
    return RunConfig(
        model=model,
        routes=routes,
        n_charges=ens.get("n_charges", 4),
        include_h1=ens.get("include_h1", False),
        eta=ens.get("eta"),
        h1_weight=ens.get("h1_weight", 1.0),
        exact_sizes=ens.get("exact_sizes"),
        bd_sizes=ens.get("bd_sizes"),
        tgge_sizes=ens.get("tgge_sizes"),
        sweep_variable=variable,
        sweep_grid=sweep.get("grid"),
        gammas=sweep.get("gammas"),
        ion=ion,
        t_opt=ion_run.get("t_opt", (50.0, 100.0, 200.0)),
        n_starts=ion_run.get("n_starts", 6),
        maxiter=ion_run.get("maxiter", 800),
        n_steps=ion_run.get("n_steps", 400),
        free=ion_run.get("free", ("Gamma_e1", "Omega", "Delta", "delta")),
        formats=tuple(formats),
        explicit=values,
    )


def load_config(path: str | None) -> RunConfig:
    """Read and parse ``path``; ``None`` gives the defaults."""
    if path is None:
        return build_config({})
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))
