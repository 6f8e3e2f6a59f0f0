"""Sweep pipelines shared by the CLI and the acceptance tests.

A *route* turns model parameters into a stationary density matrix:
``exact`` (null vector of the full Liouvillian), ``bd`` (block-diagonal
ensemble) or ``tgge`` (truncated generalized Gibbs ensemble).  Eigensystems
depend only on the Hamiltonian and the charge family, so they are cached
and shared by all points of a sweep.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .ensembles import EigenSystem, chain_eigensystem, rho_bd, solve_tgge, thermal_state
from .errors import ConfigError, GgeIonsError, ThermalDenominatorNearZero
from .liouville import chain_liouvillian, dump_matrix, steady_state
from .observables import C4, ENERGY, ObservableSpec, eta_ratio, expval, thermal_reference_beta
from .params import SpinChainParams
from .pauli_algebra import build_charge_family

__all__ = [
    "EigenCache",
    "route_state",
    "densities",
    "figure1_point",
    "eta_points",
    "correlator_points",
    "RouteResult",
]

STATE_ROUTES = ("exact", "bd", "tgge")


class EigenCache:
    """Thread-safe cache of chain eigensystems keyed by the Hamiltonian."""

    def __init__(self, n_charges: int = 4):
        self.n_charges = n_charges
        self._store: dict[tuple, EigenSystem] = {}
        self._locks: dict[tuple, threading.Lock] = {}
        self._guard = threading.Lock()

    def get(self, params: SpinChainParams) -> EigenSystem:
        key = (params.N, params.J_y, params.J_z, params.h, self.n_charges)
        with self._guard:
            if key in self._store:
                return self._store[key]
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._store:
                family = build_charge_family(params, self.n_charges)
                self._store[key] = chain_eigensystem(params, family)
            return self._store[key]


@dataclass
class RouteResult:
    rho: np.ndarray
    info: dict


def route_state(route: str, params: SpinChainParams, es: EigenSystem | None = None,
                include_h1: bool = False, eta: float | None = None, h1_weight: float = 1.0) -> RouteResult:
    """Stationary state of ``params`` along ``route`` (computational basis)."""
    if route == "exact":
        ss = steady_state(chain_liouvillian(params, include_h1=include_h1))
        return RouteResult(ss.rho, {"residual": ss.residual})
    if es is None:
        raise ValueError(f"route {route} needs an eigensystem")
    if route == "bd":
        bd = rho_bd(params, es)
        return RouteResult(bd.rho, bd.to_dict())
    if route == "tgge":
        sol = solve_tgge(params, es, include_h1=include_h1, eta=eta, h1_weight=h1_weight)
        return RouteResult(sol.rho, {"lambdas": [float(x) for x in sol.lambdas], "labels": list(sol.labels),
                                     "residual": sol.residual, "iterations": sol.iterations})
    raise ConfigError(f"unknown route {route!r}")


def densities(params: SpinChainParams, rho: np.ndarray) -> dict[str, float]:
    """Energy and fourth-charge densities per site."""
    return {"e_density": expval(ENERGY.operator(params), rho),
            "c4_density": expval(C4.operator(params), rho)}


def figure1_point(params: SpinChainParams, route: str, cache: EigenCache | None,
                  include_h1: bool = False, eta: float | None = None, h1_weight: float = 1.0,
                  state_path=None) -> dict:
    """Densities of one sweep point; a failure is returned in ``error``.

    With ``state_path`` the stationary state is also written as a matrix dump.
    """
    try:
        es = cache.get(params) if (cache is not None and route != "exact") else None
        res = route_state(route, params, es, include_h1, eta, h1_weight)
        if state_path is not None:
            dump_matrix(res.rho, state_path, tol=1e-15)
        return {**densities(params, res.rho), "error": ""}
    except GgeIonsError as exc:
        return {"e_density": None, "c4_density": None, "error": f"{type(exc).__name__}: {exc}"}


def eta_points(params: SpinChainParams, route: str, cache: EigenCache,
               observables=(ENERGY, C4)) -> list[dict]:
    """Raw value and non-thermality ratio of each observable at one point."""
    rows = []
    try:
        es = cache.get(params)
        rho = route_state(route, params, es).rho
        beta = thermal_reference_beta(route, es, rho, params)
    except GgeIonsError as exc:
        return [{"observable": o.name, "route": route, "eta": None, "raw": None,
                 "error": f"{type(exc).__name__}: {exc}"} for o in observables]
    for o in observables:
        op = o.operator(params)
        row = {"observable": o.name, "route": route, "raw": expval(op, rho), "error": ""}
        try:
            row["eta"] = eta_ratio(op, rho, es, route, params, beta=beta)
        except ThermalDenominatorNearZero as exc:
            row["eta"] = None
            row["error"] = f"ThermalDenominatorNearZero: difference {exc.difference:.6g}"
        rows.append(row)
    return rows


def correlator_points(params: SpinChainParams, cache: EigenCache, route: str = "exact",
                      triples=("yyx", "yxy"), with_thermal: bool = True) -> list[dict]:
    """Three-site correlators in the route's state and in the energy-matched thermal state."""
    specs = [ObservableSpec("correlator", axes=t) for t in triples]
    try:
        es = cache.get(params)
        rho = route_state(route, params, es).rho
        beta = thermal_reference_beta(route, es, rho, params)
        rho_th = thermal_state(es, beta)
    except GgeIonsError as exc:
        err = f"{type(exc).__name__}: {exc}"
        return [{"observable": s.name, "route": r, "eta": None, "raw": None, "error": err}
                for r in ((route, "thermal") if with_thermal else (route,)) for s in specs]
    rows = []
    for s in specs:
        op = s.operator(params)
        x, th = expval(op, rho), expval(op, rho_th)
        eta = (x - th) / th if abs(th) > 1e-12 else None
        rows.append({"observable": s.name, "route": route, "raw": x, "eta": eta,
                     "error": "" if eta is not None else f"ThermalDenominatorNearZero: difference {x - th:.6g}"})
        if with_thermal:
            rows.append({"observable": s.name, "route": "thermal", "raw": th, "eta": 0.0, "error": ""})
    return rows
