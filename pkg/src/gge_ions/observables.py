"""Expectation values, the non-thermality ratio and local correlators."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ensembles import EigenSystem, solve_tgge, thermal_fit, thermal_state
from .errors import ConfigError, ImaginaryResidue, ThermalDenominatorNearZero
from .lattice_ops import LatticeOperator, realize
from .params import SpinChainParams
from .pauli_algebra import OperatorPolynomial, c4_density, h0_density, spin_term

__all__ = [
    "ObservableSpec",
    "expval",
    "eta_ratio",
    "thermal_reference_beta",
    "correlator_scan",
    "CSV_FIELDS",
    "write_rows",
]

IMAG_TOL = 1e-10
DENOMINATOR_TOL = 1e-12


@dataclass(frozen=True)
class ObservableSpec:
    """What to measure.

    ``kind`` is one of ``energy_density``, ``charge_density`` (the closed-form
    fourth charge when ``index == 4``, H0 when ``index == 2``),
    ``correlator`` (``axes`` a three-letter string over x, y, z, for
    ``S^a_{j-1} S^b_j S^c_{j+1}``) or ``custom`` (a Hermitian covariant
    ``polynomial``).  ``per_site`` divides the translation sum by N.
    """

    kind: str
    index: int | None = None
    axes: str | None = None
    polynomial: OperatorPolynomial | None = None
    per_site: bool = True

    def __post_init__(self):
        if self.kind not in ("energy_density", "charge_density", "correlator", "custom"):
            raise ConfigError(f"unknown observable kind {self.kind!r}")
        if self.kind == "correlator":
            if not self.axes or len(self.axes) != 3 or set(self.axes) - set("xyz"):
                raise ConfigError(f"correlator axes must be three letters from x, y, z, got {self.axes!r}")
        if self.kind == "charge_density" and self.index not in (2, 4):
            raise ConfigError("charge_density supports index 2 (H0) or 4")
        if self.kind == "custom":
            if self.polynomial is None or not self.polynomial.is_hermitian():
                raise ConfigError("custom observables need a Hermitian polynomial")

    @property
    def name(self) -> str:
        if self.kind == "energy_density":
            return "e_density"
        if self.kind == "charge_density":
            return "e_density" if self.index == 2 else "c4_density"
        if self.kind == "correlator":
            return self.axes
        return "custom"

    def density(self, params: SpinChainParams) -> OperatorPolynomial:
        if self.kind == "energy_density" or (self.kind == "charge_density" and self.index == 2):
            return h0_density(params.J_y, params.J_z, params.h)
        if self.kind == "charge_density":
            return c4_density(params.J_y, params.J_z, params.h)
        if self.kind == "correlator":
            return spin_term(1.0, self.axes.upper())
        return self.polynomial

    def operator(self, params: SpinChainParams) -> LatticeOperator:
        op = realize(self.density(params), params.N, dense=True)
        return (1.0 / params.N) * op if self.per_site else op


ENERGY = ObservableSpec("energy_density")
C4 = ObservableSpec("charge_density", index=4)


def _matrix(O):
    if isinstance(O, LatticeOperator):
        return O.dense()
    return O.toarray() if hasattr(O, "toarray") else np.asarray(O)


def expval(O, rho: np.ndarray) -> float:
    """``Tr[O rho]`` for Hermitian O; the imaginary part must vanish."""
    val = np.sum(_matrix(O).T * np.asarray(rho))
    scale = max(1.0, abs(val.real))
    if abs(val.imag) > IMAG_TOL * scale:
        raise ImaginaryResidue(f"expectation value has imaginary part {val.imag:.3g}")
    return float(val.real)


def thermal_reference_beta(route: str, es: EigenSystem, rho_x: np.ndarray | None = None,
                           params: SpinChainParams | None = None, h0_label: str = "C2") -> float:
    """Inverse temperature of the thermal reference state.

    ``exact`` (and ``bd``): match the mean energy of ``rho_x``.  ``tgge``:
    solve the stationarity conditions with H0 as the only charge.
    """
    if route in ("exact", "bd"):
        if rho_x is None:
            raise ValueError("energy matching needs the state")
        H_t = np.diag(es.energies)
        target = expval(es.from_eigenbasis(H_t), rho_x)
        return thermal_fit(es, target)
    if route == "tgge":
        if params is None:
            raise ValueError("the tGGE route needs the model parameters")
        if h0_label not in es.labels:
            raise ValueError(f"eigensystem carries no charge labelled {h0_label}")
        sol = solve_tgge(params, es, charges=[es.labels.index(h0_label)])
        return float(sol.lambdas[0])
    raise ConfigError(f"unknown route {route!r}")


def eta_ratio(O, rho_x: np.ndarray, es: EigenSystem, route: str = "exact",
              params: SpinChainParams | None = None, beta: float | None = None) -> float:
    """``(Tr[O rho_x] - Tr[O rho_th]) / Tr[O rho_th]``.

    Raises :class:`ThermalDenominatorNearZero`, carrying the plain difference,
    when the thermal value vanishes.
    """
    if beta is None:
        beta = thermal_reference_beta(route, es, rho_x, params)
    rho_th = thermal_state(es, beta)
    x = expval(O, rho_x)
    th = expval(O, rho_th)
    diff = x - th
    if abs(th) < DENOMINATOR_TOL * max(1.0, float(np.abs(_matrix(O)).max())):
        raise ThermalDenominatorNearZero(f"thermal expectation value {th:.3g} is too small", diff)
    return diff / th


def correlator_scan(params: SpinChainParams, rho: np.ndarray, triples=("yyx", "yxy")) -> dict[str, float]:
    """Translation-averaged ``<S^a_{j-1} S^b_j S^c_{j+1}>`` for each axis triple."""
    out = {}
    for t in triples:
        spec = ObservableSpec("correlator", axes=t)
        out[t] = expval(spec.operator(params), rho)
    return out


CSV_FIELDS = ["sweep_variable", "value", "observable", "route", "eta", "raw", "error"]


def write_rows(path, rows) -> None:
    """Write observable rows (dicts keyed by ``CSV_FIELDS``) as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in CSV_FIELDS})
