"""Effective operators for the two-ion scheme and closed-form engineered rates.

The excited manifold (one ionic or one motional excitation) is eliminated
with the effective operator formalism::

    H_eff = -1/2 (V_- H_NH^-1 V_+ + h.c.),   L_eff,k = L_k H_NH^-1 V_+,

where ``H_NH = H_e - i/2 sum_k L_k^+ L_k`` and ``V_+`` is the weak drive.
:func:`effective_model` uses the two-level block structure with analytic
2x2 inverses; :func:`numeric_effective_model` inverts the full excited
block numerically and serves as its oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import curve_fit

from .errors import SingularBlock
from .ion_model import IonSystemParams, _reduced_liouvillian, ion_hamiltonian, ion_index, ion_jumps, reachable_levels
from .liouville import build_superoperator, trace_distance, unvec, vec

__all__ = [
    "EffectiveModel",
    "RATE_CONVENTIONS",
    "PerturbativeRegimeWarning",
    "effective_model",
    "numeric_effective_model",
    "invert_block",
    "gamma_eff_lowest_order",
    "gamma_eff_powerbroadened",
    "raman_repump_rate",
    "boson_elimination_rate",
    "fit_decay_rate",
    "asymptotic_decay_rate",
    "steady_excited_population",
    "regime_flags",
    "ValidationReport",
    "simulate_raman_decay",
    "simulate_boson_decay",
    "validate_effective_vs_full",
    "GROUND_STATES",
]

SQRT2 = float(np.sqrt(2.0))
GROUND_STATES = ("00", "01", "10", "11")


class PerturbativeRegimeWarning(UserWarning):
    """A closed-form rate is used outside its stated validity range."""


# Conventions behind the eliminated rates, fixed against direct simulation
# of the un-eliminated few-level models (see ``simulate_raman_decay`` and
# ``simulate_boson_decay`` and the corresponding tests).
RATE_CONVENTIONS = {
    "raman_repump": {
        "formula": "Gamma_0r * Omega_rep**2 / Gamma_r**2",
        "hamiltonian": "(Omega_rep / 2) (|r><1| + h.c.)",
        "jumps": "sqrt(Gamma_0r) |0><r|; total width of r is Gamma_r",
        "validity": "Omega_rep <= Gamma_r / 5",
    },
    "boson_elimination": {
        "formula": "g_b**2 / kappa",
        "hamiltonian": "(g_b / 2) (b^+ |-><r| + h.c.)  [Rabi-frequency convention]",
        "jumps": "sqrt(kappa) b",
        "note": "with the coupling written as g_b (b^+ |-><r| + h.c.) the same physics gives 4 g_b**2 / kappa",
        "validity": "g_b <= kappa / 5",
    },
}


def invert_block(a: complex, b: complex, d: complex, atol: float = 1e-14) -> np.ndarray:
    """Inverse of the symmetric block ``[[a, b], [b, d]]``.

    Diagonal entries are ``1 / (a - b^2 / d)`` and ``1 / (d - b^2 / a)``, the
    off-diagonal one ``1 / (b - a d / b)``.
    """
    det = a * d - b * b
    scale = max(abs(a * d), abs(b * b), 1e-300)
    if abs(det) <= atol * scale:
        raise SingularBlock(f"block [[{a}, {b}], [{b}, {d}]] is singular (determinant {det:.3g})")
    return np.array([[d, -b], [-b, a]], dtype=complex) / det


@dataclass
class EffectiveModel:
    """Ground-manifold dynamics on ``|00>, |01>, |10>, |11>`` (motion in |0>)."""

    H_eff: np.ndarray
    L_eff: list[tuple[np.ndarray, float]]
    gamma_eff: float
    stark_shift: float
    complex_detunings: dict[str, complex]
    effective_detunings: dict[str, complex] = field(default_factory=dict)
    blocks: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)

    def superoperator(self):
        return build_superoperator(self.H_eff, [(L, r) for L, r in self.L_eff if r > 0])


def _ket(label: str) -> np.ndarray:
    v = np.zeros(4)
    v[GROUND_STATES.index(label)] = 1.0
    return v


def regime_flags(p: IonSystemParams) -> dict[str, bool]:
    """Whether the perturbative orderings behind the closed forms hold."""
    return {
        "weak_drive": bool(p.Omega <= p.g / 5),
        "omega_below_gamma": bool(p.Omega <= p.Gamma_e1),
        "gamma_below_g": bool(p.Gamma_e1 <= p.g),
    }


def effective_model(p: IonSystemParams) -> EffectiveModel:
    """Effective ground-state model from the analytic 2x2 block inverses.

    Blocks (excited states listed first, then the motional ones):

    * ``00``: ``|psi_e>|0>``, ``|00>|1>`` with ``Delta~ = Delta - i Gamma/4``
      and coupling ``sqrt2 g``; decay to ``|10>`` with ``sqrt(Gamma/2)``.
    * ``10``: ``|1e>|0>``, ``|10>|1>`` with ``Delta~ = Delta``, coupling g.
    * ``01``: ``|e1>|0>``, ``|01>|1>`` with ``Delta~ = Delta - i Gamma/2``,
      coupling g; decay to ``|11>`` with ``sqrt(Gamma)``.

    Phonon loss enters as ``delta~ = delta - i kappa / 2``.
    """
    G = p.Gamma_e1
    dt = p.delta - 0.5j * p.kappa
    spec = {
        "00": (p.Delta - 0.25j * G, SQRT2 * p.g, p.Omega / SQRT2, G / 2.0, "10"),
        "10": (complex(p.Delta), p.g, p.Omega / 2.0, 0.0, None),
        "01": (p.Delta - 0.5j * G, p.g, p.Omega / 2.0, G, "11"),
    }
    H = np.zeros((4, 4), dtype=complex)
    L_eff = []
    eff_det = {}
    blocks = {}
    for name, (Dt, gc, drive, rate, target) in spec.items():
        M = np.array([[Dt, gc], [gc, dt]], dtype=complex)
        Minv = invert_block(Dt, gc, dt)
        blocks[name] = (M, Minv)
        eff_det[name] = Dt - gc ** 2 / dt
        amp = Minv[0, 0] * drive  # <excited| H_NH^-1 V_+ |ground>
        shift = -(drive ** 2) * Minv[0, 0].real  # -1/2 (V_- H^-1 V_+ + h.c.)
        k = GROUND_STATES.index(name)
        H[k, k] += shift
        if target is not None and rate > 0:
            r = float(np.abs(np.sqrt(rate) * amp) ** 2)
            L_eff.append((np.outer(_ket(target), _ket(name)).astype(complex), r))
    if p.stark_compensation:
        H[2, 2] += p.stark_compensation
    gamma_eff = float((G / 2.0) * (p.Omega / SQRT2) ** 2 / abs(eff_det["00"]) ** 2) if G > 0 else 0.0
    d10 = eff_det["10"]
    stark = float(-((p.Omega / 2.0) ** 2) * d10.real / abs(d10) ** 2)
    return EffectiveModel(
        H_eff=H,
        L_eff=L_eff,
        gamma_eff=gamma_eff,
        stark_shift=stark,
        complex_detunings={"Delta_00": spec["00"][0], "Delta_10": spec["10"][0], "delta": dt},
        effective_detunings=eff_det,
        blocks=blocks,
        flags=regime_flags(p),
    )


def _ground_and_excited(p: IonSystemParams):
    nm = p.n_max
    ground = [ion_index(a, b, 0, nm) for a, b in GROUND_STATES]
    excited = []
    for a in "01e":
        for b in "01e":
            for n in range(nm + 1):
                n_exc = (a == "e") + (b == "e") + n
                if n_exc == 1:
                    excited.append(ion_index(a, b, n, nm))
    return ground, excited


def numeric_effective_model(p: IonSystemParams):
    """``(H_eff, [(L_eff, 1.0), ...])`` from the numerically inverted excited block.

    The excited manifold holds every state with exactly one excitation
    (ionic or motional); jump operators are restricted to excited -> ground.
    """
    H = ion_hamiltonian(p.replace(Omega=0.0))
    drive = ion_hamiltonian(p) - H
    ground, excited = _ground_and_excited(p)
    Vp = drive[np.ix_(excited, ground)]
    He = H[np.ix_(excited, excited)]
    Hg = H[np.ix_(ground, ground)]
    jumps = ion_jumps(p)
    nh = He.copy()
    for L, r in jumps:
        Le = L[:, excited]
        nh = nh - 0.5j * r * (Le.conj().T @ Le)
    try:
        inv = la.inv(nh)
    except la.LinAlgError as exc:
        raise SingularBlock(f"non-Hermitian excited block is singular: {exc}") from exc
    Heff = Hg - 0.5 * (Vp.conj().T @ inv @ Vp + (Vp.conj().T @ inv @ Vp).conj().T)
    L_eff = []
    for L, r in jumps:
        Lge = L[np.ix_(ground, excited)]
        op = np.sqrt(r) * (Lge @ inv @ Vp)
        if np.abs(op).max(initial=0.0) > 0:
            L_eff.append((op, 1.0))
    return Heff, L_eff


def gamma_eff_lowest_order(Omega: float, Gamma: float) -> float:
    """``4 Omega^2 / Gamma``: the resonant engineered rate for weak driving."""
    return 4.0 * Omega ** 2 / Gamma


def gamma_eff_powerbroadened(Omega: float, Gamma: float) -> float:
    """``4 Gamma Omega^2 / (Gamma^2 + 16 Omega^2)``; ``Gamma / 8`` at ``Omega = Gamma / 4``."""
    return 4.0 * Gamma * Omega ** 2 / (Gamma ** 2 + 16.0 * Omega ** 2)


def raman_repump_rate(Gamma_0r: float, Omega_rep: float, Gamma_r: float) -> float:
    """``Gamma_0r Omega_rep^2 / Gamma_r^2``; warns when ``Omega_rep > Gamma_r / 5``."""
    if Omega_rep > Gamma_r / 5:
        warnings.warn(f"Omega_rep = {Omega_rep} is not small against Gamma_r = {Gamma_r}",
                      PerturbativeRegimeWarning, stacklevel=2)
    return Gamma_0r * Omega_rep ** 2 / Gamma_r ** 2


def boson_elimination_rate(g_b: float, kappa: float, convention: str = "rabi") -> float:
    """Decay rate through a strongly damped bosonic mode.

    ``g_b^2 / kappa`` in the Rabi-frequency convention (see
    ``RATE_CONVENTIONS``); ``convention='coupling'`` gives ``4 g_b^2 / kappa``
    for the coupling written without the factor 1/2.  Warns when
    ``g_b > kappa / 5``.
    """
    if convention not in ("rabi", "coupling"):
        raise ValueError(f"unknown convention {convention!r}")
    if g_b > kappa / 5:
        warnings.warn(f"g_b = {g_b} is not small against kappa = {kappa}", PerturbativeRegimeWarning, stacklevel=2)
    factor = 1.0 if convention == "rabi" else 4.0
    return factor * g_b ** 2 / kappa


def fit_decay_rate(t: np.ndarray, population: np.ndarray) -> float:
    """Least-squares fit of ``P(t) = P(t0) exp(-gamma (t - t0))`` over the whole window."""
    t = np.asarray(t, dtype=float) - float(t[0])
    P = np.asarray(population, dtype=float)
    P0 = P[0]
    guess = max(-np.log(max(P[-1] / P0, 1e-12)) / t[-1], 1e-12)
    popt, _ = curve_fit(lambda x, g: P0 * np.exp(-g * x), t, P, p0=[guess])
    return float(popt[0])


def asymptotic_decay_rate(t: np.ndarray, population: np.ndarray, start_fraction: float = 0.5) -> float:
    """Slope of ``-log P(t)`` over the trailing part of the window (transients excluded)."""
    t = np.asarray(t, dtype=float)
    P = np.asarray(population, dtype=float)
    sel = (t >= t[0] + start_fraction * (t[-1] - t[0])) & (P > 1e-300)
    return float(-np.polyfit(t[sel], np.log(P[sel]), 1)[0])


def _evolve_populations(Lmat: np.ndarray, y0: np.ndarray, times: np.ndarray, D: int) -> np.ndarray:
    dt = times[1] - times[0]
    U = la.expm(Lmat * dt)
    out = np.empty((times.size, D))
    y = y0
    diag = np.arange(D) * (D + 1)
    out[0] = y[diag].real
    for i in range(1, times.size):
        y = U @ y
        out[i] = y[diag].real
    return out


def simulate_raman_decay(Gamma_0r: float, Omega_rep: float, Gamma_r: float, n_times: int = 400):
    """Levels ``1, r, 0`` (plus a sink if ``Gamma_r > Gamma_0r``); fitted ``1 -> 0`` transfer rate.

    The depletion rate of ``|1>`` is fitted and multiplied by the fraction of
    the depleted population that ends in ``|0>``.
    """
    sink = Gamma_r > Gamma_0r
    D = 4 if sink else 3
    one, r, zero = 0, 1, 2
    H = np.zeros((D, D), dtype=complex)
    H[r, one] = H[one, r] = Omega_rep / 2.0
    jumps = [(np.outer(np.eye(D)[zero], np.eye(D)[r]), Gamma_0r)]
    if sink:
        jumps.append((np.outer(np.eye(D)[3], np.eye(D)[r]), Gamma_r - Gamma_0r))
    L = build_superoperator(H, jumps).matrix.toarray()
    expected = Gamma_0r * Omega_rep ** 2 / Gamma_r ** 2
    times = np.linspace(0.0, 2.0 / expected, n_times)
    rho0 = np.zeros((D, D), dtype=complex)
    rho0[one, one] = 1.0
    pops = _evolve_populations(L, vec(rho0), times, D)
    branching = pops[-1, zero] / (1.0 - pops[-1, one])
    return fit_decay_rate(times, pops[:, one]) * branching


def simulate_boson_decay(g_b: float, kappa: float, n_max: int = 2, n_times: int = 400,
                         convention: str = "rabi") -> float:
    """Level ``r`` decaying to ``-`` through a damped mode b; fitted decay rate of ``|r>``."""
    nph = n_max + 1
    b = np.diag(np.sqrt(np.arange(1, nph, dtype=float)), 1)
    sig = np.array([[0.0, 1.0], [0.0, 0.0]])  # |-><r| with index 0 = '-', 1 = 'r'
    B = np.kron(np.eye(2), b)
    S = np.kron(sig, np.eye(nph))
    coupling = g_b / 2.0 if convention == "rabi" else g_b
    H = coupling * (B.conj().T @ S + S.conj().T @ B)
    L = build_superoperator(H.astype(complex), [(B, kappa)]).matrix.toarray()
    D = 2 * nph
    rho0 = np.zeros((D, D), dtype=complex)
    rho0[nph, nph] = 1.0  # |r>|0>
    expected = boson_elimination_rate(g_b, kappa, convention) if g_b <= kappa / 5 else g_b ** 2 / kappa
    times = np.linspace(0.0, 2.0 / expected, n_times)
    pops = _evolve_populations(L, vec(rho0), times, D)
    return fit_decay_rate(times, pops[:, nph:].sum(axis=1))


@dataclass
class ValidationReport:
    fitted_rate: float
    asymptotic_rate: float
    gamma_eff: float
    gamma_lowest_order: float
    gamma_powerbroadened: float
    ratio_lowest_order: float
    ratio_powerbroadened: float
    ratio_effective_model: float
    max_trace_distance: float
    horizon: float
    P_e1_final: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _ground_block(rho_full: np.ndarray, p: IonSystemParams) -> np.ndarray:
    ground, _ = _ground_and_excited(p)
    return rho_full[np.ix_(ground, ground)]


def validate_effective_vs_full(p: IonSystemParams, horizon: float | None = None, n_times: int = 400) -> ValidationReport:
    """Compare the full model with the four-state effective model from ``|00>|0>``.

    The full ``|00>|0>`` population is fitted to an exponential; the
    effective model is integrated on the same grid and compared through the
    trace distance of the ground-state block.
    """
    em = effective_model(p)
    if horizon is None:
        rate = min(gamma_eff_powerbroadened(p.Omega, p.Gamma_e1), gamma_eff_lowest_order(p.Omega, p.Gamma_e1))
        horizon = 4.0 / rate
    keep = reachable_levels(p)
    d = keep.size
    Lr = _reduced_liouvillian(p, keep)
    times = np.linspace(0.0, horizon, n_times + 1)
    i00 = int(np.searchsorted(keep, ion_index("0", "0", 0, p.n_max)))
    y = np.zeros(d * d, dtype=complex)
    y[i00 * (d + 1)] = 1.0
    U = la.expm(Lr * (times[1] - times[0]))
    Le = em.superoperator().matrix.toarray()
    Ue = la.expm(Le * (times[1] - times[0]))
    ye = vec(np.diag([1.0, 0, 0, 0]).astype(complex))
    P00 = np.empty(times.size)
    dist = 0.0
    i1e = [int(np.searchsorted(keep, ion_index("1", "e", n, p.n_max))) for n in range(p.n_max + 1)
           if ion_index("1", "e", n, p.n_max) in keep]
    for i in range(times.size):
        if i:
            y = U @ y
            ye = Ue @ ye
        rho = np.zeros((p.dim, p.dim), dtype=complex)
        rho[np.ix_(keep, keep)] = unvec(y, d)
        g = _ground_block(rho, p)
        P00[i] = g[0, 0].real
        dist = max(dist, trace_distance(g, unvec(ye, 4)))
    P_e1 = float(sum(y[k * (d + 1)].real for k in i1e))
    fitted = fit_decay_rate(times, P00)
    lowest = gamma_eff_lowest_order(p.Omega, p.Gamma_e1)
    pb = gamma_eff_powerbroadened(p.Omega, p.Gamma_e1)
    return ValidationReport(
        fitted_rate=fitted,
        asymptotic_rate=asymptotic_decay_rate(times, P00),
        gamma_eff=em.gamma_eff,
        gamma_lowest_order=lowest,
        gamma_powerbroadened=pb,
        ratio_lowest_order=fitted / lowest,
        ratio_powerbroadened=fitted / pb,
        ratio_effective_model=fitted / em.gamma_eff if em.gamma_eff > 0 else float("nan"),
        max_trace_distance=dist,
        horizon=float(horizon),
        P_e1_final=P_e1,
    )


def steady_excited_population(p: IonSystemParams, t_final: float | None = None) -> float:
    """Long-time ``|1e>`` population after preparation from ``|00>|0>``."""
    rate = gamma_eff_powerbroadened(p.Omega, p.Gamma_e1)
    if t_final is None:
        t_final = 20.0 / rate
    keep = reachable_levels(p)
    d = keep.size
    Lr = _reduced_liouvillian(p, keep)
    y = np.zeros(d * d, dtype=complex)
    y[int(np.searchsorted(keep, ion_index("0", "0", 0, p.n_max))) * (d + 1)] = 1.0
    y = la.expm(Lr * t_final) @ y
    idx = [int(np.searchsorted(keep, ion_index("1", "e", n, p.n_max))) for n in range(p.n_max + 1)
           if ion_index("1", "e", n, p.n_max) in keep]
    return float(sum(y[k * (d + 1)].real for k in idx))
