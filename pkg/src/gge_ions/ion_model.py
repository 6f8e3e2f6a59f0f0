"""Two trapped ions sharing one motional mode: full master-equation model.

Each ion has levels ``0, 1, e``; the basis index of ``|i1 i2>|n>`` is
``(3 i1 + i2) (n_max + 1) + n``.  Frequencies and times are in units of the
sideband coupling ``g`` unless ``g`` is set otherwise.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import expm_multiply

from .errors import ConfigError, CutoffLeakage
from .liouville import Superoperator, build_superoperator, vec

__all__ = [
    "IonSystemParams",
    "FidelityResult",
    "PreparationResult",
    "LEVELS",
    "ion_index",
    "ion_hamiltonian",
    "ion_jumps",
    "build_ion_liouvillian",
    "dressed_detunings",
    "simulate_preparation",
    "reachable_levels",
    "fidelity",
    "optimize_fidelity",
    "trajectory_rows",
]

log = logging.getLogger(__name__)

LEVELS = {"0": 0, "1": 1, "e": 2}
LEAKAGE_TOL = 1e-4
MAX_LEVELS = 64
SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class IonSystemParams:
    """Drive, coupling, detunings and rates of the two-ion scheme.

    ``Gamma_rep`` (repump 1 -> 0 on ion 1) and ``kappa`` (phonon decay) are
    optional extra channels.  ``stark_compensation`` adds an energy offset
    on ``|10>`` that can cancel the drive-induced light shift.
    """

    Omega: float = 0.05
    g: float = 1.0
    Delta: float = SQRT2
    delta: float = SQRT2
    Gamma_e1: float = 0.29
    Gamma_rep: float = 0.0
    kappa: float = 0.0
    n_max: int = 3
    stark_compensation: float = 0.0

    def __post_init__(self):
        if not isinstance(self.n_max, (int, np.integer)) or self.n_max < 1:
            raise ConfigError(f"phonon cutoff n_max must be an integer >= 1, got {self.n_max!r}")
        for name in ("Gamma_e1", "Gamma_rep", "kappa"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.Omega < 0:
            raise ConfigError("Omega must be >= 0")
        if 9 * (self.n_max + 1) > MAX_LEVELS:
            raise ConfigError(f"9 (n_max + 1) = {9 * (self.n_max + 1)} levels exceed the limit of {MAX_LEVELS}")

    @property
    def dim(self) -> int:
        return 9 * (self.n_max + 1)

    def replace(self, **changes) -> "IonSystemParams":
        return dataclasses.replace(self, **changes)

    def scaled(self, s: float) -> "IonSystemParams":
        """All frequencies and rates multiplied by ``s``."""
        return self.replace(
            Omega=s * self.Omega, g=s * self.g, Delta=s * self.Delta, delta=s * self.delta,
            Gamma_e1=s * self.Gamma_e1, Gamma_rep=s * self.Gamma_rep, kappa=s * self.kappa,
            stark_compensation=s * self.stark_compensation,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def ion_index(i1, i2, n: int, n_max: int) -> int:
    """Basis index of ``|i1 i2>|n>``; levels may be given as ints or '0', '1', 'e'."""
    a = LEVELS[i1] if isinstance(i1, str) else int(i1)
    b = LEVELS[i2] if isinstance(i2, str) else int(i2)
    return (3 * a + b) * (n_max + 1) + n


def _ops(n_max: int):
    nph = n_max + 1
    I3 = np.eye(3)
    Ip = np.eye(nph)
    a = np.diag(np.sqrt(np.arange(1, nph, dtype=float)), 1)

    def P(i, k):
        return np.outer(I3[i], I3[k])

    def on_ion(op, j):
        return np.kron(np.kron(op if j == 0 else I3, op if j == 1 else I3), Ip)

    A = np.kron(np.eye(9), a)
    return P, on_ion, A


def ion_hamiltonian(p: IonSystemParams) -> np.ndarray:
    """``delta a^+a + Delta sum|e><e| + Omega/2 sum(|e><0| + h.c.) + g sum(a^+|0><e| + h.c.)``."""
    P, on_ion, A = _ops(p.n_max)
    H = p.delta * (A.conj().T @ A)
    for j in (0, 1):
        H = H + p.Delta * on_ion(P(2, 2), j)
        H = H + 0.5 * p.Omega * (on_ion(P(2, 0), j) + on_ion(P(0, 2), j))
        lower = on_ion(P(0, 2), j)
        H = H + p.g * (A.conj().T @ lower + lower.conj().T @ A)
    if p.stark_compensation:
        H = H + p.stark_compensation * np.kron(np.kron(P(1, 1), P(0, 0)), np.eye(p.n_max + 1))
    return H.astype(complex)


def ion_jumps(p: IonSystemParams) -> list[tuple[np.ndarray, float]]:
    """``|1><e|`` on ion 1 at ``Gamma_e1``; optional ``|0><1|`` on ion 1 and phonon loss ``a``."""
    P, on_ion, A = _ops(p.n_max)
    jumps = [(on_ion(P(1, 2), 0), p.Gamma_e1)]
    if p.Gamma_rep > 0:
        jumps.append((on_ion(P(0, 1), 0), p.Gamma_rep))
    if p.kappa > 0:
        jumps.append((A, p.kappa))
    return [(L, r) for L, r in jumps if r > 0]


def build_ion_liouvillian(p: IonSystemParams) -> Superoperator:
    return build_superoperator(ion_hamiltonian(p), ion_jumps(p), tag="ion")


def reachable_levels(p: IonSystemParams, start: int | None = None) -> np.ndarray:
    """Levels connected to ``start`` (default ``|00>|0>``) by the Hamiltonian or a jump.

    Coherences and populations of a state initially supported there never
    leave this set, so the dynamics can be restricted to it exactly.
    The structural couplings are taken with unit strength so that the set
    does not depend on the parameter values.
    """
    unit = p.replace(Omega=1.0, g=1.0, Delta=1.0, delta=1.0, Gamma_e1=1.0,
                     Gamma_rep=1.0 if p.Gamma_rep > 0 else 0.0, kappa=1.0 if p.kappa > 0 else 0.0)
    if start is None:
        start = ion_index("0", "0", 0, p.n_max)
    adj = np.abs(ion_hamiltonian(unit)) > 0
    for L, _ in ion_jumps(unit):
        adj |= np.abs(L) > 0
    seen = np.zeros(p.dim, dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        nxt = np.flatnonzero(adj[:, frontier].any(axis=1) & ~seen)
        seen[nxt] = True
        frontier = list(nxt)
    return np.flatnonzero(seen)


def _reduced_liouvillian(p: IonSystemParams, keep: np.ndarray) -> np.ndarray:
    H = ion_hamiltonian(p)[np.ix_(keep, keep)]
    jumps = [(L[np.ix_(keep, keep)], r) for L, r in ion_jumps(p)]
    return build_superoperator(H, jumps).matrix.toarray()


def dressed_detunings(Delta: float, delta: float, g: float) -> tuple[float, float]:
    """Eigenvalues ``(Delta_+, Delta_-)`` of the coupled pair ``|psi_e>|0>``, ``|00>|1>``.

    ``(Delta + delta)/2 +- sqrt((Delta + delta)^2 - 4 (Delta delta - 2 g^2)) / 2``,
    i.e. the spectrum of ``[[Delta, sqrt2 g], [sqrt2 g, delta]]``.
    """
    disc = (Delta - delta) ** 2 + 8.0 * g ** 2  # = (D + d)^2 - 4 (D d - 2 g^2), never negative
    root = 0.5 * np.sqrt(disc)
    mid = 0.5 * (Delta + delta)
    return float(mid + root), float(mid - root)


def _populations_index(p: IonSystemParams):
    nm = p.n_max
    nph = nm + 1
    psi_e = np.zeros(p.dim, dtype=complex)
    psi_e[ion_index("e", "0", 0, nm)] = 1 / SQRT2
    psi_e[ion_index("0", "e", 0, nm)] = 1 / SQRT2
    return {
        "P_00": [ion_index("0", "0", 0, nm)],
        "P_10": [ion_index("1", "0", 0, nm)],
        "P_1e": [ion_index("1", "e", n, nm) for n in range(nph)],
        "P_phonon_top": [s * nph + nm for s in range(9)],
        "psi_e": psi_e,
    }


def _initial_vector(p: IonSystemParams) -> np.ndarray:
    rho0 = np.zeros((p.dim, p.dim), dtype=complex)
    i = ion_index("0", "0", 0, p.n_max)
    rho0[i, i] = 1.0
    return vec(rho0)


def fidelity(p: IonSystemParams, t: float) -> float:
    """Population of ``|10>|0>`` at time ``t`` from ``|00>|0>`` (dense propagator)."""
    if t == 0:
        return 0.0
    keep = reachable_levels(p)
    d = keep.size
    pos = {int(x): i for i, x in enumerate(keep)}
    y0 = np.zeros(d * d, dtype=complex)
    i0 = pos[ion_index("0", "0", 0, p.n_max)]
    y0[i0 * (d + 1)] = 1.0
    y = la.expm(_reduced_liouvillian(p, keep) * t) @ y0
    k = pos[ion_index("1", "0", 0, p.n_max)]
    return float(y[k * (d + 1)].real)


@dataclass
class PreparationResult:
    F: float
    P_e1: float
    leakage: float
    times: np.ndarray
    populations: dict[str, np.ndarray]


def simulate_preparation(p: IonSystemParams, t_opt: float, n_steps: int = 400,
                         check_leakage: bool = True) -> PreparationResult:
    """Integrate from ``|00>|0>`` to ``t_opt`` on a uniform grid.

    Exact propagation with ``expm(L dt)`` between grid points.  Returns the
    final ``|10>|0>`` population, the peak ``|1e>`` population and the peak
    population of the top phonon level; raises :class:`CutoffLeakage` if the
    latter exceeds ``1e-4``.
    """
    if t_opt < 0:
        raise ConfigError("t_opt must be >= 0")
    D = p.dim
    keep = reachable_levels(p)
    d = keep.size
    Lr = _reduced_liouvillian(p, keep)
    times = np.linspace(0.0, t_opt, n_steps + 1)
    y = np.zeros(d * d, dtype=complex)
    y[np.searchsorted(keep, ion_index("0", "0", 0, p.n_max)) * (d + 1)] = 1.0
    idx = _populations_index(p)
    psi = idx["psi_e"]
    rows = {k: np.zeros(times.size) for k in ("P_00", "P_10", "P_psi_e", "P_1e", "P_phonon_top")}

    def record(i, y):
        rho = np.zeros((D, D), dtype=complex)
        rho[np.ix_(keep, keep)] = y.reshape((d, d), order="F")
        pops = np.diag(rho).real
        rows["P_00"][i] = pops[idx["P_00"]].sum()
        rows["P_10"][i] = pops[idx["P_10"]].sum()
        rows["P_1e"][i] = pops[idx["P_1e"]].sum()
        rows["P_phonon_top"][i] = pops[idx["P_phonon_top"]].sum()
        rows["P_psi_e"][i] = float(np.real(psi.conj() @ rho @ psi))

    record(0, y)
    if t_opt > 0:
        U = la.expm(Lr * (times[1] - times[0]))
        for i in range(1, times.size):
            y = U @ y
            record(i, y)
    leakage = float(rows["P_phonon_top"].max())
    if check_leakage and leakage > LEAKAGE_TOL:
        raise CutoffLeakage(f"top phonon level reached population {leakage:.3g}; raise n_max", leakage)
    return PreparationResult(float(rows["P_10"][-1]), float(rows["P_1e"].max()), leakage, times, rows)


def trajectory_rows(result: PreparationResult):
    keys = ["P_00", "P_10", "P_psi_e", "P_1e", "P_phonon_top"]
    for i, t in enumerate(result.times):
        yield [float(t)] + [float(result.populations[k][i]) for k in keys]


TRAJECTORY_FIELDS = ["t", "P_00", "P_10", "P_psi_e", "P_1e", "P_phonon_top"]


@dataclass
class FidelityResult:
    t_opt: float
    F_opt: float
    params_opt: IonSystemParams
    residual_Pe1: float
    leakage: float = 0.0
    n_evaluations: int = 0
    starts: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_manifest(self) -> dict:
        return {
            "t_opt": self.t_opt,
            "F_opt": self.F_opt,
            "params_opt": self.params_opt.as_dict(),
            "residual_Pe1": self.residual_Pe1,
            "leakage": self.leakage,
            "n_evaluations": self.n_evaluations,
            "starts": self.starts,
            "wall_time_s": self.wall_time,
        }


FREE_PARAMETERS = ("Gamma_e1", "Omega", "Delta", "delta")
_LOG_PARAMETERS = {"Gamma_e1", "Omega", "Gamma_rep", "kappa"}


DENSE_PROPAGATOR_MAX = 16  # reduced levels; larger systems use the sparse action of the exponential


def _fidelity_objective(base: IonSystemParams, free: tuple[str, ...], t_opt: float):
    """Negative fidelity as a function of the free parameters (rates in log form)."""
    # the Liouvillian is linear in every coupling and rate: precompute one piece each
    names = ("Omega", "g", "Delta", "delta", "Gamma_e1", "Gamma_rep", "kappa", "stark_compensation")
    widest = base.replace(Gamma_rep=max(base.Gamma_rep, 1.0 if "Gamma_rep" in free else 0.0),
                          kappa=max(base.kappa, 1.0 if "kappa" in free else 0.0))
    keep = reachable_levels(widest)
    d = keep.size
    dense = d <= DENSE_PROPAGATOR_MAX
    parts = {}
    for name in names:
        unit = base.replace(**{k: (1.0 if k == name else 0.0) for k in names})
        M = _reduced_liouvillian(unit, keep)
        parts[name] = M if dense else sp.csr_matrix(M)
    y0 = np.zeros(d * d, dtype=complex)
    y0[np.searchsorted(keep, ion_index("0", "0", 0, base.n_max)) * (d + 1)] = 1.0
    target = np.searchsorted(keep, ion_index("1", "0", 0, base.n_max)) * (d + 1)

    def params_of(x):
        values = base.as_dict()
        for name, xi in zip(free, x):
            values[name] = float(np.exp(xi)) if name in _LOG_PARAMETERS else float(xi)
        return values

    def f(x):
        v = params_of(x)
        L = sum(v[name] * M for name, M in parts.items() if v[name] != 0.0)
        if dense:
            y = la.expm(L * t_opt) @ y0
        else:
            y = expm_multiply(L * t_opt, y0)
        return -float(y[target].real)

    return f, params_of


def _encode(p: IonSystemParams, free) -> np.ndarray:
    return np.array([np.log(getattr(p, n)) if n in _LOG_PARAMETERS else getattr(p, n) for n in free])


def default_seeds(t_opt: float, base: IonSystemParams, n: int = 6) -> list[IonSystemParams]:
    """Starting points around ``Delta = delta = sqrt2 g`` with ``Omega = Gamma / 6``.

    The decay rate guess scales like ``1 / sqrt(t_opt)`` through the values
    ``Gamma ~ 6 / sqrt(t g)``; the others spread the guess by factors.
    """
    g = base.g
    gamma0 = 6.0 * g / np.sqrt(t_opt * g) if t_opt > 0 else g
    factors = [1.0, 0.6, 1.6, 0.8, 1.25, 1.0, 2.0, 0.4]
    det = [(1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.85, 1.15), (1.15, 0.85), (1.1, 1.1), (1.0, 1.0), (1.0, 1.0)]
    ratio = [6.0, 6.0, 6.0, 5.0, 8.0, 4.0, 6.0, 6.0]
    seeds = []
    for i in range(n):
        G = gamma0 * factors[i % len(factors)]
        a, b = det[i % len(det)]
        seeds.append(base.replace(Gamma_e1=G, Omega=G / ratio[i % len(ratio)],
                                  Delta=SQRT2 * g * a, delta=SQRT2 * g * b))
    return seeds


def optimize_fidelity(t_opt: float, free=FREE_PARAMETERS, base: IonSystemParams | None = None,
                      seeds: list[IonSystemParams] | None = None, n_starts: int = 6, threads: int = 1,
                      maxiter: int = 800, coarse_n_max: int | None = 1, polish_maxiter: int = 600) -> FidelityResult:
    """Maximize the ``|10>|0>`` population at ``t_opt`` by multi-start Nelder-Mead.

    Rates are optimized in log form (so they stay positive), detunings
    directly.  The multi-start search runs at the phonon cutoff
    ``coarse_n_max`` (cheap); the best point is then polished at
    ``base.n_max`` by a further simplex search.  ``coarse_n_max=None`` (or a
    value not below ``base.n_max``) searches at the full cutoff directly.
    Returns the best point; every start is recorded.
    """
    if t_opt <= 0:
        raise ConfigError("t_opt must be positive")
    free = tuple(free)
    for name in free:
        if name not in ("Omega", "Delta", "delta", "Gamma_e1", "Gamma_rep", "kappa", "stark_compensation"):
            raise ConfigError(f"cannot optimize {name!r}")
    t0 = time.perf_counter()
    base = base or IonSystemParams()
    if seeds is None:
        seeds = default_seeds(t_opt, base, n_starts)
    two_stage = coarse_n_max is not None and coarse_n_max < base.n_max
    search_base = base.replace(n_max=coarse_n_max) if two_stage else base
    f, params_of = _fidelity_objective(search_base, free, t_opt)
    options = {"xatol": 1e-6, "fatol": 1e-10}

    def run(seed):
        x0 = _encode(seed, free)
        return minimize(f, x0, method="Nelder-Mead", options={**options, "maxiter": maxiter, "maxfev": 2 * maxiter})

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    starts = []
    for s, r in zip(seeds, results):
        starts.append({"seed": {n: getattr(s, n) for n in free}, "F": -float(r.fun),
                       "nfev": int(r.nfev), "converged": bool(r.success), "message": str(r.message),
                       "n_max": search_base.n_max})
    best = min(results, key=lambda r: r.fun)
    n_eval = int(sum(r.nfev for r in results))
    x_best = best.x
    polish = None
    if two_stage:
        f_full, params_of = _fidelity_objective(base, free, t_opt)
        polish = minimize(f_full, x_best, method="Nelder-Mead",
                          options={**options, "maxiter": polish_maxiter, "maxfev": polish_maxiter})
        n_eval += int(polish.nfev)
        x_best = polish.x
    p_opt = base.replace(**params_of(x_best))
    prep = simulate_preparation(p_opt, t_opt, check_leakage=False)
    if polish is not None:
        starts.append({"polish": True, "F": prep.F, "nfev": int(polish.nfev),
                       "converged": bool(polish.success), "message": str(polish.message), "n_max": base.n_max})
    return FidelityResult(
        t_opt=float(t_opt),
        F_opt=prep.F,
        params_opt=p_opt,
        residual_Pe1=prep.P_e1,
        leakage=prep.leakage,
        n_evaluations=n_eval,
        starts=starts,
        wall_time=time.perf_counter() - t0,
    )
