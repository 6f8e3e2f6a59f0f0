"""Liouvillian superoperators, steady states and master-equation dynamics.

Density matrices are vectorized by column stacking, ``vec(rho)[i + D*j] =
rho[i, j]``, so that ``vec(A rho B) = (B^T kron A) vec(rho)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import DegenerateSteadyState, NoConvergence, NumericalError, StepSizeUnderflow
from .lattice_ops import LatticeOperator, build_h0, build_h1, lindblad_ops
from .params import SpinChainParams

__all__ = [
    "Superoperator",
    "SteadyState",
    "Trajectory",
    "vec",
    "unvec",
    "hamiltonian_part",
    "dissipator",
    "build_superoperator",
    "chain_liouvillian",
    "steady_state",
    "time_evolve",
    "dump_matrix",
    "trace_distance",
]

log = logging.getLogger(__name__)

DENSE_MAX_DIM = 63  # Hilbert dimension; dense null space below 64 states
NULLITY_RATIO = 1e6
POSITIVITY_TOL = -1e-8


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, D: int | None = None) -> np.ndarray:
    if D is None:
        D = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape((D, D), order="F")


def _as_sparse(A) -> sp.csr_matrix:
    if isinstance(A, LatticeOperator):
        A = A.matrix
    return sp.csr_matrix(A, dtype=complex)


def hamiltonian_part(H) -> sp.csr_matrix:
    """Superoperator of ``rho -> -i [H, rho]``."""
    H = _as_sparse(H)
    eye = sp.identity(H.shape[0], dtype=complex, format="csr")
    return (-1j * (sp.kron(eye, H) - sp.kron(H.T, eye))).tocsr()


def dissipator(L, rate: float = 1.0) -> sp.csr_matrix:
    """Superoperator of ``rate * (L rho L^+ - {L^+ L, rho} / 2)``."""
    if rate < 0:
        raise ValueError(f"negative jump rate {rate}")
    L = _as_sparse(L)
    eye = sp.identity(L.shape[0], dtype=complex, format="csr")
    LdL = (L.conj().T @ L).tocsr()
    out = sp.kron(L.conj(), L) - 0.5 * sp.kron(eye, LdL) - 0.5 * sp.kron(LdL.T, eye)
    return (rate * out).tocsr()


@dataclass
class Superoperator:
    """A Liouvillian as a sparse D^2 x D^2 matrix plus its tagged parts.

    ``symmetry`` optionally holds a basis permutation P of the Hilbert space
    with P^n = 1 (``period``) that commutes with the whole generator; the
    steady-state solver then works in the invariant operator subspace.
    """

    matrix: sp.csr_matrix
    D: int
    parts: dict[str, sp.csr_matrix] = field(default_factory=dict)
    symmetry: np.ndarray | None = None
    period: int = 1

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho), self.D)

    def trace_leak(self) -> float:
        """``|| vec(1)^+ L ||``; zero for a trace-preserving generator."""
        w = vec(np.eye(self.D))
        return float(np.linalg.norm(self.matrix.conj().T @ w))

    def __add__(self, other: "Superoperator") -> "Superoperator":
        parts = dict(self.parts)
        for k, v in other.parts.items():
            parts[k] = parts[k] + v if k in parts else v
        same = self.symmetry is not None and other.symmetry is not None and np.array_equal(self.symmetry, other.symmetry)
        return Superoperator(self.matrix + other.matrix, self.D, parts,
                             self.symmetry if same else None, self.period if same else 1)

    def scaled(self, c: float) -> "Superoperator":
        return Superoperator(c * self.matrix, self.D, {k: c * v for k, v in self.parts.items()},
                             self.symmetry, self.period)


def build_superoperator(H, jumps: Sequence[tuple], tag: str | None = None) -> Superoperator:
    """``L = -i[H, .] + sum_k rate_k D[L_k]`` for ``jumps = [(L_k, rate_k), ...]``.

    ``H`` may be ``None`` for a purely dissipative generator.
    """
    D = None
    parts = {}
    total = None
    if H is not None:
        Hs = _as_sparse(H)
        D = Hs.shape[0]
        total = hamiltonian_part(Hs)
        if tag:
            parts[f"{tag}_unitary"] = total
    diss = None
    for L, rate in jumps:
        if rate < 0:
            raise ValueError(f"negative jump rate {rate}")
        Ls = _as_sparse(L)
        if D is None:
            D = Ls.shape[0]
        elif Ls.shape != (D, D):
            raise ValueError(f"jump operator of shape {Ls.shape} does not match dimension {D}")
        term = dissipator(Ls, rate)
        diss = term if diss is None else diss + term
    if D is None:
        raise ValueError("need a Hamiltonian or at least one jump operator")
    if diss is not None:
        total = diss if total is None else total + diss
        if tag:
            parts[f"{tag}_dissipative"] = diss
    return Superoperator(total.tocsr(), D, parts)


def chain_liouvillian(params: SpinChainParams, include_h1: bool = False) -> Superoperator:
    """Full chain generator with parts ``L0`` (H0), ``Lu`` (H1) and ``L1`` (dissipation)."""
    H0 = build_h0(params)
    L0 = hamiltonian_part(H0)
    L1 = build_superoperator(None, lindblad_ops(params)).matrix if params.epsilon > 0 else sp.csr_matrix(L0.shape, dtype=complex)
    parts = {"L0": L0, "L1": L1}
    total = L0 + L1
    if include_h1:
        Lu = hamiltonian_part(build_h1(params))
        parts["Lu"] = Lu
        total = total + Lu
    perm = _translation_permutation(params.N)
    return Superoperator(total.tocsr(), H0.dim, parts, symmetry=perm, period=params.N)


def _translation_permutation(N: int) -> np.ndarray:
    b = np.arange(1 << N, dtype=np.int64)
    return (b >> 1) | ((b & 1) << (N - 1))


def symmetry_sectors(perm: np.ndarray, period: int, momenta=None) -> dict[int, sp.csr_matrix]:
    """Isometries onto the momentum sectors of operator space.

    The operator-space permutation sends ``|a><b|`` to ``|P a><P b|``.  For
    momentum k the columns are normalized orbit sums weighted by
    ``exp(-2 pi i k m / period)``; orbits whose length is incompatible with k
    drop out.
    """
    D = perm.size
    idx = np.arange(D * D, dtype=np.int64)
    a, b = idx % D, idx // D
    images = [idx]
    ca, cb = a, b
    for _ in range(period - 1):
        ca, cb = perm[ca], perm[cb]
        images.append(ca + D * cb)
    images = np.array(images)  # images[m] = index of P^m applied to each element
    rep = images.min(axis=0)
    reps, orbit_id = np.unique(rep, return_inverse=True)
    is_rep = rep == idx
    rep_idx = idx[is_rep]
    # orbit length: smallest m > 0 with P^m(rep) == rep
    orbit_images = images[:, rep_idx]
    back = orbit_images[1:] == rep_idx[None, :]
    length = np.where(back.any(axis=0), back.argmax(axis=0) + 1, period)
    if momenta is None:
        momenta = range(period)
    out = {}
    for k in momenta:
        ok = (k * length) % period == 0
        cols_rep = np.flatnonzero(ok)
        rows, cols, data = [], [], []
        for new_col, r in enumerate(cols_rep):
            ell = length[r]
            m = np.arange(ell)
            rows.append(orbit_images[m, r])
            cols.append(np.full(ell, new_col))
            data.append(np.exp(-2j * np.pi * k * m / period) / np.sqrt(ell))
        if rows:
            V = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(D * D, len(cols_rep)))
        else:
            V = sp.csr_matrix((D * D, 0), dtype=complex)
        out[k] = V
    return out


@dataclass
class SteadyState:
    rho: np.ndarray
    residual: float
    nullity_checked: bool
    singular_values: np.ndarray | None = None

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho).min())


def _smallest_singular_values(A: sp.csr_matrix, k: int = 2) -> np.ndarray:
    """The k smallest singular values of a sparse square matrix.

    Uses shift-invert on the Hermitian embedding [[0, A], [A^+, 0]], whose
    eigenvalues are +-s_i, so that no squaring of the condition number occurs.
    """
    n = A.shape[0]
    aug = sp.bmat([[None, A], [A.conj().T, None]], format="csc")
    scale = max(abs(A).max(), 1e-300)
    sigma = 1e-9 * scale
    try:
        vals = spla.eigsh(aug, k=2 * k, sigma=sigma, which="LM", return_eigenvectors=False, tol=1e-12)
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        raise NoConvergence(f"singular-value iteration failed: {exc}") from exc
    s = np.sort(np.abs(vals))
    # every singular value appears twice (as +s and -s)
    return s[::2][:k] if s.size >= 2 * k else s[:k]


def _null_vector_sparse(A: sp.csr_matrix, D: int) -> np.ndarray:
    # the rows belonging to diagonal entries sum to the trace functional, so
    # one of them can be traded for the normalization Tr(rho) = 1
    A = A.tolil(copy=True)
    A[0, :] = vec(np.eye(D)).conj()[None, :]
    b = np.zeros(D * D, dtype=complex)
    b[0] = 1.0
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise DegenerateSteadyState(f"normalized Liouvillian is singular: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise DegenerateSteadyState("non-finite steady-state solution")
    return x


def _check_separation(svals, scale):
    s0, s1 = svals[0], svals[1]
    if s1 < NULLITY_RATIO * max(s0, 1e-300) or s1 < 1e-13 * max(scale, 1.0):
        raise DegenerateSteadyState(
            f"Liouvillian null space is not one-dimensional (smallest singular values {s0:.3g}, {s1:.3g})",
            svals,
        )


SECTOR_DENSE_MAX = 3000


def _steady_state_symmetric(S: Superoperator, check_nullity: bool):
    D = S.D
    A = S.matrix
    scale = abs(A).max()
    momenta = range(S.period) if check_nullity else [0]
    sectors = symmetry_sectors(S.symmetry, S.period, momenta)
    x = None
    svals = None
    for k, V in sectors.items():
        if V.shape[1] == 0:
            continue
        Ak = (V.conj().T @ A @ V).tocsr()
        if Ak.shape[0] > SECTOR_DENSE_MAX:
            if k != 0:
                continue
            # the trace functional lives in the invariant sector as well
            w = V.conj().T @ vec(np.eye(D))
            j = int(np.argmax(np.abs(w)))
            B = Ak.tolil(copy=True)
            B[j, :] = w.conj()[None, :]
            rhs = np.zeros(Ak.shape[0], dtype=complex)
            rhs[j] = 1.0
            y = spla.splu(sp.csc_matrix(B)).solve(rhs)
            x = V @ y
            if check_nullity:
                svals = _smallest_singular_values(Ak, 2)
                _check_separation(svals, scale)
            continue
        U, s, Vh = la.svd(Ak.toarray())
        if k == 0:
            svals = s[::-1][:2]
            x = V @ Vh[-1].conj()
            if check_nullity:
                _check_separation(svals, scale)
        elif check_nullity and s[-1] < max(NULLITY_RATIO * svals[0], 1e-13 * max(scale, 1.0)):
            # the k = 0 sector comes first, so svals[0] is its null singular value
            raise DegenerateSteadyState(f"additional stationary operator in momentum sector {k}", s[::-1][:2])
    return x, svals


def steady_state(S: Superoperator, check_nullity: bool = True) -> SteadyState:
    """Unique stationary state of a trace-preserving Liouvillian.

    Dense SVD for Hilbert dimension below 64, the invariant symmetry sector
    when the generator carries one, sparse LU otherwise.  The nullity test
    requires the two smallest singular values to be separated by at least
    ``NULLITY_RATIO``.
    """
    D = S.D
    A = S.matrix
    svals = None
    if D > DENSE_MAX_DIM and S.symmetry is not None:
        x, svals = _steady_state_symmetric(S, check_nullity)
        trace = np.trace(unvec(x, D))
        if abs(trace) < 1e-12:
            raise DegenerateSteadyState("null vector is traceless", svals)
        x = x / trace
        checked = check_nullity
    elif D <= DENSE_MAX_DIM:
        U, s, Vh = la.svd(A.toarray())
        svals = s[::-1][:2]
        x = Vh[-1].conj()
        trace = np.trace(unvec(x, D))
        if abs(trace) < 1e-12:
            raise DegenerateSteadyState("null vector is traceless", svals)
        x = x / trace
        _check_separation(svals, abs(A).max())
        checked = True
    else:
        x = _null_vector_sparse(A, D)
        checked = check_nullity
        if check_nullity:
            svals = _smallest_singular_values(A, 2)
            _check_separation(svals, abs(A).max())
    rho = unvec(x, D)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(A @ vec(rho)))
    out = SteadyState(rho, residual, checked, svals)
    lam = out.min_eigenvalue
    if lam < POSITIVITY_TOL:
        raise NumericalError(f"steady state has a negative eigenvalue {lam:.3g}")
    return out


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, D, D)
    trace_drift: float
    n_rhs: int = 0

    def populations(self, index: int | Sequence[int]) -> np.ndarray:
        idx = np.atleast_1d(index)
        return self.states[:, idx, idx].real.sum(axis=1)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def time_evolve(
    S: Superoperator,
    rho0: np.ndarray,
    t,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "DOP853",
    max_step: float = np.inf,
) -> Trajectory:
    """Integrate ``d rho / dt = L rho`` with an adaptive Runge-Kutta scheme.

    ``t`` is either a final time or an increasing grid of output times
    starting at 0.  ``method='expm'`` propagates between grid points with
    the action of the matrix exponential instead.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    D = S.D
    grid = np.atleast_1d(np.asarray(t, dtype=float))
    if grid.size == 1:
        grid = np.array([0.0, float(grid[0])])
    if grid[0] != 0.0 or np.any(np.diff(grid) < 0):
        raise ValueError("output times must start at 0 and be nondecreasing")
    y0 = vec(rho0)
    A = S.matrix
    counter = [0]
    if method == "expm":
        ys = [y0]
        y = y0
        for dt in np.diff(grid):
            if dt > 0:
                y = spla.expm_multiply(A * dt, y)
            ys.append(y)
        Y = np.array(ys)
    else:
        if grid[-1] == 0.0:
            Y = np.array([y0] * grid.size)
        else:
            def rhs(_, y):
                counter[0] += 1
                return A @ y

            sol = solve_ivp(rhs, (0.0, grid[-1]), y0, method=method, t_eval=grid, rtol=rtol, atol=atol,
                            max_step=max_step)
            if sol.status != 0:
                if "step size" in sol.message.lower():
                    raise StepSizeUnderflow(sol.message)
                raise NumericalError(f"integration failed: {sol.message}")
            Y = sol.y.T
    states = np.array([unvec(y, D) for y in Y])
    traces = np.trace(states, axis1=1, axis2=2)
    drift = float(np.max(np.abs(traces - np.trace(rho0))))
    return Trajectory(grid, states, drift, counter[0])


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    d = 0.5 * (d + d.conj().T)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(d)).sum())


def dump_matrix(rho: np.ndarray, path, tol: float = 0.0) -> None:
    """Write ``row col re im`` lines for every entry with magnitude above ``tol``."""
    rho = np.asarray(rho)
    with open(path, "w") as fh:
        fh.write(f"# {rho.shape[0]} x {rho.shape[1]}\n")
        for (i, j), v in np.ndenumerate(rho):
            if abs(v) > tol:
                fh.write(f"{i} {j} {float(v.real)!r} {float(v.imag)!r}\n")


def load_matrix(path) -> np.ndarray:
    rows = []
    shape = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                a, _, b = line[1:].split()
                shape = (int(a), int(b))
                continue
            i, j, re, im = line.split()
            rows.append((int(i), int(j), complex(float(re), float(im))))
    out = np.zeros(shape, dtype=complex)
    for i, j, v in rows:
        out[i, j] = v
    return out
