"""Steady-state ensembles of the weakly open chain.

* ``rho_bd``: leading-order steady state on the commutant of H0, the null
  vector of the dissipator projected onto operators that commute with H0.
* ``solve_tgge``: truncated generalized Gibbs ensemble whose multipliers
  make the leading-order drift of every included charge vanish.
* ``thermal_fit``: Gibbs state of H0 at a prescribed mean energy.

Everything is evaluated in a simultaneous eigenbasis of H0 and the charges.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import brentq

from .errors import (
    CommutatorViolation,
    ConfigError,
    DegenerateSteadyState,
    IllConditionedProjection,
    NoConvergence,
    SingularJacobian,
    TargetOutOfRange,
)
from .lattice_ops import LatticeOperator, build_h0, build_h1, lindblad_ops, momentum_basis, realize
from .params import SpinChainParams
from .pauli_algebra import ChargeFamily

__all__ = [
    "EigenSystem",
    "BlockDiagonalState",
    "GgeSolution",
    "degeneracy_tolerance",
    "diagonalize_with_charges",
    "transition_weights",
    "rho_bd",
    "charge_drift",
    "drift_jacobian",
    "solve_tgge",
    "gibbs_weights",
    "thermal_fit",
    "thermal_state",
]

log = logging.getLogger(__name__)

DEGENERACY_RTOL = 1e-8
NULLITY_RATIO = 1e6
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
MAX_HALVINGS = 20


def _dense(A) -> np.ndarray:
    if isinstance(A, LatticeOperator):
        return A.dense()
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A)


def degeneracy_tolerance(H: np.ndarray, spectrum: np.ndarray | None = None) -> float:
    """``1e-8 * max(1, ||H||_2)``; energies closer than this count as degenerate.

    Without the spectrum the maximum absolute row sum, an upper bound of the
    spectral norm, sets the scale.
    """
    if spectrum is not None:
        norm = float(np.abs(spectrum).max(initial=0.0))
    else:
        norm = float(np.abs(H).sum(axis=1).max(initial=0.0))
    return DEGENERACY_RTOL * max(1.0, norm)


def _expectations(V: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Real diagonal ``<n|A|n>`` for the columns of V."""
    return np.real(np.sum(V.conj() * (A @ V), axis=0))


def _blocks(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Group indices of sorted ``values`` into runs whose neighbours differ by <= tol."""
    order = np.argsort(values, kind="stable")
    splits = np.flatnonzero(np.diff(values[order]) > tol) + 1
    return np.split(order, splits)


@dataclass(frozen=True)
class EigenSystem:
    """Simultaneous eigenbasis of H0 and a commuting charge family.

    ``charge_diagonals[i, n]`` is ``<n|C_i|n>``; ``blocks`` partitions the
    states into degenerate eigenspaces of H0 (within one momentum sector
    when ``momenta`` holds the lattice momentum ``k`` of every state).
    """

    energies: np.ndarray
    vectors: np.ndarray
    charge_diagonals: np.ndarray
    labels: tuple[str, ...]
    blocks: tuple[np.ndarray, ...]
    tolerance: float
    N: int
    momenta: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.energies.size

    def to_eigenbasis(self, A) -> np.ndarray:
        """``V^+ A V`` for an operator given in the computational basis."""
        A = _dense(A)
        return self.vectors.conj().T @ A @ self.vectors

    def from_eigenbasis(self, A: np.ndarray) -> np.ndarray:
        return self.vectors @ A @ self.vectors.conj().T

    def diagonal_state(self, weights: np.ndarray) -> np.ndarray:
        """Density matrix ``sum_n w_n |n><n|`` in the computational basis."""
        return (self.vectors * weights) @ self.vectors.conj().T


def diagonalize_with_charges(H0, charges=(), labels=None, N: int | None = None,
                             momentum: bool = False) -> EigenSystem:
    """Diagonalize H0, then each charge inside the degenerate blocks left so far.

    ``charges`` are realized matrices (``LatticeOperator`` or arrays).  With
    ``momentum=True`` H0 is first block-diagonalized by lattice momentum
    (all operators must then be translation invariant).  Raises
    :class:`CommutatorViolation` if a charge couples different blocks by
    more than the degeneracy tolerance allows.
    """
    H = _dense(H0)
    mats = [_dense(C) for C in charges]
    if labels is None:
        labels = [f"C{i}" for i in range(len(mats))]
    if N is None:
        N = int(round(np.log2(H.shape[0])))
    if momentum:
        U, k_of = momentum_basis(N)
        Hk = U.conj().T @ H @ U
        leak = float(np.abs(Hk[k_of[:, None] != k_of[None, :]]).max(initial=0.0))
        if leak > 1e-10 * max(1.0, float(np.abs(H).max())):
            raise CommutatorViolation(f"H0 is not translation invariant (momentum mixing {leak:.3g})")
        V = np.zeros_like(U)
        E = np.zeros(H.shape[0])
        sectors = []
        for k in range(N):
            sec = np.flatnonzero(k_of == k)
            e, v = la.eigh(Hk[np.ix_(sec, sec)])
            V[:, sec] = U[:, sec] @ v
            E[sec] = e
            sectors.append(sec)
        tol = degeneracy_tolerance(H, E)
        blocks = []
        for sec in sectors:
            blocks.extend(sec[run] for run in _blocks(E[sec], tol))
    else:
        k_of = None
        E, V = la.eigh(H)
        tol = degeneracy_tolerance(H, E)
        blocks = _blocks(E, tol)
    E_blocks = list(blocks)
    refined = list(blocks)
    for C in mats:
        ctol = degeneracy_tolerance(C)
        Ct = V.conj().T @ C @ V
        block_of = np.empty(H.shape[0], dtype=int)
        for i, b in enumerate(refined):
            block_of[b] = i
        leak = float(np.abs(Ct[block_of[:, None] != block_of[None, :]]).max(initial=0.0))
        if leak > 1e3 * ctol:
            raise CommutatorViolation(f"charge couples distinct eigenspaces (max element {leak:.3g})")
        new_blocks = []
        for b in refined:
            if b.size == 1:
                new_blocks.append(b)
                continue
            sub = Ct[np.ix_(b, b)]
            sub = 0.5 * (sub + sub.conj().T)
            c, W = la.eigh(sub)
            V[:, b] = V[:, b] @ W
            for run in _blocks(c, ctol):
                new_blocks.append(b[run])
        refined = new_blocks
    # order states by (energy, momentum) and carry the block labels along
    E = _expectations(V, H)
    keys = (np.arange(E.size), k_of, E) if k_of is not None else (np.arange(E.size), E)
    order = np.lexsort(keys)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    V = V[:, order]
    E = E[order]
    if k_of is not None:
        k_of = k_of[order]
    diag = np.array([_expectations(V, C) for C in mats]).reshape(len(mats), E.size)
    E_blocks = tuple(sorted((np.sort(inverse[b]) for b in E_blocks), key=lambda b: b[0]))
    return EigenSystem(E, V, diag, tuple(labels), E_blocks, tol, N, k_of)


MOMENTUM_MIN_N = 10


def chain_eigensystem(params: SpinChainParams, family: ChargeFamily | None = None,
                      momentum: bool | None = None) -> EigenSystem:
    """Eigenbasis of H0 and the realized charges of ``family`` on the ring.

    Momentum sectors are used by default from N = 10 on.
    """
    if momentum is None:
        momentum = params.N >= MOMENTUM_MIN_N
    H0 = build_h0(params, dense=True)
    mats, labels = [], []
    if family is not None:
        for label, c in zip(family.labels, family.charges):
            mats.append(realize(c, params.N, dense=True))
            labels.append(label)
    return diagonalize_with_charges(H0, mats, labels, params.N, momentum=momentum)


def _chain_jump_families(params: SpinChainParams, es: EigenSystem):
    """Site-0 (momentum basis) or all-site jump operators of both families
    with unit rates, as ``[(family, multiplicity, operator), ...]``."""
    unit = params.replace(epsilon=1.0, gamma=0.5)
    ops = lindblad_ops(unit, dense=True)
    half = len(ops) // 2
    out = []
    for k, (L, _) in enumerate(ops):
        fam = 0 if k < half else 1
        if es.momenta is not None:
            # |<m|L_j|n>| is the same for every j between momentum eigenstates
            if k % half == 0:
                out.append((fam, float(half), L))
        else:
            out.append((fam, 1.0, L))
    return out


def transition_weights(params: SpinChainParams, es: EigenSystem, include_rates: bool = True) -> np.ndarray:
    """``W[m, n] = sum_j rate_j |<m|L_j|n>|^2`` over all chain jump operators.

    With ``include_rates=False`` the two families are returned separately as
    an array of shape ``(2, D, D)`` without rate factors.
    """
    D = es.dim
    fam = np.zeros((2, D, D))
    for f, mult, L in _chain_jump_families(params, es):
        fam[f] += mult * np.abs(es.to_eigenbasis(L)) ** 2
    if not include_rates:
        return fam
    return params.epsilon * ((1.0 - params.gamma) * fam[0] + params.gamma * fam[1])


@dataclass
class BlockDiagonalState:
    rho: np.ndarray
    block_index: list[np.ndarray]
    n_params: int
    singular_values: np.ndarray

    def to_dict(self) -> dict:
        return {"n_params": self.n_params, "n_blocks": len(self.block_index)}


def _commutant_pairs(es: EigenSystem):
    mi, ni = [], []
    for b in es.blocks:
        m, n = np.meshgrid(b, b, indexing="ij")
        mi.append(m.ravel())
        ni.append(n.ravel())
    mi, ni = np.concatenate(mi), np.concatenate(ni)
    if es.momenta is not None:
        keep = es.momenta[mi] == es.momenta[ni]
        mi, ni = mi[keep], ni[keep]
    return mi, ni


def rho_bd(params: SpinChainParams, es: EigenSystem, jumps=None) -> BlockDiagonalState:
    """Null vector of the dissipator projected onto the commutant of H0.

    The generator acts on ``a_{mn}`` with ``E_m = E_n`` as
    ``G[(m,n),(m',n')] = sum_j r_j (L_{mm'} conj(L_{nn'}) - A_{mm'} d_{nn'}/2 - d_{mm'} A_{n'n}/2)``
    with ``A = sum_j r_j L_j^+ L_j``, all in the H0 eigenbasis.  ``jumps``
    defaults to the chain operators of ``params``; H1 never enters.  With a
    momentum-resolved eigenbasis only pairs of equal momentum are kept (the
    translation-invariant sector); there a translated jump operator
    contributes exactly like the one on site 0.
    """
    if jumps is None:
        rates = (params.epsilon * (1.0 - params.gamma), params.epsilon * params.gamma)
        jumps = [(L, mult * rates[f]) for f, mult, L in _chain_jump_families(params, es) if rates[f] > 0]
    elif es.momenta is not None:
        raise ConfigError("explicit jump lists need an eigenbasis without momentum resolution")
    if not jumps:
        raise DegenerateSteadyState("no dissipation: every commutant state is stationary")
    mi, ni = _commutant_pairs(es)
    K = mi.size
    G = np.zeros((K, K), dtype=complex)
    A = np.zeros((es.dim, es.dim), dtype=complex)
    Lm = np.ix_(mi, mi)
    Ln = np.ix_(ni, ni)
    for L, rate in jumps:
        Lt = es.to_eigenbasis(L)
        G += rate * (Lt[Lm] * Lt[Ln].conj())
        A += rate * (Lt.conj().T @ Lt)
    if es.momenta is not None:
        # sum_j L_j^+ L_j is translation invariant: no momentum transfer
        A[es.momenta[:, None] != es.momenta[None, :]] = 0.0
    same_n = ni[:, None] == ni[None, :]
    same_m = mi[:, None] == mi[None, :]
    G -= 0.5 * np.where(same_n, A[Lm], 0.0)
    G -= 0.5 * np.where(same_m, A.T[Ln], 0.0)
    scale = float(np.abs(G).max(initial=0.0))
    if scale == 0.0:
        raise DegenerateSteadyState("projected generator vanishes")
    _, s, vh = la.svd(G / scale)
    svals = s[::-1][:2]
    if svals.size > 1 and svals[1] < NULLITY_RATIO * max(svals[0], 1e-300):
        raise DegenerateSteadyState(
            f"projected generator has more than one null vector (singular values {svals[0]:.3g}, {svals[1]:.3g})",
            svals,
        )
    if svals[0] > 1e-8:
        raise IllConditionedProjection(f"projected generator has no null vector (smallest singular value {svals[0]:.3g})")
    a = vh[-1].conj()
    rho_t = np.zeros((es.dim, es.dim), dtype=complex)
    rho_t[mi, ni] = a
    tr = np.trace(rho_t)
    if abs(tr) < 1e-12:
        raise DegenerateSteadyState("commutant null vector is traceless", svals)
    rho_t = rho_t / tr
    rho_t = 0.5 * (rho_t + rho_t.conj().T)
    rho = es.from_eigenbasis(rho_t)
    lam = float(np.linalg.eigvalsh(rho).min())
    if lam < -1e-8:
        raise IllConditionedProjection(f"block-diagonal state has a negative eigenvalue {lam:.3g}")
    return BlockDiagonalState(rho, list(es.blocks), K, svals)


def _h1_weights(es: EigenSystem, H1, eta: float) -> np.ndarray:
    if eta <= 0:
        raise ConfigError(f"broadening eta must be positive, got {eta}")
    H1t = es.to_eigenbasis(H1)
    dE = es.energies[:, None] - es.energies[None, :]
    lorentz = eta / np.pi / (dE ** 2 + eta ** 2)
    return 2.0 * np.pi * np.abs(H1t) ** 2 * lorentz


def rate_matrix(params: SpinChainParams, es: EigenSystem, include_h1: bool = False,
                eta: float | None = None, h1_weight: float = 1.0) -> np.ndarray:
    """Total transition-rate matrix ``W[m, n]`` (from n to m) entering the drift."""
    W = transition_weights(params, es)
    if include_h1:
        if eta is None:
            eta = 0.1 * abs(params.J_y)
        W = W + h1_weight * _h1_weights(es, build_h1(params, dense=True), eta)
    return W


def _drift_from_rates(c: np.ndarray, W: np.ndarray, w: np.ndarray) -> np.ndarray:
    # drift_i = sum_{mn} (c_i(m) - c_i(n)) W_mn w_n
    out_rate = W.sum(axis=0)
    return c @ (W @ w) - (c * out_rate) @ w


def charge_drift(es: EigenSystem, weights: np.ndarray, params: SpinChainParams,
                 include_h1: bool = False, eta: float | None = None, h1_weight: float = 1.0,
                 W: np.ndarray | None = None) -> np.ndarray:
    """Leading-order ``d<C_i>/dt`` for a state diagonal in the eigenbasis.

    The dissipative part is the exact ``Tr[C_i L_1 rho]``; the optional H1
    part adds the golden-rule term with Lorentzian broadening ``eta``.
    """
    if W is None:
        W = rate_matrix(params, es, include_h1, eta, h1_weight)
    return _drift_from_rates(es.charge_diagonals, W, np.asarray(weights, dtype=float))


def drift_jacobian(c: np.ndarray, W: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``d drift_i / d lambda_j`` for Gibbs-type weights ``w ~ exp(-lambda . c)``."""
    g = c @ W - c * W.sum(axis=0)  # g_i(n) = sum_m (c_i(m) - c_i(n)) W_mn
    centered = c - (c @ w)[:, None]
    return -(g * w) @ centered.T


def gibbs_weights(c: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """``exp(-sum_i lambda_i c_i(n)) / Z`` with the largest exponent subtracted."""
    x = -np.asarray(lambdas, dtype=float) @ c
    x -= x.max()
    w = np.exp(x)
    return w / w.sum()


@dataclass
class GgeSolution:
    lambdas: np.ndarray
    labels: list[str]
    rho: np.ndarray
    weights: np.ndarray
    drift_residual: np.ndarray
    iterations: int
    eta_broadening: float | None = None
    wall_time: float = 0.0
    params: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.drift_residual), initial=0.0))

    def to_manifest(self) -> dict:
        return {
            "parameters": self.params,
            "charges": list(self.labels),
            "lambdas": [float(x) for x in self.lambdas],
            "drift_residual": [float(x) for x in self.drift_residual],
            "max_residual": self.residual,
            "iterations": self.iterations,
            "eta_broadening": self.eta_broadening,
            "wall_time_s": self.wall_time,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_manifest(), fh, indent=2, sort_keys=True)


def _newton(F, J, x0: np.ndarray, tol: float, max_iter: int):
    x = np.array(x0, dtype=float)
    r = F(x)
    best = float(np.max(np.abs(r), initial=0.0))
    it = 0
    for it in range(1, max_iter + 1):
        if best <= tol:
            return x, r, it - 1
        Jx = J(x)
        try:
            cond = np.linalg.cond(Jx)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularJacobian(
                f"drift Jacobian is singular (condition {cond:.3g}); a charge with identically zero drift "
                "should be removed from the family"
            )
        step = np.linalg.solve(Jx, -r)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_new = x + t * step
            r_new = F(x_new)
            res_new = float(np.max(np.abs(r_new), initial=0.0))
            if np.all(np.isfinite(r_new)) and res_new < best:
                break
            t *= 0.5
        else:
            raise NoConvergence(f"line search failed after {MAX_HALVINGS} halvings", best)
        x, r, best = x_new, r_new, res_new
    if best <= tol:
        return x, r, max_iter
    raise NoConvergence(f"Newton iteration did not reach {tol:.1e} in {max_iter} steps", best)


def solve_tgge(params: SpinChainParams, es: EigenSystem, include_h1: bool = False, eta: float | None = None,
               h1_weight: float = 1.0, tol: float = NEWTON_TOL, lambdas0=None, W: np.ndarray | None = None,
               charges: list[int] | None = None) -> GgeSolution:
    """Multipliers of ``exp(-sum lambda_i C_i)/Z`` with vanishing charge drifts.

    ``es`` must carry the charge family (its ``charge_diagonals``); use
    ``charges`` to restrict to a subset of its rows.  Damped Newton from
    infinite temperature with the analytic Jacobian.
    """
    t0 = time.perf_counter()
    if include_h1 and eta is None:
        eta = 0.1 * abs(params.J_y)
    if W is None:
        W = rate_matrix(params, es, include_h1, eta, h1_weight)
    rows = list(range(es.charge_diagonals.shape[0])) if charges is None else list(charges)
    if not rows:
        raise ConfigError("the tGGE needs at least one charge")
    c = es.charge_diagonals[rows]
    scale = float(np.abs(W).max(initial=0.0)) * max(float(np.abs(c).max(initial=0.0)), 1.0)
    if scale == 0.0:
        raise SingularJacobian("no perturbation: every drift vanishes identically")

    def F(lam):
        return _drift_from_rates(c, W, gibbs_weights(c, lam))

    def J(lam):
        return drift_jacobian(c, W, gibbs_weights(c, lam))

    x0 = np.zeros(len(rows)) if lambdas0 is None else np.asarray(lambdas0, dtype=float)
    lam, r, iters = _newton(F, J, x0, tol, NEWTON_MAX_ITER)
    w = gibbs_weights(c, lam)
    return GgeSolution(
        lambdas=lam,
        labels=[es.labels[i] for i in rows],
        rho=es.diagonal_state(w),
        weights=w,
        drift_residual=r,
        iterations=iters,
        eta_broadening=eta if include_h1 else None,
        wall_time=time.perf_counter() - t0,
        params=params.as_dict(),
    )


def _mean_energy(E: np.ndarray, beta: float) -> float:
    w = gibbs_weights(E[None, :], np.array([beta]))
    return float(E @ w)


def thermal_fit(es: EigenSystem, target_energy: float) -> float:
    """Inverse temperature with ``Tr[H0 e^{-beta H0}] / Z = target_energy``.

    Bracketing root search on the monotone mean energy, then Newton polish
    with ``dE/dbeta = -Var(H0)``.
    """
    E = es.energies
    lo, hi = float(E.min()), float(E.max())
    spread = hi - lo
    if not lo < target_energy < hi:
        raise TargetOutOfRange(f"target energy {target_energy} not strictly inside ({lo}, {hi})")
    if abs(target_energy - E.mean()) <= 1e-15 * max(spread, 1.0):
        return 0.0
    f = lambda b: _mean_energy(E, b) - target_energy
    # find a bracket: mean energy decreases with beta
    b_step = 1.0 / max(spread, 1e-300)
    a, b = 0.0, 0.0
    if f(0.0) > 0:
        b = b_step
        while f(b) > 0:
            a, b = b, 2.0 * b
            if b > 1e6 / max(spread, 1e-300):
                raise TargetOutOfRange("target energy too close to the ground state")
    else:
        a = -b_step
        while f(a) < 0:
            b, a = a, 2.0 * a
            if -a > 1e6 / max(spread, 1e-300):
                raise TargetOutOfRange("target energy too close to the top of the spectrum")
    beta = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(5):
        w = gibbs_weights(E[None, :], np.array([beta]))
        mean = E @ w
        var = float(((E - mean) ** 2) @ w)
        r = mean - target_energy
        if abs(r) <= 1e-14 * max(1.0, spread) or var == 0.0:
            break
        beta += r / var
    return float(beta)


def thermal_state(es: EigenSystem, beta: float) -> np.ndarray:
    return es.diagonal_state(gibbs_weights(es.energies[None, :], np.array([beta])))
