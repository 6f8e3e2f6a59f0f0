"""Matrices of spin-chain operators on a periodic ring of N spins-1/2.

Basis convention: a basis index is the bit string ``b_0 b_1 ... b_{N-1}``
with site 0 the most significant bit, ``b = 1`` for spin up (S^z = +1/2)
and ``b = 0`` for spin down, so ``|10>`` reads "site 0 up, site 1 down" as
in the two-ion notation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, SupportTooLarge
from .params import SpinChainParams
from .pauli_algebra import OperatorPolynomial, PauliString, h0_density, spin_term

__all__ = [
    "LatticeOperator",
    "SpinChainParams",
    "DENSE_MAX_N",
    "pauli_string_matrix",
    "realize",
    "build_h0",
    "build_h1",
    "h1_density",
    "lindblad_ops",
    "site_operator",
    "translation_operator",
    "total_spin",
    "momentum_basis",
]

# dense storage up to 2^8 = 256 states, CSR above
DENSE_MAX_N = 8


@dataclass(frozen=True)
class LatticeOperator:
    """An operator on the 2^N-dimensional ring Hilbert space."""

    matrix: np.ndarray | sp.csr_matrix
    N: int
    hermitian: bool = False

    def __post_init__(self):
        if self.hermitian:
            A = self.matrix
            diff = A - A.conj().T
            dmax = abs(diff).max() if sp.issparse(diff) else np.abs(diff).max(initial=0.0)
            amax = abs(A).max() if sp.issparse(A) else np.abs(A).max(initial=0.0)
            if dmax > 1e-12 * max(amax, 1e-300):
                raise ValueError(f"operator flagged Hermitian but |A - A^+|_max = {dmax:.3g}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    def __matmul__(self, other):
        if isinstance(other, LatticeOperator):
            return LatticeOperator(self.matrix @ other.matrix, self.N)
        return self.matrix @ other

    def __add__(self, other):
        return LatticeOperator(self.matrix + other.matrix, self.N, self.hermitian and other.hermitian)

    def __sub__(self, other):
        return LatticeOperator(self.matrix - other.matrix, self.N, self.hermitian and other.hermitian)

    def __rmul__(self, scalar):
        real = np.isrealobj(scalar) or np.imag(scalar) == 0
        return LatticeOperator(scalar * self.matrix, self.N, self.hermitian and real)

    def adjoint(self) -> "LatticeOperator":
        return LatticeOperator(self.matrix.conj().T, self.N, self.hermitian)


def _storage(matrix: sp.spmatrix, N: int, dense: bool | None):
    if dense is None:
        dense = N <= DENSE_MAX_N
    return matrix.toarray() if dense else sp.csr_matrix(matrix)


def pauli_string_matrix(string: PauliString, N: int, offset: int | None = None) -> sp.csr_matrix:
    """Sparse matrix of a sigma-level Pauli string placed at ``offset`` (mod N)."""
    if string.support > N:
        raise SupportTooLarge(f"string {string} does not fit on N={N}")
    start = string.offset if offset is None else offset
    flip = zy = 0
    n_y = n_z = 0
    for k, a in enumerate(string.letters):
        if a == "I":
            continue
        bit = 1 << (N - 1 - (start + k) % N)
        if a in "XY":
            flip |= bit
        if a in "YZ":
            zy |= bit
        n_y += a == "Y"
        n_z += a == "Z"
    dim = 1 << N
    cols = np.arange(dim, dtype=np.int64)
    parity = _popcount(cols & zy) & 1
    data = ((-1.0) ** n_z * (-1j) ** n_y) * (1.0 - 2.0 * parity)
    return sp.csr_matrix((data, (cols ^ flip, cols)), shape=(dim, dim))


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    count = np.zeros_like(x)
    while np.any(x):
        count += x & 1
        x >>= 1
    return count


def realize(poly: OperatorPolynomial, N: int, dense: bool | None = None) -> LatticeOperator:
    """Matrix of a polynomial on the ring.

    A covariant polynomial is summed over all N translations; a local one is
    placed at its absolute positions modulo N. A density may span the whole
    ring (support == N, e.g. the single doubled bond of a two-site ring) but
    not wrap onto itself.
    """
    if poly.max_support > N:
        raise SupportTooLarge(f"density support {poly.max_support} exceeds N={N}")
    dim = 1 << N
    rows, cols, data = [], [], []
    shifts = range(N) if poly.covariant else (0,)
    for s, c in poly.terms.items():
        if not s.letters:
            rows.append(np.arange(dim))
            cols.append(np.arange(dim))
            data.append(np.full(dim, c * len(shifts), dtype=complex))
            continue
        for j in shifts:
            m = pauli_string_matrix(s, N, offset=s.offset + j).tocoo()
            rows.append(m.row)
            cols.append(m.col)
            data.append(c * m.data)
    if rows:
        M = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim))
    else:
        M = sp.coo_matrix((dim, dim), dtype=complex)
    M = M.tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    return LatticeOperator(_storage(M, N, dense), N, hermitian=poly.is_hermitian())


def build_h0(params: SpinChainParams, dense: bool | None = None) -> LatticeOperator:
    """``sum_j J_z S^z_j S^z_{j+1} + J_y S^y_j S^y_{j+1} + h S^x_j`` on the ring.

    On N = 2 both bonds (0,1) and (1,0) are the same pair, so the bond
    energy is counted twice.
    """
    return realize(h0_density(params.J_y, params.J_z, params.h), params.N, dense)


def h1_density(params: SpinChainParams) -> OperatorPolynomial:
    return params.epsilon1 * (spin_term(params.J_z, "ZIZ") + spin_term(params.J_y, "YIY"))


def build_h1(params: SpinChainParams, dense: bool | None = None) -> LatticeOperator:
    """Next-nearest-neighbour couplings scaled by ``epsilon1``."""
    if params.N < 5:
        raise ConfigError("H1 needs N >= 5; next-nearest bonds coincide with nearest ones on smaller rings")
    dim = 1 << params.N
    if params.epsilon1 == 0:
        zero = sp.csr_matrix((dim, dim), dtype=complex)
        return LatticeOperator(_storage(zero, params.N, dense), params.N, hermitian=True)
    return realize(h1_density(params), params.N, dense)


_LOCAL = {
    "+": np.array([[0, 0], [1, 0]], dtype=complex),  # |1><0|
    "-": np.array([[0, 1], [0, 0]], dtype=complex),
    "z": np.array([[-0.5, 0], [0, 0.5]], dtype=complex),
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, 0.5j], [-0.5j, 0]], dtype=complex),
    "down": np.array([[1, 0], [0, 0]], dtype=complex),  # P = 1/2 - S^z
    "up": np.array([[0, 0], [0, 1]], dtype=complex),
}


def site_operator(factors: dict[int, str | np.ndarray], N: int) -> sp.csr_matrix:
    """Kronecker product with the given 2x2 factors on the named sites (mod N)."""
    placed = {}
    for j, f in factors.items():
        m = _LOCAL[f] if isinstance(f, str) else np.asarray(f, dtype=complex)
        j %= N
        placed[j] = placed[j] @ m if j in placed else m
    out = sp.identity(1, dtype=complex, format="csr")
    eye = sp.identity(2, dtype=complex, format="csr")
    for j in range(N):
        out = sp.kron(out, sp.csr_matrix(placed[j]) if j in placed else eye, format="csr")
    return out


def lindblad_ops(params: SpinChainParams, dense: bool | None = None) -> list[tuple[LatticeOperator, float]]:
    """Jump operators with rates: ``S^-_j`` at ``eps (1 - gamma)`` and
    ``S^+_j P^down_{j+1}`` at ``eps gamma``; zero-rate families are omitted."""
    N = params.N
    out = []
    r1 = params.epsilon * (1.0 - params.gamma)
    r2 = params.epsilon * params.gamma
    if r1 > 0:
        for j in range(N):
            out.append((LatticeOperator(_storage(site_operator({j: "-"}, N), N, dense), N), r1))
    if r2 > 0:
        for j in range(N):
            op = site_operator({j: "+", j + 1: "down"}, N)
            out.append((LatticeOperator(_storage(op, N, dense), N), r2))
    return out


def translation_operator(N: int, dense: bool | None = None) -> LatticeOperator:
    """Cyclic shift T with T S_j T^-1 = S_{j+1}."""
    dim = 1 << N
    b = np.arange(dim, dtype=np.int64)
    # site j is bit N-1-j; moving site j to j+1 is a right rotation of the bit string
    shifted = (b >> 1) | ((b & 1) << (N - 1))
    T = sp.csr_matrix((np.ones(dim, dtype=complex), (shifted, b)), shape=(dim, dim))
    return LatticeOperator(_storage(T, N, dense), N)


def total_spin(axis: str, N: int, dense: bool | None = None) -> LatticeOperator:
    return realize(spin_term(1.0, axis.upper()), N, dense)


def momentum_basis(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Unitary whose columns are eigenstates of the cyclic shift.

    Column ``|r, k> ~ sum_m exp(-2 pi i k m / N) T^m |r>`` has
    ``T |r, k> = exp(2 pi i k / N) |r, k>``.  Columns are grouped by
    momentum ``k = 0 .. N-1``; returns ``(U, k_labels)``.
    """
    dim = 1 << N
    b = np.arange(dim, dtype=np.int64)
    images = [b]
    for _ in range(N - 1):
        cur = images[-1]
        images.append((cur >> 1) | ((cur & 1) << (N - 1)))
    images = np.array(images)
    reps = np.flatnonzero(images.min(axis=0) == b)
    back = images[1:, reps] == reps[None, :]
    length = np.where(back.any(axis=0), back.argmax(axis=0) + 1, N)
    U = np.zeros((dim, dim), dtype=complex)
    labels = np.empty(dim, dtype=int)
    col = 0
    for k in range(N):
        for r, ell in zip(reps, length):
            if (k * ell) % N:
                continue
            m = np.arange(ell)
            U[images[m, r], col] = np.exp(-2j * np.pi * k * m / N) / np.sqrt(ell)
            labels[col] = k
            col += 1
    assert col == dim
    return U, labels
