import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gge_ions.errors import ConfigError, SupportTooLarge
from gge_ions.lattice_ops import (
    build_h0,
    build_h1,
    lindblad_ops,
    momentum_basis,
    realize,
    site_operator,
    total_spin,
    translation_operator,
)
from gge_ions.params import SpinChainParams
from gge_ions.pauli_algebra import OperatorPolynomial, PauliString, c4_density, spin_term

# single-site spin matrices in the (down, up) basis, built independently
SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY = np.array([[0, 0.5j], [-0.5j, 0]], dtype=complex)
SZ = np.diag([-0.5, 0.5]).astype(complex)
I2 = np.eye(2)


def kron_at(ops: dict, N: int) -> np.ndarray:
    out = np.eye(1)
    for j in range(N):
        out = np.kron(out, ops.get(j, I2))
    return out


def test_identity_polynomial_n4():
    op = realize(OperatorPolynomial.identity(), 4, dense=True)
    assert np.array_equal(op.dense(), np.eye(16))


def test_free_spins_spectrum():
    H = build_h0(SpinChainParams(N=2, J_y=0.0, J_z=0.0, h=1.0), dense=True).dense()
    assert np.allclose(np.linalg.eigvalsh(H), [-1, 0, 0, 1])


def test_c4_matches_direct_transcription_n8():
    N, Jy, Jz, h = 8, 1.0, 0.1, 1.0
    S = {"X": SX, "Y": SY, "Z": SZ}
    direct = np.zeros((256, 256), dtype=complex)
    for j in range(N):
        for mu, Jm, Jb in (("Z", Jz, Jy), ("Y", Jy, Jz)):
            m = S[mu]
            direct += Jm * kron_at({j: m, (j + 1) % N: SX, (j + 2) % N: SX, (j + 3) % N: m}, N)
            direct += -h * kron_at({j: m, (j + 1) % N: SX, (j + 2) % N: m}, N)
            direct += Jb / 4 * kron_at({j: m, (j + 1) % N: m}, N)
    op = realize(c4_density(Jy, Jz, h), N, dense=True).dense()
    assert np.allclose(op, direct, atol=1e-14)


def test_two_site_ring_doubles_bond():
    H = build_h0(SpinChainParams(N=2, J_y=1.0, J_z=0.0, h=0.0), dense=True).dense()
    direct = 2 * np.kron(SY, SY)
    assert np.allclose(H, direct)
    assert np.allclose(np.linalg.eigvalsh(H), [-0.5, -0.5, 0.5, 0.5])


def test_h0_translation_invariant_and_traceless():
    p = SpinChainParams(N=6)
    H = build_h0(p, dense=True).dense()
    T = translation_operator(6, dense=True).dense()
    assert np.abs(H - T @ H @ T.conj().T).max() < 1e-14
    assert abs(np.trace(H)) < 1e-12


def test_translation_moves_site_j_to_j_plus_1():
    N = 5
    T = translation_operator(N, dense=True).dense()
    for j in range(N):
        A = kron_at({j: SX}, N)
        B = kron_at({(j + 1) % N: SX}, N)
        assert np.allclose(T @ A @ T.conj().T, B)


def test_h1_scaling_and_examples():
    assert SpinChainParams(alpha=2).epsilon1 == 0.25
    p0 = SpinChainParams(N=6, epsilon1=0.0)
    assert abs(build_h1(p0, dense=True).dense()).max() == 0.0
    p = SpinChainParams(N=6, J_z=0.0, epsilon1=0.3)
    direct = sum(0.3 * kron_at({j: SY, (j + 2) % 6: SY}, 6) for j in range(6))
    assert np.allclose(build_h1(p, dense=True).dense(), direct)


def test_h1_needs_five_sites():
    with pytest.raises(ConfigError):
        build_h1(SpinChainParams(N=4))


def test_gamma_one_only_two_body():
    ops = lindblad_ops(SpinChainParams(N=4, gamma=1.0))
    assert len(ops) == 4
    for L, _ in ops:
        # S^+_j P^down_{j+1} changes exactly one spin and requires a neighbour down
        assert np.count_nonzero(L.dense()) == 4


def test_two_body_operator_on_two_ions():
    L = site_operator({0: "+", 1: "down"}, 2).toarray()
    expected = np.zeros((4, 4))
    expected[0b10, 0b00] = 1.0  # |10><00|
    assert np.array_equal(L, expected)


def test_lowering_nilpotent():
    for j in range(4):
        Sm = site_operator({j: "-"}, 4)
        assert abs(Sm @ Sm).max() == 0


def test_total_spin_z_on_all_down():
    Sz = total_spin("z", 4, dense=True).dense()
    assert Sz[0, 0] == -2.0


def test_support_too_large():
    with pytest.raises(SupportTooLarge):
        realize(spin_term(1.0, "XYZX"), 3)


@pytest.mark.parametrize("N", [2, 4, 6])
def test_momentum_basis_unitary_and_translation_eigen(N):
    U, k = momentum_basis(N)
    assert np.allclose(U.conj().T @ U, np.eye(2 ** N), atol=1e-12)
    T = translation_operator(N, dense=True).dense()
    phases = np.exp(2j * np.pi * k / N)
    assert np.allclose(T @ U, U * phases, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.text("IXYZ", min_size=1, max_size=3), st.floats(-1, 1)), min_size=1, max_size=4),
       st.floats(-2, 2))
def test_realize_linear_and_hermitian(terms, a):
    poly = OperatorPolynomial([(PauliString.canonical(0, w), c) for w, c in terms])
    A = realize(poly, 6, dense=True).dense()
    assert np.allclose(A, A.conj().T)
    assert np.allclose(realize(a * poly, 6, dense=True).dense(), a * A)
    assert np.allclose(realize(poly + poly, 6, dense=True).dense(), 2 * A)


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 9))
def test_sparse_and_dense_storage_agree(N):
    p = SpinChainParams(N=N + N % 2)
    assert np.allclose(build_h0(p, dense=True).dense(), build_h0(p, dense=False).sparse().toarray())
