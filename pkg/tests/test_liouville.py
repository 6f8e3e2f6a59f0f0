import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gge_ions.errors import DegenerateSteadyState
from gge_ions.lattice_ops import build_h0, site_operator, total_spin
from gge_ions.liouville import (
    Superoperator,
    build_superoperator,
    chain_liouvillian,
    dump_matrix,
    load_matrix,
    steady_state,
    time_evolve,
    trace_distance,
    unvec,
    vec,
)
from gge_ions.observables import ENERGY, expval
from gge_ions.params import SpinChainParams

SM = np.array([[0, 1], [0, 0]], dtype=complex)  # |down><up| in the (down, up) basis


def test_dark_state_single_decay():
    D = 2
    S = build_superoperator(np.zeros((D, D)), [(SM, 1.0)])
    rho = steady_state(S).rho
    assert np.allclose(rho, np.diag([1.0, 0.0]))


def test_driven_damped_spin_matches_bloch_fixed_point():
    h, eps = 0.7, 0.3
    H = h * np.array([[0, 0.5], [0.5, 0]], dtype=complex)
    rho = steady_state(build_superoperator(H, [(SM, eps)])).rho
    # Bloch equations for s = <sigma>: sx' = -eps sx/2, sy' = -h sz - eps sy/2, sz' = h sy - eps (sz + 1)
    sz = -eps ** 2 / (eps ** 2 + 2 * h ** 2)
    sy = 2 * h * eps / (eps ** 2 + 2 * h ** 2)
    sigma_y = np.array([[0, 1j], [-1j, 0]])
    sigma_z = np.diag([-1.0, 1.0])
    expected = 0.5 * (np.eye(2) + sy * sigma_y + sz * sigma_z)
    assert np.allclose(rho, expected, atol=1e-12)


def test_decay_drives_magnetization_down():
    p = SpinChainParams(N=4, gamma=0.0, epsilon=0.1)
    S = chain_liouvillian(p)
    Sz = total_spin("z", 4, dense=True).dense()
    drift = np.trace(Sz @ S.apply(np.eye(16) / 16)).real
    assert drift < 0


def test_pure_dephasing_is_degenerate():
    N = 2
    jumps = [(site_operator({j: "z"}, N), 1.0) for j in range(N)]
    with pytest.raises(DegenerateSteadyState):
        steady_state(build_superoperator(None, jumps))


def test_default_chain_unique_steady_state_n6(default_params):
    ss = steady_state(chain_liouvillian(default_params))
    assert ss.nullity_checked
    e = expval(ENERGY.operator(default_params), ss.rho)
    assert np.isfinite(e) and abs(e) < 0.5
    assert ss.residual < 1e-10


def test_symmetric_and_sparse_paths_agree(default_params):
    S = chain_liouvillian(default_params)
    sym = steady_state(S, check_nullity=False).rho
    plain = Superoperator(S.matrix, S.D)  # no symmetry: sparse LU
    lu = steady_state(plain, check_nullity=False).rho
    assert trace_distance(sym, lu) < 1e-10


def test_long_time_evolution_reaches_steady_state():
    p = SpinChainParams(N=4, epsilon=0.5, gamma=0.3)
    S = chain_liouvillian(p)
    target = steady_state(S).rho
    traj = time_evolve(S, np.eye(16) / 16, [0.0, 400.0], method="expm")
    assert trace_distance(traj.final, target) < 1e-6


def test_rk_and_expm_evolution_agree():
    p = SpinChainParams(N=4, epsilon=0.2)
    S = chain_liouvillian(p)
    rho0 = np.zeros((16, 16), dtype=complex)
    rho0[0, 0] = 1
    grid = np.linspace(0, 5, 6)
    a = time_evolve(S, rho0, grid)
    b = time_evolve(S, rho0, grid, method="expm")
    assert np.abs(a.states - b.states).max() < 1e-8
    assert a.trace_drift < 1e-9


def test_zero_generator_constant_trajectory():
    S = Superoperator(sp.csr_matrix((4, 4), dtype=complex), 2)
    rho0 = np.array([[0.3, 0.1], [0.1, 0.7]], dtype=complex)
    traj = time_evolve(S, rho0, np.linspace(0, 3, 4))
    assert all(np.allclose(s, rho0) for s in traj.states)


def test_h1_changes_energy_weakly(default_params):
    p = default_params.replace(epsilon1=0.05)
    e0 = expval(ENERGY.operator(p), steady_state(chain_liouvillian(p)).rho)
    e1 = expval(ENERGY.operator(p), steady_state(chain_liouvillian(p, include_h1=True)).rho)
    assert abs(e1 - e0) < 0.02


def test_chain_parts_sum_to_total():
    p = SpinChainParams(N=4)
    S = chain_liouvillian(p, include_h1=False)
    assert abs(S.parts["L0"] + S.parts["L1"] - S.matrix).max() < 1e-15


def test_matrix_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    path = tmp_path / "rho.txt"
    dump_matrix(A, path)
    assert np.array_equal(load_matrix(path), A)
    first = path.read_text().splitlines()[1].split()
    assert len(first) == 4  # row col re im


# ---------------------------------------------------------------- properties

small = st.floats(-1, 1, allow_nan=False)


@st.composite
def random_generator(draw):
    D = draw(st.integers(2, 4))
    seed = draw(st.integers(0, 10 ** 6))
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    H = H + H.conj().T
    jumps = [(rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D)), float(rng.random())) for _ in range(2)]
    return build_superoperator(H, jumps), rng


@settings(max_examples=40, deadline=None)
@given(random_generator())
def test_trace_and_hermiticity_preserving(gen):
    S, rng = gen
    D = S.D
    assert S.trace_leak() < 1e-10
    X = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    assert np.allclose(S.apply(X.conj().T), S.apply(X).conj().T)


@settings(max_examples=40, deadline=None)
@given(random_generator())
def test_steady_state_is_a_density_matrix(gen):
    S, _ = gen
    ss = steady_state(S)
    assert abs(np.trace(ss.rho) - 1) < 1e-12
    assert np.allclose(ss.rho, ss.rho.conj().T)
    assert ss.min_eigenvalue > -1e-8
    assert np.linalg.norm(S.apply(ss.rho)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10 ** 6))
def test_vectorization_identity(D, seed):
    rng = np.random.default_rng(seed)
    A, R, B = (rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D)) for _ in range(3))
    assert np.allclose(vec(A @ R @ B), np.kron(B.T, A) @ vec(R))
    assert np.array_equal(unvec(vec(R)), R)
