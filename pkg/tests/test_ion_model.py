import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gge_ions.errors import ConfigError, CutoffLeakage
from gge_ions.ion_model import (
    SQRT2,
    IonSystemParams,
    TRAJECTORY_FIELDS,
    build_ion_liouvillian,
    dressed_detunings,
    fidelity,
    ion_hamiltonian,
    ion_index,
    optimize_fidelity,
    reachable_levels,
    simulate_preparation,
)

# optimum found at t_opt = 200/g with n_max = 3 (Delta and delta free)
OPT_200 = IonSystemParams(Gamma_e1=0.218, Omega=0.0393, Delta=1.034, delta=1.933)


def test_no_drive_ground_state_stationary():
    p = IonSystemParams(Omega=0.0, n_max=1)
    S = build_ion_liouvillian(p)
    rho = np.zeros((p.dim, p.dim), dtype=complex)
    i = ion_index("0", "0", 0, p.n_max)
    rho[i, i] = 1
    assert np.abs(S.apply(rho)).max() == 0.0


def test_liouvillian_trace_preserving():
    p = IonSystemParams(n_max=1, Gamma_rep=0.1, kappa=0.05)
    assert build_ion_liouvillian(p).trace_leak() < 1e-12


def test_lower_dressed_state_resonant():
    p = IonSystemParams(Delta=SQRT2, delta=SQRT2)
    H = ion_hamiltonian(p.replace(Omega=0.0))
    psi_e = [ion_index("e", "0", 0, p.n_max), ion_index("0", "e", 0, p.n_max)]
    phonon = ion_index("0", "0", 1, p.n_max)
    # block in the basis |psi_e>|0>, |00>|1>
    v = np.zeros((p.dim, 2), dtype=complex)
    v[psi_e, 0] = 1 / SQRT2
    v[phonon, 1] = 1
    block = v.conj().T @ H @ v
    assert np.allclose(np.linalg.eigvalsh(block), [0.0, 2 * SQRT2], atol=1e-12)


def test_dressed_detuning_examples():
    assert dressed_detunings(SQRT2, SQRT2, 1.0) == pytest.approx((2 * SQRT2, 0.0), abs=1e-12)
    assert dressed_detunings(0.3, 1.1, 0.0) == pytest.approx((1.1, 0.3))
    plus, minus = dressed_detunings(1.0, 2.0, 1.0)  # Delta delta = 2 g^2
    assert minus == pytest.approx(0.0, abs=1e-12) and plus == pytest.approx(3.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2))
def test_dressed_detunings_are_block_eigenvalues(D, d, g):
    plus, minus = dressed_detunings(D, d, g)
    ev = np.linalg.eigvalsh(np.array([[D, SQRT2 * g], [SQRT2 * g, d]]))
    assert (minus, plus) == pytest.approx(tuple(ev), abs=1e-9)
    assert plus >= minus


def test_zero_time_zero_fidelity():
    assert simulate_preparation(IonSystemParams(), 0.0).F == 0.0
    assert fidelity(IonSystemParams(), 0.0) == 0.0


def test_dynamics_stay_in_reachable_levels():
    p = IonSystemParams(n_max=2)
    keep = set(reachable_levels(p).tolist())
    assert ion_index("0", "0", 0, 2) in keep and ion_index("1", "0", 0, 2) in keep
    # ion 2 never ends in |1>: no decay channel for it
    assert ion_index("0", "1", 0, 2) not in keep


def test_reference_point_t200():
    r = simulate_preparation(IonSystemParams(Gamma_e1=0.29, Omega=0.05), 200.0)
    assert r.F == pytest.approx(0.998, abs=0.005)


def test_rescaling_covariance():
    p = IonSystemParams(n_max=2, Gamma_e1=0.4, Omega=0.07, kappa=0.01)
    a = simulate_preparation(p, 60.0, n_steps=30, check_leakage=False)
    b = simulate_preparation(p.scaled(2.0), 30.0, n_steps=30, check_leakage=False)
    for k in TRAJECTORY_FIELDS[1:]:
        assert np.allclose(a.populations[k], b.populations[k], atol=1e-10)


def test_monotone_growth_at_optimum():
    r = simulate_preparation(OPT_200, 200.0)
    assert np.all(np.diff(r.populations["P_10"]) >= -1e-12)
    assert r.F == pytest.approx(0.9968, abs=5e-4)


def test_cutoff_leakage_detected():
    with pytest.raises(CutoffLeakage) as info:
        simulate_preparation(IonSystemParams(n_max=1, Omega=0.3, Gamma_e1=0.5), 50.0)
    assert info.value.leakage > 1e-4


def test_invalid_parameters():
    with pytest.raises(ConfigError):
        IonSystemParams(n_max=0)
    with pytest.raises(ConfigError):
        IonSystemParams(Gamma_e1=-1)
    with pytest.raises(ConfigError):
        IonSystemParams(n_max=7)
    with pytest.raises(ConfigError):
        optimize_fidelity(0.0)


def test_optimizer_improves_on_seed_and_is_deterministic():
    base = IonSystemParams(n_max=1)
    seed = base.replace(Gamma_e1=0.8, Omega=0.13)
    a = optimize_fidelity(50.0, ("Gamma_e1", "Omega"), base=base, seeds=[seed], maxiter=120)
    b = optimize_fidelity(50.0, ("Gamma_e1", "Omega"), base=base, seeds=[seed], maxiter=120)
    assert a.F_opt >= fidelity(seed, 50.0)
    assert a.F_opt == b.F_opt and a.params_opt == b.params_opt
    assert 0 <= a.F_opt <= 1
    m = a.to_manifest()
    assert m["params_opt"]["n_max"] == 1 and len(m["starts"]) == 1


def test_two_stage_optimizer_polishes_at_full_cutoff():
    base = IonSystemParams(n_max=2)
    seed = base.replace(Gamma_e1=0.8, Omega=0.13)
    res = optimize_fidelity(50.0, ("Gamma_e1", "Omega"), base=base, seeds=[seed], maxiter=80, polish_maxiter=40)
    assert res.starts[-1]["polish"] and res.starts[-1]["n_max"] == 2
    assert res.params_opt.n_max == 2
    assert res.F_opt == pytest.approx(fidelity(res.params_opt, 50.0), abs=1e-9)

