import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gge_ions.ensembles import chain_eigensystem, solve_tgge, thermal_fit, thermal_state
from gge_ions.errors import ConfigError, ImaginaryResidue, ThermalDenominatorNearZero
from gge_ions.lattice_ops import realize, total_spin
from gge_ions.liouville import chain_liouvillian, steady_state
from gge_ions.observables import (
    C4,
    CSV_FIELDS,
    ENERGY,
    ObservableSpec,
    correlator_scan,
    eta_ratio,
    expval,
    write_rows,
)
from gge_ions.params import SpinChainParams
from gge_ions.pauli_algebra import OperatorPolynomial, build_charge_family, spin_term


@pytest.fixture(scope="module")
def exact6():
    p = SpinChainParams(N=6, epsilon=0.01, gamma=0.5)
    es = chain_eigensystem(p, build_charge_family(p, 4))
    return p, es, steady_state(chain_liouvillian(p)).rho


def test_identity_expectation():
    rho = np.diag([0.2, 0.3, 0.5, 0.0])
    assert expval(np.eye(4), rho) == 1.0


def test_all_down_magnetization():
    rho = np.zeros((16, 16))
    rho[0, 0] = 1
    assert expval(total_spin("z", 4, dense=True), rho) == -2.0


def test_imaginary_residue_detected():
    with pytest.raises(ImaginaryResidue):
        expval(np.array([[0, 1j], [0, 0]]), np.array([[0.5, 0], [1, 0.5]]))


def test_spec_validation():
    with pytest.raises(ConfigError):
        ObservableSpec("correlator", axes="xyw")
    with pytest.raises(ConfigError):
        ObservableSpec("custom", polynomial=spin_term(1j, "XY"))
    with pytest.raises(ConfigError):
        ObservableSpec("charge_density", index=3)
    with pytest.raises(ConfigError):
        ObservableSpec("magnetization")
    assert C4.name == "c4_density" and ENERGY.name == "e_density"


def test_energy_route_eta_vanishes(exact6):
    p, es, rho = exact6
    assert abs(eta_ratio(ENERGY.operator(p), rho, es, "exact")) < 1e-10


def test_eta_scale_invariant(exact6):
    p, es, rho = exact6
    O = C4.operator(p).dense()
    assert eta_ratio(3.0 * O, rho, es) == pytest.approx(eta_ratio(O, rho, es), rel=1e-10)


def test_tgge_route_uses_single_charge_drift(exact6):
    p, es, _ = exact6
    sol = solve_tgge(p, es)
    beta = solve_tgge(p, es, charges=[es.labels.index("C2")]).lambdas[0]
    th = thermal_state(es, beta)
    O = C4.operator(p)
    expected = (expval(O, sol.rho) - expval(O, th)) / expval(O, th)
    assert eta_ratio(O, sol.rho, es, "tgge", p) == pytest.approx(expected, rel=1e-10)


def test_zero_thermal_value_reports_difference(exact6):
    p, es, rho = exact6
    # S^y S^y S^x has vanishing thermal value at beta = 0
    O = ObservableSpec("correlator", axes="yyx").operator(p)
    with pytest.raises(ThermalDenominatorNearZero) as info:
        eta_ratio(O, np.eye(64) / 64, es, beta=0.0)
    assert info.value.difference == pytest.approx(0.0, abs=1e-14)


def test_infinite_temperature_correlators_vanish():
    p = SpinChainParams(N=6)
    vals = correlator_scan(p, np.eye(64) / 64, ("yyx", "yxy", "xyz"))
    assert all(abs(v) < 1e-15 for v in vals.values())


def test_thermal_state_prefers_yyx_at_small_anisotropy(exact6):
    p, es, rho = exact6
    beta = thermal_fit(es, float(np.trace(np.diag(es.energies) @ es.to_eigenbasis(rho)).real))
    vals = correlator_scan(p, thermal_state(es, beta))
    assert abs(vals["yyx"]) > abs(vals["yxy"])


def test_correlators_translation_uniform_on_tgge(exact6):
    p, es, _ = exact6
    rho = solve_tgge(p, es).rho
    avg = correlator_scan(p, rho, ("yxy",))["yxy"]
    local = ObservableSpec("correlator", axes="yxy", per_site=False)
    single = OperatorPolynomial(spin_term(1.0, "YXY").terms, covariant=False)
    assert expval(realize(single, p.N, dense=True), rho) == pytest.approx(avg, abs=1e-12)
    assert expval(local.operator(p), rho) == pytest.approx(p.N * avg, abs=1e-12)


def test_csv_rows_follow_schema(tmp_path):
    path = tmp_path / "rows.csv"
    write_rows(path, [{"sweep_variable": "gamma", "value": 0.5, "observable": "c4_density",
                       "route": "exact", "eta": 0.1, "raw": -0.2}])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert lines[1].startswith("gamma,0.5,c4_density,exact,0.1,-0.2")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_expval_linear_in_operator(c, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    O = A + A.conj().T
    R = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = R @ R.conj().T
    rho /= np.trace(rho)
    assert expval(c * O, rho) == pytest.approx(c * expval(O, rho), rel=1e-10, abs=1e-12)
