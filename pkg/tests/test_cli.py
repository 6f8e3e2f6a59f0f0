import json

import numpy as np
import pytest

from gge_ions.cli import main
from gge_ions.ion_model import IonSystemParams
from gge_ions.liouville import load_matrix
from gge_ions.observables import CSV_FIELDS
from gge_ions.params import SpinChainParams
from gge_ions.pauli_algebra import OperatorPolynomial, build_charge_family, h0_density

SMALL = """
[model]
N = 4

[ensemble]
n_charges = 2

[sweep]
grid = 0.25, 0.75
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_figure1_schema_manifest_and_determinism(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("figure1", "--config", small_config, "--out", out, "--route", "exact") == 0
    csv_a = (a / "figure1_exact.csv").read_bytes()
    assert csv_a == (b / "figure1_exact.csv").read_bytes()
    lines = csv_a.decode().splitlines()
    assert lines[0] == "gamma,route,N,e_density,c4_density,error"
    assert len(lines) == 3 and lines[1].startswith("0.25,exact,4,")
    manifest = json.loads((a / "figure1_exact.csv.manifest.json").read_text())
    assert manifest["config"]["model"]["N"] == 4
    assert {"versions", "tolerances", "wall_time_s"} <= set(manifest)
    assert (a / "figure1.svg").read_text().startswith("<svg")


def test_figure1_all_routes_and_state_dumps(tmp_path, small_config):
    out = tmp_path / "o"
    assert run("figure1", "--config", small_config, "--out", out, "--n", 4, "--dump-states") == 0
    for route in ("exact", "bd", "tgge"):
        rows = (out / f"figure1_{route}.csv").read_text().splitlines()[1:]
        assert len(rows) == 2 and all(r.endswith(",") for r in rows)  # empty error column
    rho = load_matrix(out / "state_bd_N4_gamma0.25.txt")
    assert rho.shape == (16, 16) and np.trace(rho).real == pytest.approx(1.0, abs=1e-12)


def test_failed_points_kept_and_exit_3(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nN = 4\n\n[sweep]\ngrid = 0.5\n")  # four charges do not fit on N = 4
    out = tmp_path / "o"
    assert run("figure1", "--config", cfg, "--out", out, "--route", "tgge") == 3
    row = (out / "figure1_tgge.csv").read_text().splitlines()[1]
    assert "SupportTooLarge" in row


def test_figure2_and_figure4_schema(tmp_path, small_config):
    out = tmp_path / "o"
    assert run("figure2", "--config", small_config, "--out", out) == 0
    lines = (out / "figure2.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert {ln.split(",")[2] for ln in lines[1:]} == {"e_density", "c4_density"}
    assert run("figure4", "--config", small_config, "--out", out) == 0
    routes = {ln.split(",")[3] for ln in (out / "figure4.csv").read_text().splitlines()[1:]}
    assert routes == {"exact", "thermal"}


def test_figure3_one_file_per_gamma(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nN = 4\n\n[ensemble]\nn_charges = 2\n\n[sweep]\ngrid = 1.0\ngammas = 0.1, 0.9\n")
    out = tmp_path / "o"
    assert run("figure3", "--config", cfg, "--out", out) == 0
    assert (out / "figure3_gamma0.1.csv").exists() and (out / "figure3_gamma0.9.csv").exists()


def test_charges_dump_parseable(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("charges", "dump", "--out", out, "--n", 12) == 0
    printed = capsys.readouterr().out
    sections = {}
    for block in printed.split("# ")[1:]:
        label, _, body = block.partition("\n")
        sections[label] = OperatorPolynomial.from_text(body)
    assert list(sections) == ["C2", "C3", "C4", "C5"]
    assert sections["C2"] == h0_density(1.0, 0.1, 1.0)
    family = build_charge_family(SpinChainParams(), 4)
    for label, poly in zip(family.labels, family.charges):
        assert sections[label] == poly  # repr floats round-trip exactly
    from_file = OperatorPolynomial.from_text((out / "C3.txt").read_text())
    assert from_file == sections["C3"]


def test_ion_sim_and_replay(tmp_path, capsys):
    cfg = tmp_path / "ion.ini"
    cfg.write_text("[ion]\nt_opt = 20\nn_steps = 20\n")
    out = tmp_path / "o"
    assert run("ion-sim", "--config", cfg, "--out", out) == 0
    header = (out / "ion_sim_t20.csv").read_text().splitlines()[0]
    assert header == "t,P_00,P_10,P_psi_e,P_1e,P_phonon_top"
    manifest = tmp_path / "opt.json"
    p = IonSystemParams(Gamma_e1=0.5, Omega=0.08)
    manifest.write_text(json.dumps({"t_opt": 30.0, "params_opt": p.as_dict()}))
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    for d in (r1, r2):
        assert run("ion-sim", "--params-from", manifest, "--out", d) == 0
    assert (r1 / "ion_sim_t30.csv").read_bytes() == (r2 / "ion_sim_t30.csv").read_bytes()
    assert "F=" in capsys.readouterr().out


def test_phonon_cutoff_leakage_exits_3(tmp_path):
    cfg = tmp_path / "ion.ini"
    cfg.write_text("[ion]\nn_max = 2\nt_opt = 20\nn_steps = 20\n")
    assert run("ion-sim", "--config", cfg, "--out", tmp_path) == 3


def test_eff_ops_table(tmp_path, capsys):
    assert run("eff-ops", "--out", tmp_path) == 0
    text = capsys.readouterr().out
    assert "gamma_eff (power broadened)" in text and "stark_shift" in text
    assert (tmp_path / "eff_ops.csv").read_text().startswith("quantity,value")


def test_validate_report(tmp_path):
    assert run("validate", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["boson_elimination"]["ratio"] == pytest.approx(1.0, abs=0.1)
    assert report["raman_repump"]["ratio"] == pytest.approx(1.0, abs=0.1)
    assert "ratio_lowest_order" in report["weak_drive"]


@pytest.mark.parametrize(
    "argv",
    [
        ["figure9"],
        ["figure1", "--threads", "0"],
        ["figure1", "--n", "5"],
        ["charges", "dump", "--n", "8"],  # the fourth charge density needs more sites
        ["ion-sim", "--params-from", "/nonexistent.json"],
    ],
)
def test_config_errors_exit_2(tmp_path, argv):
    assert run(*argv, "--out", tmp_path) == 2


@pytest.mark.parametrize("body", ["[sweep]\ngrid =\n", "[model]\nbogus = 1\n"])
def test_bad_config_exits_2_before_work(tmp_path, body):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(body)
    out = tmp_path / "o"
    assert run("figure2", "--config", cfg, "--out", out) == 2
    assert not (out / "figure2.csv").exists()
