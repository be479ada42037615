import json
import re
import subprocess
import sys

import numpy as np
import pytest

from iontomo.analysis import process_fidelity
from iontomo.cli import main
from iontomo.pulse_engine import CNOT_A, CNOT_B
from iontomo.quantum_core import ProcessMatrix, density_from_dict, ket_to_dm, unitary_to_chi
from iontomo.tomography import TomographyDataset, tomography_input_states

IDEAL_NOISE = {"addressing_ratio": 0.0, "detuning_sigma": 0.0}


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def bars(svg):
    return re.findall(r'data-row="(\w+)" data-col="(\w+)"', svg)


def outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != "manifest.json"}


# simulate


def test_simulate_zero_noise_matches_cnot(tmp_path):
    cfg = write_config(tmp_path, {"noise": IDEAL_NOISE})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o"), "--shots", "3"]) == 0
    doc = json.loads((tmp_path / "o" / "densities.json").read_text())
    assert len(doc["noisy"]) == 16 and doc["inputs"][5] == [2, 2]
    for psi, ideal, noisy in zip(tomography_input_states(), doc["ideal"], doc["noisy"]):
        expected = ket_to_dm(CNOT_A @ psi)
        np.testing.assert_allclose(density_from_dict(ideal), expected, atol=1e-12)
        np.testing.assert_allclose(density_from_dict(noisy), expected, atol=1e-9)
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and "densities.json" in manifest["outputs"]


def test_bad_key_exits_2_and_names_it(tmp_path, capsys):
    cfg = write_config(tmp_path, {"noise": {"detuning_sigmaa": 1.0}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "detuning_sigmaa" in capsys.readouterr().err


def test_malformed_json_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"seed": 1,\n "shots": }')
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:2:" in capsys.readouterr().err


def test_simulate_byte_identical_reruns(tmp_path):
    cfg = write_config(tmp_path, {"noise": {"detuning_sigma": 2000.0}})
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--seed", "7", "--shots", "20"]) == 0
    assert outputs(tmp_path / "a") == outputs(tmp_path / "b")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"]


# tomography


def test_tomography_default_writes_144_records(tmp_path):
    out = tmp_path / "t"
    assert main(["tomography", "--out", str(out), "--seed", "1", "--shots", "250"]) == 0
    doc = json.loads((out / "dataset.json").read_text())
    assert len(doc["records"]) == 144
    assert all(sum(r["counts"]) == 250 for r in doc["records"])
    ds = TomographyDataset.from_dict(doc)
    assert ds.shots == 250
    chi = ProcessMatrix.from_dict(json.loads((out / "chi_mle.json").read_text()))
    chi.validate()
    assert set(outputs(out)) == {"dataset.json", "chi_linear.json", "chi_mle.json", "chi_true.json"}


def test_tomography_exact_round_trip(tmp_path):
    cfg = write_config(tmp_path, {"noise": IDEAL_NOISE})
    out = tmp_path / "t"
    assert main(["tomography", "--config", cfg, "--out", str(out), "--exact", "--sequence", "B"]) == 0
    doc = json.loads((out / "dataset.json").read_text())
    assert doc["metadata"]["mode"] == "exact"
    chi = ProcessMatrix.from_dict(json.loads((out / "chi_mle.json").read_text()))
    assert process_fidelity(chi, unitary_to_chi(CNOT_B)) > 0.999


def test_tomography_flags_non_convergence(tmp_path):
    cfg = write_config(tmp_path, {"mle": {"max_iters": 2}})
    assert main(["tomography", "--config", cfg, "--out", str(tmp_path / "t"), "--seed", "3"]) == 4
    assert (tmp_path / "t" / "manifest.json").exists()


# analyze


def _chi_file(tmp_path, u, name):
    path = tmp_path / name
    path.write_text(json.dumps(unitary_to_chi(u).to_dict()))
    return str(path)


def test_analyze_identity_single_bar(tmp_path):
    chi = _chi_file(tmp_path, np.eye(4), "id.json")
    out = tmp_path / "a"
    assert main(["analyze", chi, "--target", "identity", "--out", str(out), "--ensemble", "500"]) == 0
    assert bars((out / "chi_abs.svg").read_text()) == [("II", "II")]
    assert bars((out / "chi_im.svg").read_text()) == []
    row = json.loads((out / "metrics.json").read_text())
    assert row["F_p"] == pytest.approx(1)
    assert (out / "metrics.csv").read_text().splitlines()[1].startswith("identity,1,1,")


def test_analyze_cnot_block(tmp_path):
    chi = _chi_file(tmp_path, CNOT_A, "a.json")
    out = tmp_path / "a"
    assert main(["analyze", chi, "--target", "A", "--out", str(out), "--ensemble", "500"]) == 0
    found = bars((out / "chi_abs.svg").read_text())
    block = {"II", "ZI", "IY", "ZY"}
    assert len(found) == 16
    assert {r for r, _ in found} == block and {c for _, c in found} == block
    svg = (out / "chi_abs.svg").read_text()
    assert ">II<" in svg and ">ZZ<" in svg


def test_analyze_malformed_file(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{}")
    assert main(["analyze", str(path), "--out", str(tmp_path / "a")]) == 2


# experiment and compare


def test_experiment_and_compare(tmp_path):
    base = {"calibrate_detuning": True, "ensemble_n": 500, "bootstrap": 5}
    single = write_config(tmp_path, base, "single.json")
    double = write_config(tmp_path, dict(base, repetitions=2, noise={"correlate_across_gates": True}), "double.json")
    assert main(["experiment", "--config", single, "--out", str(tmp_path / "s"), "--seed", "1"]) == 0
    assert main(["experiment", "--config", double, "--out", str(tmp_path / "d"), "--seed", "2"]) == 0
    table = (tmp_path / "s" / "table.csv").read_text().splitlines()
    assert len(table) == 3 and table[2].startswith("A,")
    assert main(["compare", str(tmp_path / "s" / "gate_report.json"), str(tmp_path / "d" / "gate_report.json"),
                 "--out", str(tmp_path / "c")]) == 0
    doc = json.loads((tmp_path / "c" / "discrepancy.json").read_text())
    disc = doc["discrepancy"]
    assert disc["d_f_p"] < 0 and disc["exceeds_errors"]["f_p"]
    assert doc["measured"]["F_p"] - doc["predicted"]["F_p"] == pytest.approx(disc["d_f_p"])


def test_compare_malformed_report(tmp_path):
    path = tmp_path / "r.json"
    path.write_text("[]")
    assert main(["compare", str(path), str(path), "--out", str(tmp_path / "c")]) == 2


def test_experiment_thread_independent(tmp_path):
    cfg = write_config(tmp_path, {"calibrate_detuning": True, "ensemble_n": 300, "bootstrap": 4})
    for threads in ("1", "3"):
        assert main(["experiment", "--config", cfg, "--out", str(tmp_path / threads), "--seed", "9",
                     "--threads", threads]) == 0
    assert outputs(tmp_path / "1") == outputs(tmp_path / "3")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "iontomo", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
