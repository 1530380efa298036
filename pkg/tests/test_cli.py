import json

import pytest

from marangoni.cli import DEFAULTS, EXIT_NUMERICAL, EXIT_OK, EXIT_PRECONDITION, main, resolve_config
from marangoni.errors import PreconditionError
from marangoni.io import read_table


def _run(tmp_path, command, config=None, seed=0, name="out"):
    args = [command, "--out", str(tmp_path / name), "--seed", str(seed)]
    if config is not None:
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps(config))
        args += ["--config", str(cfg)]
    code = main(args)
    doc_path = tmp_path / name / command / f"{command}.json"
    return code, (json.loads(doc_path.read_text()) if doc_path.exists() else None)


def test_tune_passes_and_carries_digest(tmp_path):
    code, doc = _run(tmp_path, "tune")
    assert code == EXIT_OK and doc["status"] == "pass"
    assert len(doc["config_digest"]) == 64
    header, data = read_table(tmp_path / "out" / "tune" / "profile.csv")
    assert header == ["y", "U", "U_y"] and data.shape == (401, 3)


def test_outputs_are_bit_identical(tmp_path):
    _run(tmp_path, "tune", seed=5, name="a")
    _run(tmp_path, "tune", seed=5, name="b")
    for f in ("tune.json", "profile.csv"):
        assert (tmp_path / "a" / "tune" / f).read_bytes() == (tmp_path / "b" / "tune" / f).read_bytes()


def test_unknown_section_is_precondition_failure(tmp_path):
    code, _ = _run(tmp_path, "tune", {"nonsense": {}})
    assert code == EXIT_PRECONDITION


def test_invalid_physical_config(tmp_path):
    code, doc = _run(tmp_path, "tune", {"physical": {"kappa": -1.0}})
    assert code == EXIT_PRECONDITION and doc["status"] == "precondition"


def test_unknown_physical_key(tmp_path):
    code, _ = _run(tmp_path, "tune", {"physical": {"N": 2, "viscosity": 3.0}})
    assert code == EXIT_PRECONDITION


def test_unknown_section_key_rejected():
    with pytest.raises(PreconditionError):
        resolve_config({"simulate": {"Tt": 5.0}})


def test_nonpositive_tolerance_rejected():
    with pytest.raises(PreconditionError):
        resolve_config({"compare": {"tolerance": 0.0}})


def test_config_merge_keeps_defaults():
    cfg = resolve_config({"simulate": {"T": 1.0}})
    assert cfg["simulate"]["T"] == 1.0 and cfg["simulate"]["Nx"] == DEFAULTS["simulate"]["Nx"]


def test_untunable_profile_is_numerical_failure(tmp_path):
    code, doc = _run(tmp_path, "tune", {"physical": {"N": 2, "kappa": 0.02}, "nuMode": "limit"})
    assert code == EXIT_NUMERICAL and doc["status"] == "numerical"


def test_inward_violation_lists_samples(tmp_path):
    code, doc = _run(tmp_path, "realize", {"realize": {"target": "saddle"}})
    assert code == EXIT_PRECONDITION
    assert doc["diagnostics"]["stage"] == "target" and len(doc["diagnostics"]["samples"]) > 0


def test_realize_saddle(tmp_path):
    code, doc = _run(tmp_path, "realize", {"realize": {"target": "saddle", "require_inward": False,
                                                       "xis": [1e-3, 1e-4], "T": 5.0}})
    assert code == EXIT_OK
    ev = doc["result"]["jacobian_eigenvalues"]
    assert ev[0] == pytest.approx(-1.0, rel=0.05) and ev[1] == pytest.approx(1.0, rel=0.05)
    assert doc["result"]["stages"]["sidon"]["ks"] == [1, 7]


def test_realize_stage_failure_named(tmp_path):
    code, doc = _run(tmp_path, "realize", {"realize": {"N": 5}})
    assert code == EXIT_PRECONDITION and doc["diagnostics"]["stage"] == "realizer"


def test_control_reports_rank_and_fails(tmp_path):
    code, doc = _run(tmp_path, "control", {"control": {"targets": 2}})
    assert code == EXIT_NUMERICAL and doc["status"] == "fail"
    assert doc["result"]["rank"] == 14 and doc["result"]["constraints"] == 16
    assert doc["result"]["f_relerr_max"] < 1e-8


def test_simulate_short_run(tmp_path):
    code, doc = _run(tmp_path, "simulate", {"simulate": {"T": 0.5, "samples": 5}})
    assert code == EXIT_OK and doc["result"]["mean_drift_max"] < 1e-8
    assert (tmp_path / "out" / "simulate" / "snapshot.bin").exists()


def test_coeffs_zero_parity_blocks(tmp_path):
    code, doc = _run(tmp_path, "coeffs")
    assert code == EXIT_OK and doc["result"]["zero_blocks_max"] < 1e-13
