import json
import math

import numpy as np
import pytest

from transition_rmt.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main, read_csv


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def load(path):
    return json.loads(path.read_text())


def test_verify_default_passes(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK
    doc = load(tmp_path / "verify.json")
    assert doc["passed"] and doc["realizations"] == 50
    assert set(doc["checks"]) == {"tunneling", "transition_state"}
    assert doc["config"]["model"]["n"] == 100
    for key in ("config_digest", "seed", "realizations", "wall_time_s"):
        assert key in doc


def test_verify_sign_mutation_fails(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--realizations", "3", "--mutate-sign"]) == EXIT_CHECK


def test_verify_tolerance_flag(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--realizations", "3", "--tolerance", "1e-17"]) == EXIT_CHECK
    assert main(["verify", "--out", str(tmp_path), "--realizations", "3", "--tolerance", "1e-9"]) == EXIT_OK


def test_spectrum_outputs(tmp_path):
    out = tmp_path / "a"
    assert main(["spectrum", "--out", str(out), "--realizations", "4", "--plot", "--seed", "3"]) == EXIT_OK
    text = (out / "spectrum.csv").read_text()
    header, body = read_csv(out / "spectrum.csv")
    assert header == ["bin_center", "count", "density", "semicircle"]
    assert "# config:" in text and "# seed: 3" in text
    summary = load(out / "spectrum.json")
    n = summary["config"]["model"]["n"]
    width = body[1, 0] - body[0, 0]
    missing = (summary["underflow"] + summary["overflow"]) / 4
    assert abs(np.sum(body[:, 2]) * width + missing - 2 * n) <= 1e-9 * 2 * n
    svg = (out / "spectrum.svg").read_text()
    assert "&quot;seed&quot;:3" in svg or '"seed":3' in svg
    # re-running reproduces the data bit-identically
    cfg = write_cfg(tmp_path, {"output": {"dir": str(out)}})
    assert main(["spectrum", "--config", cfg, "--realizations", "4", "--plot", "--seed", "3"]) == EXIT_OK
    assert (out / "spectrum.csv").read_text() == text


def test_spectrum_empty_run_rejected(tmp_path):
    assert main(["spectrum", "--out", str(tmp_path), "--realizations", "0"]) == EXIT_CONFIG


def test_xi_command(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"kind": "tunneling", "n": 100, "v_tilde": 0.3,
                                         "channels1": [{"t": 1.0, "count": 5}]},
                               "realizations": 300})
    assert main(["xi", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    doc = load(tmp_path / "xi.json")
    for key in ("mean_re", "mean_im", "var", "se", "quadrature_value", "quadrature_error", "asymptote"):
        assert key in doc
    assert abs(doc["mean_im"] + 1) <= 4 * doc["se"]
    assert doc["asymptote"] == pytest.approx(2 / 5)
    assert doc["quadrature_value"] == pytest.approx(8 / 3, rel=1e-5)


def test_xi_divergent_reported_as_error_field(tmp_path):
    cfg = write_cfg(tmp_path, {"model": {"kind": "tunneling", "n": 40, "v_tilde": 0.3,
                                         "channels1": [{"t": 0.5}]},
                               "realizations": 20})
    assert main(["xi", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    doc = load(tmp_path / "xi.json")
    assert doc["quadrature_value"] is None
    assert "diverges" in doc["error"]


def test_transition_case_iii_and_zero_coupling(tmp_path):
    model = {"kind": "tunneling", "n": 200, "v_tilde": 1.0,
             "channels1": [{"t": 1.0, "count": 20}], "channels2": [{"t": 1.0, "count": 20}]}
    cfg = write_cfg(tmp_path, {"model": model, "realizations": 10, "cases": ["iii"]})
    assert main(["transition", "--config", cfg, "--out", str(tmp_path / "a"), "--plot"]) == EXIT_OK
    doc = load(tmp_path / "a" / "transition.json")
    pred = np.array(doc["predictions"]["iii"]["predicted"])
    assert np.allclose(pred, 6.25e-4)
    header, body = read_csv(tmp_path / "a" / "pab.csv")
    assert header == ["a", "b", "mean", "se"] and body.shape == (400, 4)
    assert (tmp_path / "a" / "pab.svg").exists()
    model["v_tilde"] = 0.0
    cfg = write_cfg(tmp_path, {"model": model, "realizations": 5}, "zero.json")
    assert main(["transition", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    _, body = read_csv(tmp_path / "b" / "pab.csv")
    assert np.all(body[:, 2] == 0)


def test_integral_command(tmp_path):
    assert main(["integral", "--out", str(tmp_path), "--transmissions", "1", "1", "1"]) == EXIT_OK
    doc = load(tmp_path / "integral.json")
    assert doc["value"] == pytest.approx(8.0, rel=1e-5) and doc["converged"]
    assert main(["integral", "--out", str(tmp_path), "--kind", "formation",
                 "--transmissions", "0.5", "0.5", "--t-a", "0.5"]) == EXIT_OK
    assert load(tmp_path / "integral.json")["value"] == pytest.approx(1.0, rel=1e-5)
    assert main(["integral", "--out", str(tmp_path), "--transmissions", "0.5"]) == EXIT_NUMERICAL
    assert main(["integral", "--out", str(tmp_path), "--kind", "formation",
                 "--transmissions", "0.5"]) == EXIT_CONFIG


def test_config_errors(tmp_path):
    bad = write_cfg(tmp_path, {"model": {"kind": "tunneling", "n": 10, "bogus": 1}})
    assert main(["xi", "--config", bad]) == EXIT_CONFIG
    bad = write_cfg(tmp_path, {"unknown": 1})
    assert main(["verify", "--config", bad]) == EXIT_CONFIG
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["verify", "--config", str(p)]) == EXIT_CONFIG
    assert main(["verify", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    # physically invalid model (too many channels) is a config error too
    bad = write_cfg(tmp_path, {"model": {"kind": "tunneling", "n": 20, "v_tilde": 0.1,
                                         "channels1": [{"t": 1.0, "count": 3}]}})
    assert main(["xi", "--config", bad, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_seed_flag_overrides_config_and_changes_digest(tmp_path):
    cfg = write_cfg(tmp_path, {"seed": 1})
    main(["verify", "--config", cfg, "--realizations", "2", "--out", str(tmp_path)])
    d1 = load(tmp_path / "verify.json")
    main(["verify", "--config", cfg, "--realizations", "2", "--seed", "2", "--out", str(tmp_path)])
    d2 = load(tmp_path / "verify.json")
    assert d1["seed"] == 1 and d2["seed"] == 2
    assert d1["config_digest"] != d2["config_digest"]
    assert math.isfinite(d2["wall_time_s"])
