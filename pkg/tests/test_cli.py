import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from pathlib import Path

from sparsebump.cli import main
from sparsebump.lattice import ROOT, Cube, WeightedModel, load_model, save_model
from sparsebump.sparse import SparseFamily, load_family, save_family

FIXTURES = Path(__file__).parent / "fixtures"


def _instance(tmp_path, model, family):
    save_model(model, tmp_path / "m.json")
    save_family(family, tmp_path / "f.json")
    return ["--model", str(tmp_path / "m.json"), "--family", str(tmp_path / "f.json")]


def test_gen_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen", "--depth", "5", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    for f in ("model.json", "family.json", "run.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    model = load_model(tmp_path / "a" / "model.json")
    assert np.all(model.w > 0) and np.all(model.sigma > 0)
    load_family(tmp_path / "a" / "family.json", 5)
    meta = json.loads((tmp_path / "a" / "model.json").read_text())
    assert meta["config"]["seed"] == 3 and meta["version"].startswith("0.1.0")


def test_gen_spike(tmp_path):
    assert main(["gen", "--depth", "6", "--weight-law", "spike", "--spike-power", "6", "--out", str(tmp_path)]) == 0
    model = load_model(tmp_path / "model.json")
    for d in (model.w, model.sigma):
        assert d.max() / d.min() == 2.0 ** 6


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"depth": 3, "seed": 8, "weight_law": "dyadic-doubling"}))
    assert main(["gen", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path)]) == 0
    echoed = json.loads((tmp_path / "run.json").read_text())["config"]
    assert echoed["depth"] == 3 and echoed["seed"] == 9 and echoed["weight_law"] == "dyadic-doubling"
    assert load_model(tmp_path / "model.json").depth == 3


def test_constants_worked_example(tmp_path, worked_model, chain_family):
    args = _instance(tmp_path, worked_model, chain_family)
    assert main(["constants", *args, "--p", "2", "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "constants.json").read_text())
    assert out["entropy_w_sigma"]["value"] == pytest.approx(2.0 * 1.25 * (1 + np.log2(1.25)) ** 2.4, rel=1e-14)
    assert out["entropy_w_sigma"]["witness"] == ROOT.to_dict()
    assert out["plain_ap"]["value"] == 3.0


def test_constants_unit_weights(tmp_path, unit_model, chain_family):
    assert main(["constants", *_instance(tmp_path, unit_model, chain_family), "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "constants.json").read_text())
    for key in ("entropy_w_sigma", "entropy_sigma_w", "direct_w_sigma", "direct_sigma_w", "plain_ap"):
        assert out[key]["value"] == 1.0
    assert out["T1"]["value"] == out["T2"]["value"] == 2.5


def test_model_json_round_trip(tmp_path):
    main(["gen", "--depth", "4", "--seed", "1", "--out", str(tmp_path)])
    src = tmp_path / "model.json"
    extra = {k: v for k, v in json.loads(src.read_text()).items() if k in ("config", "version")}
    save_model(load_model(src), tmp_path / "again.json", extra=extra)
    assert (tmp_path / "again.json").read_bytes() == src.read_bytes()


def test_norm_command(tmp_path, unit_model, chain_family):
    args = _instance(tmp_path, unit_model, chain_family)
    assert main(["norm", *args, "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "norm.json").read_text())
    assert out["value"] == pytest.approx(np.sqrt((3 + 2 * np.sqrt(2)) / 2), rel=1e-12)
    assert out["method"] == "exact_eigen_p2"
    assert main(["norm", *args, "--p", "3", "--norm-method", "brute", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "norm.json").read_text())["method"] == "brute_force"


def test_verify_worked_example(tmp_path, unit_model, chain_family, capsys):
    args = _instance(tmp_path, unit_model, chain_family)
    assert main(["verify", *args, "--p", "2", "--out", str(tmp_path)]) == 0
    lines = [json.loads(x) for x in (tmp_path / "reports.jsonl").read_text().splitlines()]
    saw = next(r for r in lines if r["name"] == "sawyer")
    assert saw["ratio"] == pytest.approx(0.53983, abs=1e-5)
    assert all(r["config"]["command"] == "verify" for r in lines)
    assert "sawyer" in capsys.readouterr().out


def test_sweep_zero_seeds(tmp_path):
    assert main(["sweep", "--seeds", "0", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "summary.csv").open()))
    assert rows == [["seed", "depth", "p", "delta", "inequality", "lhs", "rhs", "ratio", "passed"]]


def test_sweep_small_with_calibration(tmp_path):
    # a sub-grid of the calibrated one, so the frozen constants apply
    assert main(["sweep", "--seeds", "3", "--depths", "4", "--ps", "1.5", "2", "--out", str(tmp_path),
                 "--calibration", str(FIXTURES / "calibration.json")]) == 0


def test_invariant_violation_exits_one(tmp_path, capsys):
    frozen = tmp_path / "tiny.json"
    frozen.write_text(json.dumps({"constants": {"sawyer": 1e-6, "theorem1": 1e-6, "theorem2": 1e-6}}))
    code = main(["sweep", "--seeds", "1", "--depths", "2", "--ps", "2", "--out", str(tmp_path),
                 "--calibration", str(frozen)])
    assert code == 1
    assert "FAIL calibration sawyer" in capsys.readouterr().out


def test_entry_point_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparsebump.cli", "gen", "--depth", "2", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "sparsebump.cli", "gen", "--weight-law", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
