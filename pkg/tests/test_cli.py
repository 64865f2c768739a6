import json
from pathlib import Path

import numpy as np
import pytest

from uqnet.cli import main
from uqnet.config import ConfigError, from_dict, load_config, parse_toggles, surrogate_preset, toy_preset

SMALL = {
    "preset": "toy",
    "ensemble": {"n_x": 4, "n_x1": 3, "n_x2": 3, "n_w": 2},
    "baselines": {"bagging_n": 3, "dropout_n": 40},
}


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _write(tmp, SMALL)
    out = tmp / "runs"
    codes = {}
    for cmd in ("gen-data", "train", "build-ensemble", "predict", "decompose", "baselines", "report"):
        codes[cmd] = main([cmd, "--config", cfg, "--out", str(out), "--workers", "1"])
    return tmp, cfg, out, codes


def test_presets_validate():
    assert toy_preset().validate().arch().n_params == 3
    s = surrogate_preset().validate()
    assert s.arch(4).layer_widths == (4, 16, 16, 16, 16, 16, 16, 1)
    us = s.uncertainty_spec(4, 1)
    assert us.space == "log10"
    np.testing.assert_allclose(us.input_sigma, np.log10([1.3, 1.5, 1.3, 1.2]))


def test_config_errors():
    with pytest.raises(ConfigError, match="unknown config key"):
        from_dict({"preset": "toy", "ensembel": {}})
    with pytest.raises(ConfigError):
        from_dict({"preset": "toy", "ensemble": {"n_w": 0}})
    with pytest.raises(ConfigError):
        from_dict({"preset": "nope"})
    with pytest.raises(ConfigError):
        parse_toggles("input,weight")
    t = parse_toggles("input,model")
    assert t.input and t.model and not (t.train or t.test or t.weights)


def test_overrides_merge():
    cfg = from_dict({"preset": "toy", "seed": 7, "model": {"train": {"max_epochs": 10, "smoothing_window": 5}}})
    tc = cfg.train_config()
    assert tc.max_epochs == 10 and tc.learning_rate == 0.05 and tc.rng_seed == 7


def test_full_pipeline_exit_codes_and_files(pipeline):
    tmp, cfg, out, codes = pipeline
    assert all(c == 0 for c in codes.values()), codes
    data = out / "data" / "v001"
    assert (data / "dataset.csv").read_text().splitlines()[0] == "x,z"
    assert sum(1 for _ in (data / "dataset.csv").open()) == 2001
    ens = out / "build-ensemble" / "v001" / "members"
    assert len(list(ens.glob("member_*.json"))) == 6
    assert json.loads((ens / "manifest.json").read_text())["complete"]
    pred = out / "predict" / "v001"
    assert sorted(p.name for p in pred.glob("pdf_*.csv")) == ["pdf_000.csv", "pdf_001.csv", "pdf_002.csv"]
    summary = json.loads((pred / "summary.json").read_text())
    assert {"mean", "std", "skewness", "bimodal"} <= set(summary[0])
    dec = out / "decompose" / "v001"
    assert (dec / "pdf_input1-train1-test1-weights1-model1.csv").exists()
    assert (dec / "pdf_input0-train0-test0-weights0-model0.csv").exists()
    base = out / "baselines" / "v001"
    rows = (base / "bagging_samples.csv").read_text().splitlines()
    assert rows[0] == "input_index,member_id,output" and len(rows) == 1 + 3 * 3
    assert len(list(base.glob("quantile_pdf_*.csv"))) == 3
    resolved = json.loads((pred / "config.json").read_text())
    assert resolved["ensemble"]["n_x"] == 4 and resolved["output"]["bins"] == 80


def test_rerun_is_byte_identical_and_versioned(pipeline):
    tmp, cfg, out, _ = pipeline
    for cmd in ("gen-data", "train", "build-ensemble", "predict"):
        assert main([cmd, "--config", cfg, "--out", str(out), "--workers", "1"]) == 0
    for cmd in ("data", "train", "build-ensemble", "predict"):
        a, b = out / cmd / "v001", out / cmd / "v002"
        files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
        assert files
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_build_ensemble_resumes(pipeline):
    tmp, cfg, out, _ = pipeline
    src = out / "build-ensemble" / "v001" / "members"
    man = json.loads((src / "manifest.json").read_text())
    # forge an interrupted build in a fresh output root
    root = tmp / "resume"
    for cmd in ("gen-data", "train"):
        assert main([cmd, "--config", cfg, "--out", str(root), "--workers", "1"]) == 0
    assert main(["build-ensemble", "--config", cfg, "--out", str(root), "--workers", "1"]) == 0
    d = root / "build-ensemble" / "v001" / "members"
    ref = {f: (d / f).read_bytes() for f in man["member_files"]}
    (d / man["member_files"][0]).unlink()
    m = json.loads((d / "manifest.json").read_text())
    m["complete"] = False
    (d / "manifest.json").write_text(json.dumps(m))
    assert main(["build-ensemble", "--config", cfg, "--out", str(root), "--workers", "1"]) == 0
    assert not (root / "build-ensemble" / "v002").exists()
    assert {f: (d / f).read_bytes() for f in man["member_files"]} == ref


def test_exit_codes(tmp_path):
    bad = _write(tmp_path, {"preset": "toy", "nonsense": 1})
    assert main(["gen-data", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--config", _write(tmp_path, SMALL, "s.json"), "--out", str(tmp_path / "empty")]) == 4
    assert main(["gen-data", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 4
    diverge = dict(SMALL, model={"train": {"learning_rate": 1e12, "max_epochs": 20, "smoothing_window": 5}})
    c = _write(tmp_path, diverge, "u.json")
    out = str(tmp_path / "u")
    assert main(["gen-data", "--config", c, "--out", out]) == 0
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["train", "--config", c, "--out", out]) == 3


def test_seed_override_changes_data(tmp_path):
    c = _write(tmp_path, SMALL)
    out = str(tmp_path / "o")
    assert main(["gen-data", "--config", c, "--out", out]) == 0
    assert main(["gen-data", "--config", c, "--out", out, "--seed", "3"]) == 0
    a = (Path(out) / "data" / "v001" / "dataset.csv").read_bytes()
    b = (Path(out) / "data" / "v002" / "dataset.csv").read_bytes()
    assert a != b
    assert json.loads((Path(out) / "data" / "v002" / "config.json").read_text())["seed"] == 3
