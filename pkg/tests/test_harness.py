import json
import math

import numpy as np
import pytest

from metakernel import harness
from metakernel.errors import ResourceError, ValidationError
from metakernel.harness import ExperimentConfig, kernel_from_dict
from metakernel.regression import generalization_bound
from metakernel.tasks import gen_quadratic_tasks


def small(experiment, **kw):
    base = dict(experiment=experiment, tasks={"N": 4, "n": 6, "m": 2, "n_test": 3},
                seeds=[0], width=64, steps=20)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_defaults_and_validation():
    cfg = ExperimentConfig()
    assert cfg.sweep_values == [0.0, 0.05, 0.1, 0.2, 0.4]
    assert cfg.width == 512 and cfg.steps == 2000 and cfg.tasks["n_test"] == 40
    assert ExperimentConfig(experiment="width_sweep").sweep_values == [64, 256, 1024]
    for bad in (dict(experiment="nope"), dict(seeds=[]), dict(steps=-1),
                dict(tasks={"kind": "sine"}), dict(eta_scale=2.5)):
        with pytest.raises(ValidationError):
            ExperimentConfig(**bad)


def test_config_dict_roundtrip_and_hash():
    cfg = small("noise_sweep", sweep_values=[0.0, 0.1])
    d = json.loads(harness.canonical_json(cfg.to_dict()))
    again = ExperimentConfig.from_dict(d)
    assert again.to_dict() == cfg.to_dict()
    assert again.config_hash() == cfg.config_hash()
    assert small("noise_sweep", sweep_values=[0.2]).config_hash() != cfg.config_hash()
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"experiment": "compare", "bogus": 1})


def test_kernel_from_dict():
    k = kernel_from_dict({"depth_L": 3, "tau": "inf", "ridge": 0.0})
    assert k.net.depth_L == 3 and math.isinf(k.tau) and k.ridge == 0.0
    with pytest.raises(ValidationError):
        kernel_from_dict({"learning_rate": 1.0})


def test_noise_sweep_single_cell_matches_direct_call():
    cfg = small("noise_sweep", sweep_values=[0.0])
    res = harness.run_noise_sweep(cfg)
    assert len(res.rows) == 1 and res.rows[0]["error"] == ""
    train = gen_quadratic_tasks(4, 6, 2, seed=0).tasks
    direct = generalization_bound(train, cfg.kernel).bound
    assert res.rows[0]["bound"] == pytest.approx(direct, rel=1e-12)
    assert res.rows[0]["maml_test_loss"] > 0


def test_noise_sweep_one_row_per_cell():
    cfg = small("noise_sweep", sweep_values=[0.0, 0.3], seeds=[0, 1], steps=5)
    res = harness.run_noise_sweep(cfg)
    assert [(r["sweep_value"], r["seed"]) for r in res.rows] == [(0.0, 0), (0.0, 1), (0.3, 0),
                                                                 (0.3, 1)]


def test_error_rows_do_not_abort():
    cfg = small("noise_sweep", sweep_values=[0.0, 0.1], eta_scale=None,
                kernel=kernel_from_dict({"eta_outer": 1e40}))
    res = harness.run_noise_sweep(cfg)
    assert len(res.rows) == 2
    assert all("DivergenceError" in r["error"] and "sweep_value=" in r["error"] for r in res.rows)


def test_width_sweep_rows_and_cap():
    cfg = small("width_sweep", sweep_values=[32], seeds=[0, 1], steps=10, kernel_checkpoints=2)
    res = harness.run_width_sweep(cfg)
    assert len(res.rows) == 2
    for r in res.rows:
        assert r["error"] == ""
        assert 0 < r["kernel_rel_error"] < math.inf
        assert r["param_drift"] > 0 and r["kernel_drift"] > 0
    with pytest.raises(ResourceError):
        harness.run_width_sweep(small("width_sweep", sweep_values=[8192]))


def test_compare_no_training():
    cfg = small("compare", sweep_values=[64], steps=0)
    row = harness.run_compare(cfg).rows[0]
    assert row["error"] == ""
    assert row["rmse_maml_linearized"] == 0.0
    for a in harness.PREDICTORS:
        assert row[f"rmse_{a}_{a}"] == 0.0
        for b in harness.PREDICTORS:
            assert row[f"rmse_{a}_{b}"] == row[f"rmse_{b}_{a}"]


def test_decompose_table():
    cfg = small("decompose", sweep_values=[0.5], tasks={"N": 10, "n": 8, "m": 2})
    res = harness.run_decompose(cfg)
    assert res.columns == ["x", "truth", "base", "meta", "pfg"]
    assert len(res.rows) == 200
    for r in res.rows:
        assert abs(r["meta"] - r["base"] + r["pfg"]) <= 1e-10
    assert res.rows[0]["x"] == 0.0 and res.rows[-1]["x"] == 1.0


def test_decompose_meta_beats_base():
    cfg = ExperimentConfig(experiment="decompose")
    res = harness.run_decompose(cfg)
    meta = np.mean([abs(r["meta"] - r["truth"]) for r in res.rows])
    base = np.mean([abs(r["base"] - r["truth"]) for r in res.rows])
    assert meta < base


def test_outputs_deterministic(tmp_path):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (out1, out2):
        harness.run_noise_sweep(small("noise_sweep", sweep_values=[0.1], output_path=str(out)))
    assert out1.read_bytes() == out2.read_bytes()
    side = json.loads((tmp_path / "a.csv.json").read_text())
    cfg = ExperimentConfig.from_dict(side["config"])
    assert side["config_hash"] == cfg.config_hash()
    assert "started_utc" in side and side["code_version"]


def test_seed_median():
    cfg = small("noise_sweep", sweep_values=[0.0], seeds=[0, 1, 2], steps=2)
    res = harness.run_noise_sweep(cfg)
    med = harness.seed_median(res, "bound")
    assert med[0.0] == pytest.approx(np.median(res.column("bound")))


def test_load_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("experiment: compare\nwidth: 128\nkernel:\n  tau: 3\n")
    assert harness.load_config(str(p))["kernel"]["tau"] == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ValidationError):
        harness.load_config(str(bad))
    with pytest.raises(ValidationError):
        harness.load_config(str(tmp_path / "missing.yaml"))
