import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defer_lab.cli import main
from defer_lab.config import config_from_dict, parse_config
from defer_lab.dataset import Dataset
from defer_lab.errors import ConfigError, DatasetError, InvalidInputError
from defer_lab.io import load_dataset, read_json, write_dataset
from defer_lab.oracle import ExpertSpec, SyntheticSpec, polygon_means, sample_synthetic
from defer_lab.verify import worker_threads

SYNTH = {"k_classes": 3, "feature_dim": 2,
         "class_means": polygon_means(3, 3.0).tolist(), "sigma": 1.0,
         "experts": [{"k": 2, "p": 0.75}], "n": 300, "seed": 0}


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


class TestConfig:
    def test_minimal_defaults(self, tmp_path):
        cfg = parse_config(write_config(tmp_path / "c.json",
                                        {"loss": "asm", "data": {"synthetic": SYNTH}}))
        assert cfg.budgets == [0.1, 0.2, 0.3]
        assert cfg.ece_bins == 15
        assert cfg.train.epochs == 200 and cfg.model.hidden == 32

    def test_both_sources(self):
        doc = {"data": {"synthetic": SYNTH, "csv": {"train": "a.csv", "k_classes": 3}}}
        with pytest.raises(ConfigError, match="data"):
            config_from_dict(doc)

    def test_no_source(self):
        with pytest.raises(ConfigError):
            config_from_dict({"data": {}})

    def test_budget_range(self):
        with pytest.raises(ConfigError, match="budgets"):
            config_from_dict({"budgets": [0.1, 1.5]})

    def test_unknown_key_has_path(self):
        with pytest.raises(ConfigError, match=r"train\.momentum"):
            config_from_dict({"train": {"momentum": 0.9}})

    def test_ill_typed(self):
        with pytest.raises(ConfigError, match="ece_bins"):
            config_from_dict({"ece_bins": "many"})

    def test_bad_loss(self):
        with pytest.raises(ConfigError, match="loss"):
            config_from_dict({"loss": "hinge"})

    def test_expert_count_vs_loss(self):
        synth = dict(SYNTH, experts=[{"k": 2, "p": 0.7}, {"k": 3, "p": 0.6}])
        with pytest.raises(ConfigError):
            config_from_dict({"loss": "asm", "data": {"synthetic": synth}})
        assert config_from_dict({"loss": "asm_multi", "data": {"synthetic": synth}}).data.n_experts == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{loss: asm")
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "c.json")

    def test_overrides(self):
        cfg = config_from_dict({"seed": 1}, seed=9, out_dir=None)
        assert cfg.seed == 9 and cfg.out_dir == "runs"


class TestDatasetCsv:
    def test_two_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x0,x1,y,m0\n0.5,-1.25,1,0\n3.0,2.0,0,0\n")
        data = load_dataset(p, 2, 1)
        assert len(data) == 2
        np.testing.assert_array_equal(data.features, [[0.5, -1.25], [3.0, 2.0]])
        assert data.labels.tolist() == [1, 0] and data.experts.tolist() == [[0], [0]]

    def test_header_only(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x0,y,m0\n")
        with pytest.raises(DatasetError, match="no samples"):
            load_dataset(p, 2)

    @pytest.mark.parametrize("body,row", [("1.0,2,0\n", 2), ("1.0,0,0\n1.0,0\n", 3),
                                          ("abc,0,0\n", 2), ("nan,0,0\n", 2),
                                          ("1.0,0,0\n1.0,0,5\n", 3)])
    def test_bad_rows_report_line(self, tmp_path, body, row):
        p = tmp_path / "d.csv"
        p.write_text("x0,y,m0\n" + body)
        with pytest.raises(DatasetError) as info:
            load_dataset(p, 2)
        assert info.value.row == row

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,c\n1,0,0\n")
        with pytest.raises(DatasetError):
            load_dataset(p, 2)

    def test_synthetic_round_trip(self, tmp_path):
        s = sample_synthetic(SyntheticSpec(**SYNTH))
        write_dataset(tmp_path / "d.csv", s.data)
        back = load_dataset(tmp_path / "d.csv", 3, 1)
        assert np.array_equal(back.features, s.data.features)
        assert np.array_equal(back.labels, s.data.labels)
        assert np.array_equal(back.experts, s.data.experts)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=2, max_size=40))
    def test_float_round_trip_exact(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("rt") / "d.csv"
        x = np.array(values)[:, None]
        data = Dataset(x, np.zeros(len(values), dtype=int), np.ones(len(values), dtype=int))
        write_dataset(path, data)
        assert np.array_equal(load_dataset(path, 2).features, x)


def test_thread_env(monkeypatch):
    monkeypatch.delenv("DEFER_LAB_THREADS", raising=False)
    assert worker_threads() == 1
    monkeypatch.setenv("DEFER_LAB_THREADS", "3")
    assert worker_threads() == 3
    monkeypatch.setenv("DEFER_LAB_THREADS", "zero")
    with pytest.raises(InvalidInputError):
        worker_threads()


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture
def small_config(tmp_path):
    doc = {"loss": "asm", "data": {"synthetic": SYNTH, "n_test": 200},
           "train": {"epochs": 3, "batch_size": 64}}
    return write_config(tmp_path / "cfg.json", doc)


class TestCli:
    def test_simulate(self, tmp_path, small_config):
        out = tmp_path / "sim"
        assert run_cli("simulate", "--config", small_config, "--out", out) == 0
        data = load_dataset(out / "dataset.csv", 3, 1)
        assert len(data) == 300
        doc = read_json(out / "bayes_risk.json")
        assert doc["seed"] == 0 and doc["config"]["mode"] == "simulate"
        assert doc["bayes_risk"] == sample_synthetic(SyntheticSpec(**SYNTH)).bayes_risk
        assert (out / "truth.csv").read_text().splitlines()[0] == "eta0,eta1,eta2,p0"

    def test_simulate_perfect_expert(self, tmp_path):
        synth = dict(SYNTH, experts=[{"k": 3, "p": 1.0}])
        cfg = write_config(tmp_path / "c.json", {"data": {"synthetic": synth}})
        assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
        assert read_json(tmp_path / "o" / "bayes_risk.json")["bayes_risk"] == 0.0

    def test_train_then_evaluate_checkpoint(self, tmp_path, small_config):
        out = tmp_path / "train"
        assert run_cli("train", "--config", small_config, "--out", out, "--seed", 4) == 0
        ckpt = read_json(out / "checkpoint.json")
        hist = read_json(out / "history.json")
        assert ckpt["seed"] == 4 and ckpt["config"]["seed"] == 4
        assert ckpt["model"]["arch"] == "mlp" and ckpt["model"]["loss"] == "asm"
        assert len(hist["history"]) == 3

        doc = json.loads(small_config.read_text())
        doc["checkpoint"] = str(out / "checkpoint.json")
        doc["data"].pop("n_test")
        cfg = write_config(tmp_path / "eval.json", doc)
        assert run_cli("evaluate", "--config", cfg, "--out", tmp_path / "ev") == 0
        rep = read_json(tmp_path / "ev" / "report.json")
        assert rep["split"] == "train" and rep["n_samples"] == 300
        assert set(rep["report"]["budgeted_errors"]) == {"0.1", "0.2", "0.3"}
        for key in ("error", "coverage", "ece"):
            assert 0.0 <= rep["report"][key] <= 1.0
        lines = (tmp_path / "ev" / "histogram.csv").read_text().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count_estimated,count_true" and len(lines) == 11

    def test_evaluate_is_reproducible_from_embedded_config(self, tmp_path, small_config):
        out = tmp_path / "ev"
        assert run_cli("evaluate", "--config", small_config, "--out", out) == 0
        first = (out / "report.json").read_bytes()
        first_hist = (out / "histogram.csv").read_bytes()
        embedded = read_json(out / "report.json")["config"]
        rerun = write_config(tmp_path / "again.json", embedded)
        assert run_cli("evaluate", "--config", rerun) == 0
        assert (out / "report.json").read_bytes() == first
        assert (out / "histogram.csv").read_bytes() == first_hist

    def test_csv_source(self, tmp_path):
        s = sample_synthetic(SyntheticSpec(**SYNTH))
        write_dataset(tmp_path / "train.csv", s.data)
        doc = {"loss": "ssm", "data": {"csv": {"train": "train.csv", "k_classes": 3}},
               "train": {"epochs": 2}}
        cfg = write_config(tmp_path / "c.json", doc)
        assert run_cli("evaluate", "--config", cfg, "--out", tmp_path / "o") == 0
        rep = read_json(tmp_path / "o" / "report.json")
        assert rep["config"]["data"]["csv"]["train"] == str((tmp_path / "train.csv").resolve())
        assert rep["report"]["histogram"]["count_true"] is None

    def test_verify_small(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DEFER_LAB_THREADS", "2")
        sizes = {"gradient": 5, "boundedness": 500, "recovery": 10, "equivalence": 100,
                 "regret": 30, "multi_expert": 5}
        cfg = write_config(tmp_path / "v.json", {"verify": sizes})
        assert run_cli("verify", "--config", cfg, "--out", tmp_path / "o") == 0
        doc = read_json(tmp_path / "o" / "verify.json")
        assert doc["passed"] is True
        assert len(doc["checks"]) == 8
        assert all(c["failures"] == 0 and c["cases"] > 0 for c in doc["checks"])

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "bad.json", {"budgets": [1.5]})
        assert run_cli("train", "--config", cfg) == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "ConfigError" and "budgets" in err["message"]

    def test_missing_data_section(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"loss": "asm"})
        assert run_cli("train", "--config", cfg, "--out", tmp_path / "o") == 2
        assert "data" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])["message"]

    def test_dataset_error_exit_code(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("x0,y,m0\n1.0,7,0\n")
        doc = {"data": {"csv": {"train": "d.csv", "k_classes": 2}}, "train": {"epochs": 1}}
        cfg = write_config(tmp_path / "c.json", doc)
        assert run_cli("train", "--config", cfg, "--out", tmp_path / "o") == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "DatasetError" and err["row"] == 2

    def test_console_script(self, tmp_path, small_config):
        proc = subprocess.run([sys.executable, "-m", "defer_lab.cli", "simulate", "--config",
                               str(small_config), "--out", str(tmp_path / "o")],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "resolved config" in proc.stderr and "seed: 0" in proc.stderr
