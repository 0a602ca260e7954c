import json
import math

import numpy as np
import pytest

from baryvae.cli import main

TOY_CONFIG = {
    "model": {
        "latent_dim": 4,
        "hidden": [16],
        "aggregation": "wb",
        "beta": 1.0,
        "epochs": 2,
        "batch_size": 16,
        "seed": 0,
    },
    "data": {"toy": {"num_modalities": 2, "examples_per_class": 8, "seed": 3}},
    "split": {"train_fraction": 0.75, "seed": 1},
    "eval": {
        "importance_samples": 8,
        "probe_samples": 60,
        "coherence_samples": 12,
        "loglik_examples": 4,
    },
}


def write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def run(*argv):
    return main(list(argv))


class TestAggregateCommand:
    def posterior_file(self, tmp_path, doc):
        path = tmp_path / "input.json"
        write_json(path, doc)
        return str(path)

    def test_wb_matches_averages(self, tmp_path):
        inp = self.posterior_file(
            tmp_path,
            {
                "posteriors": [
                    {"mean": [0.0], "sigma": [1.0]},
                    {"mean": [2.0], "sigma": [3.0]},
                ]
            },
        )
        out = tmp_path / "out.json"
        assert run("aggregate", "--input", inp, "--output", str(out), "--method", "wb") == 0
        doc = json.loads(out.read_text())
        assert doc["method"] == "wb"
        assert doc["mean"] == [1.0] and doc["sigma"] == [2.0]
        assert out.read_text().endswith("\n")

    def test_weights_flag(self, tmp_path):
        inp = self.posterior_file(
            tmp_path,
            {
                "posteriors": [
                    {"mean": [0.0], "sigma": [1.0]},
                    {"mean": [4.0], "sigma": [5.0]},
                ]
            },
        )
        out = tmp_path / "out.json"
        code = run(
            "aggregate",
            "--input", inp,
            "--output", str(out),
            "--method", "wb",
            "--weights", "0.25,0.75",
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["mean"] == [3.0] and doc["sigma"] == [4.0]

    def test_mwb_mixture_component_count(self, tmp_path):
        inp = self.posterior_file(
            tmp_path,
            {
                "posteriors": [
                    {"mean": [0.0, 0.0], "sigma": [1.0, 1.0]},
                    {"mean": [1.0, 1.0], "sigma": [2.0, 2.0]},
                ]
            },
        )
        out = tmp_path / "out.json"
        assert run("aggregate", "--input", inp, "--output", str(out), "--method", "mwb") == 0
        doc = json.loads(out.read_text())
        assert len(doc["components"]) == 4
        assert doc["weights"] == [0.25, 0.25, 0.25, 0.25]

    def test_full_covariance_barycenter(self, tmp_path):
        inp = self.posterior_file(
            tmp_path,
            {
                "posteriors": [
                    {"mean": [0.0, 0.0], "cov": [[1.0, 0.2], [0.2, 1.0]]},
                    {"mean": [2.0, 0.0], "cov": [[2.0, -0.1], [-0.1, 1.5]]},
                ]
            },
        )
        out = tmp_path / "out.json"
        assert run("aggregate", "--input", inp, "--output", str(out), "--method", "wb") == 0
        doc = json.loads(out.read_text())
        assert doc["mean"] == [1.0, 0.0]
        cov = np.asarray(doc["cov"])
        assert cov.shape == (2, 2) and np.allclose(cov, cov.T)

    def test_full_covariance_rejects_other_methods(self, tmp_path, capsys):
        inp = self.posterior_file(
            tmp_path,
            {"posteriors": [{"mean": [0.0], "cov": [[1.0]]}]},
        )
        code = run("aggregate", "--input", inp, "--output", str(tmp_path / "o.json"), "--method", "poe")
        assert code == 2
        assert capsys.readouterr().err.strip()

    def test_malformed_file_exits_2_with_diagnostic(self, tmp_path, capsys):
        inp = self.posterior_file(tmp_path, {"posteriors": [{"mean": [0.0]}]})
        code = run("aggregate", "--input", inp, "--output", str(tmp_path / "o.json"), "--method", "wb")
        assert code == 2
        err = capsys.readouterr().err
        assert "posteriors[0]" in err

    def test_bad_weights_exit_2(self, tmp_path, capsys):
        inp = self.posterior_file(
            tmp_path,
            {"posteriors": [{"mean": [0.0], "sigma": [1.0]}, {"mean": [1.0], "sigma": [1.0]}]},
        )
        code = run(
            "aggregate", "--input", inp, "--output", str(tmp_path / "o.json"),
            "--method", "wb", "--weights", "0.9,0.9",
        )
        assert code == 2
        assert capsys.readouterr().err.strip()


class TestTrainCommand:
    def test_writes_checkpoint_and_metrics(self, tmp_path):
        cfg = tmp_path / "config.json"
        write_json(cfg, TOY_CONFIG)
        out = tmp_path / "run"
        assert run("train", "--config", str(cfg), "--out", str(out)) == 0
        metrics = (out / "metrics.csv").read_text()
        lines = metrics.strip().split("\n")
        assert lines[0] == "epoch,loss,recon_mod0,recon_mod1,kl"
        assert len(lines) == 3  # header + 2 epochs
        assert metrics.endswith("\n")
        ckpt = json.loads((out / "checkpoint.json").read_text())
        assert ckpt["format_version"] == 1
        assert "params" in ckpt and "rng_state" in ckpt

    def test_deterministic_metrics_bytes(self, tmp_path):
        cfg = tmp_path / "config.json"
        write_json(cfg, TOY_CONFIG)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run("train", "--config", str(cfg), "--out", str(out_a)) == 0
        assert run("train", "--config", str(cfg), "--out", str(out_b)) == 0
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
        assert (out_a / "checkpoint.json").read_bytes() == (out_b / "checkpoint.json").read_bytes()

    def test_missing_data_section_names_field(self, tmp_path, capsys):
        cfg = tmp_path / "config.json"
        write_json(cfg, {"model": {"latent_dim": 4}})
        assert run("train", "--config", str(cfg), "--out", str(tmp_path / "o")) == 2
        assert "'data'" in capsys.readouterr().err

    def test_unknown_field_rejected(self, tmp_path, capsys):
        doc = json.loads(json.dumps(TOY_CONFIG))
        doc["model"]["dropout"] = 0.5
        cfg = tmp_path / "config.json"
        write_json(cfg, doc)
        assert run("train", "--config", str(cfg), "--out", str(tmp_path / "o")) == 2
        assert "dropout" in capsys.readouterr().err

    def test_numeric_failure_exits_3(self, tmp_path, capsys):
        doc = json.loads(json.dumps(TOY_CONFIG))
        doc["model"]["likelihood"] = "gaussian"
        doc["model"]["learning_rate"] = 1e160  # overflows the squared error
        cfg = tmp_path / "config.json"
        write_json(cfg, doc)
        with np.errstate(over="ignore", invalid="ignore"):
            code = run("train", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert code == 3
        err = capsys.readouterr().err
        assert "epoch" in err

    def test_out_dir_from_environment(self, tmp_path, monkeypatch):
        cfg = tmp_path / "config.json"
        write_json(cfg, TOY_CONFIG)
        env_dir = tmp_path / "from_env"
        monkeypatch.setenv("BARYVAE_OUT", str(env_dir))
        assert run("train", "--config", str(cfg)) == 0
        assert (env_dir / "metrics.csv").exists()


class TestIdxDataPath:
    def test_train_on_idx_files(self, tmp_path):
        import struct

        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(40, 4, 4)).astype(np.uint8)
        labels = (np.arange(40) % 10).astype(np.uint8)
        img_path = tmp_path / "imgs.idx"
        lbl_path = tmp_path / "lbls.idx"
        img_path.write_bytes(struct.pack(">IIII", 0x803, 40, 4, 4) + images.tobytes())
        lbl_path.write_bytes(struct.pack(">II", 0x801, 40) + labels.tobytes())
        cfg = tmp_path / "config.json"
        write_json(
            cfg,
            {
                "model": {"latent_dim": 3, "hidden": [8], "epochs": 1, "batch_size": 8},
                "data": {"idx": {"images": str(img_path), "labels": str(lbl_path)}},
            },
        )
        out = tmp_path / "run"
        assert run("train", "--config", str(cfg), "--out", str(out)) == 0
        lines = (out / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == "epoch,loss,recon_mod0,kl"
        assert len(lines) == 2


class TestEvalCommand:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = tmp_path / "config.json"
        write_json(cfg, TOY_CONFIG)
        out = tmp_path / "run"
        assert run("train", "--config", str(cfg), "--out", str(out)) == 0
        return out

    def test_report_structure(self, trained, tmp_path):
        out = tmp_path / "eval"
        code = run("eval", "--checkpoint", str(trained / "checkpoint.json"), "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["latent_accuracy"]) == 3  # 2^2 - 1 subsets
        assert all(0.0 <= v <= 1.0 for v in report["latent_accuracy"].values())
        acc_rows = (out / "accuracy.csv").read_text().strip().split("\n")
        assert len(acc_rows) == 4  # header + 3 subsets
        assert all(math.isfinite(v) for v in report["log_likelihood"].values())

    def test_tampered_version_exits_4(self, trained, tmp_path, capsys):
        doc = json.loads((trained / "checkpoint.json").read_text())
        doc["format_version"] = 99
        bad = tmp_path / "bad.json"
        write_json(bad, doc)
        assert run("eval", "--checkpoint", str(bad), "--out", str(tmp_path / "o")) == 4
        assert "format_version" in capsys.readouterr().err

    def test_unreadable_checkpoint_exits_4(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run("eval", "--checkpoint", str(bad), "--out", str(tmp_path / "o")) == 4


class TestBenchCommand:
    def test_small_grid_rows(self, capsys):
        code = run(
            "bench", "--wb-dims", "2,4", "--wb-members", "2,3", "--diag-dims", "32,64"
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "op,dim,members,seconds_per_call"
        # 4 wb_full rows + 2 dims x 3 diag ops
        assert len(lines) == 1 + 4 + 6
