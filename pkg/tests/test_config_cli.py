import json
import subprocess
import sys

import numpy as np
import pytest

from wtasym.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from wtasym.config import (ConfigError, config_from_dict, derive_seeds, load_config, load_preset,
                           preset_names)
from wtasym.experiment import build_phi, generate_data
from wtasym.latents import load_dataset

TINY = {
    "name": "tiny", "setup": "custom", "counts": [2, 2, 4], "phi_dims": [8, 12], "encoder_dims": [12, 12, 8],
    "head_sizes": [2, 2, 4], "n_tasks": 4, "train_size": 120, "test_size": 40, "tau": 2.0, "tau_decay": 0.99,
    "mae_threshold": 1e-3,
    "train": {"epochs": 3, "batch_size": 32, "lr": 0.01, "eta_min": 1e-6, "t_max": 3, "beta1": 0.9,
              "beta2": 0.999, "weight_decay": 0.0, "l1_readout": 0.0},
    "generalization": {"splits": ["pair-of-categories"], "sizes": [8], "seeds": [0]},
    "seeds": [0],
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestPresets:
    def test_all_validate(self):
        names = preset_names()
        assert {"matched", "unmatched", "confounding", "dsprites"} <= set(names)
        for name in names:
            cfg = load_preset(name)
            assert cfg.name == name
            assert sum(cfg.head_sizes) == cfg.encoder_dims[-1]

    def test_matched_shapes(self):
        cfg = load_preset("matched")
        data = generate_data(cfg.with_overrides(train_size=10, test_size=5), 0)
        assert data.train.z.shape == (10, 25) and data.train.x.shape == (10, 70)
        assert data.bank.W_folded.shape == (25, 25)

    def test_dsprites_corpus_rows(self):
        data = generate_data(load_preset("dsprites-desk"), 0)
        assert len(data.train) + len(data.test) == 1920
        assert data.train.x.shape[1] == 12288

    def test_confounding_input_width(self):
        phi = build_phi(load_preset("confounding-desk"), 0)
        assert phi.dims[0] == 30 + 9

    def test_roundtrip(self, tmp_path):
        cfg = load_preset("unmatched")
        (tmp_path / "c.json").write_text(cfg.to_json())
        back = load_config(tmp_path / "c.json")
        assert back == cfg and back.config_hash() == cfg.config_hash()


class TestValidation:
    def bad(self, **changes):
        d = json.loads(json.dumps(TINY))
        d.update(changes)
        with pytest.raises(ConfigError):
            config_from_dict(d)

    def test_head_width(self):
        self.bad(head_sizes=[2, 2, 2])

    def test_phi_input(self):
        self.bad(phi_dims=[6, 12])

    def test_encoder_input(self):
        self.bad(encoder_dims=[10, 12, 5])

    def test_unknown_key(self):
        self.bad(learning_rate=0.1)

    def test_unknown_split(self):
        self.bad(generalization={"splits": ["diagonal"], "sizes": [8], "seeds": [0]})

    def test_missing_preset(self):
        with pytest.raises(ConfigError):
            load_preset("nope")


def test_derive_seeds():
    a, b = derive_seeds(0), derive_seeds(1)
    assert set(a) == {"phi", "tasks", "data", "init", "shuffle"}
    assert a == derive_seeds(0) and a != b
    assert len(set(a.values())) == 5


class TestCli:
    def test_help_and_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("--help")
        assert exc.value.code == EXIT_OK
        with pytest.raises(SystemExit) as exc:
            run("train", "--bogus")
        assert exc.value.code == EXIT_USAGE
        with pytest.raises(SystemExit) as exc:
            run()
        assert exc.value.code == EXIT_USAGE

    def test_pipeline(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert run("gen-data", "--config", tiny_config, "--out", out) == EXIT_OK
        d = out / "seed-0"
        manifest = json.loads((d / "manifest.json").read_text())
        assert manifest["gen-data"]["config_hash"] == load_config(tiny_config).config_hash()
        assert load_dataset(d / "train.wtad").x.shape == (120, 12)
        assert run("train", "--out", out) == EXIT_OK
        assert (d / "checkpoint.wtac").is_file() and (d / "loss.csv").is_file()
        assert run("eval", "--out", out) == EXIT_OK
        ev = json.loads((d / "eval.json").read_text())
        assert "test_mae" in ev
        rows = (d / "activation.csv").read_text().splitlines()
        assert len(rows) == 1 + 8 * 8
        assert run("generalize", "--out", out, "--hpo-trials", 1, "--max-epochs", 5) == EXIT_OK
        assert (d / "comparison-pair-of-categories-model.csv").is_file()
        assert run("generalize", "--out", out, "--encoder", "ideal", "--hpo-trials", 1,
                   "--max-epochs", 5) == EXIT_OK

    def test_zero_epochs(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert run("gen-data", "--config", tiny_config, "--out", out) == EXIT_OK
        assert run("train", "--out", out, "--epochs", 0) == EXIT_OK
        assert run("eval", "--out", out) == EXIT_OK

    def test_config_mismatch(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        run("gen-data", "--config", tiny_config, "--out", out)
        assert run("train", "--preset", "matched-desk", "--out", out, "--seed", 0) == EXIT_RUNTIME

    def test_missing_inputs(self, tmp_path):
        assert run("train", "--out", tmp_path / "empty") == EXIT_RUNTIME
        assert run("eval", "--preset", "matched-desk", "--out", tmp_path / "empty", "--seed", 0) == EXIT_RUNTIME

    def test_missing_checkpoint(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        run("gen-data", "--config", tiny_config, "--out", out)
        assert run("generalize", "--out", out) == EXIT_RUNTIME
        assert run("eval", "--out", out) == EXIT_RUNTIME

    def test_conflicting_config_sources(self, tmp_path, tiny_config):
        assert run("gen-data", "--config", tiny_config, "--preset", "matched", "--out", tmp_path) == EXIT_USAGE

    def test_bad_config_file(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({**TINY, "head_sizes": [9]}))
        assert run("gen-data", "--config", tmp_path / "bad.json", "--out", tmp_path) == EXIT_USAGE

    def test_verify_theorem(self, tmp_path, capsys):
        assert run("verify-theorem", "--m", 2, "--lc", 2, "--out", tmp_path) == EXIT_OK
        rep = json.loads((tmp_path / "theorem.json").read_text())
        assert rep["structured"] == 8 and rep["violations"] == 0
        assert run("verify-theorem", "--m", 3, "--lc", 2, "--out", tmp_path) == EXIT_OK
        assert json.loads((tmp_path / "theorem.json").read_text())["structured"] == 48
        assert run("verify-theorem", "--m", 2, "--lc", 1, "--out", tmp_path) == EXIT_USAGE
        assert run("verify-theorem", "--counts", 2, 3, "--mode", "sampled", "--trials", 50,
                   "--out", tmp_path) == EXIT_OK
        assert "conjecture" in capsys.readouterr().out

    def test_render_sprites(self, tmp_path):
        pytest.importorskip("PIL")
        assert run("render-sprites", "--out", tmp_path, "--png", 2) == EXIT_OK
        split = json.loads((tmp_path / "split.json").read_text())
        assert [len(split[k]) for k in ("train", "val", "test")] == [1536, 192, 192]
        assert len(list((tmp_path / "png").glob("*.png"))) == 2
        assert load_dataset(tmp_path / "corpus.wtad").x.shape == (1920, 12288)

    def test_byte_identical_rerun(self, tmp_path, tiny_config):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert run("gen-data", "--config", tiny_config, "--out", out, "--seed", 3) == EXIT_OK
            assert run("train", "--out", out) == EXIT_OK
            assert run("eval", "--out", out) == EXIT_OK
        for name in ("train.wtad", "test.wtad", "tasks.json", "checkpoint.wtac", "loss.csv", "run.json",
                     "eval.json", "activation.csv"):
            a = (outs[0] / "seed-3" / name).read_bytes()
            assert a == (outs[1] / "seed-3" / name).read_bytes(), name

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "wtasym", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "render-sprites" in res.stdout


def test_seed_streams_are_independent():
    cfg = config_from_dict(TINY)
    a, b = generate_data(cfg, 0), generate_data(cfg, 1)
    assert not np.array_equal(a.train.x, b.train.x)
