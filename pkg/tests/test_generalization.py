import csv

import numpy as np
import pytest

from wtasym.generalization import (ComparisonReport, HpoSpace, SplitSpec, _mlp_logits, fit_readout,
                                   hpo_search, ideal_encoder, make_split, run_comparison,
                                   sample_downstream_task)
from wtasym.latents import LatentStructure, build_entanglement
from wtasym.nn import make_rng
from wtasym.tasks import TaskBank, label_dataset
from wtasym.trainer import auc

UNMATCHED = LatentStructure((5, 8, 5, 3, 9))
QUICK = HpoSpace(trials=1, max_epochs=20, patience=3)


def rows_as_set(a):
    return {tuple(r) for r in a}


class TestSplits:
    def test_pair_sizes(self):
        tr, va, te = make_split(UNMATCHED, SplitSpec("pair-of-categories"))
        assert (len(tr), len(va), len(te)) == (5130, 135, 135)
        assert np.all((te[:, 0] == 0) & (te[:, 1] == 0))
        assert np.all((va[:, 0] == 1) & (va[:, 1] == 1))

    def test_constant_category_sizes(self):
        tr, va, te = make_split(UNMATCHED, SplitSpec("constant-category"))
        assert (len(tr), len(va), len(te)) == (1080, 1080, 3240)
        assert np.all(tr[:, 0] == 0) and np.all(va[:, 0] == 1) and np.all(te[:, 0] >= 2)

    def test_random_sizes(self):
        tr, va, te = make_split(UNMATCHED, SplitSpec("random", val_size=100, test_size=200, seed=4))
        assert (len(tr), len(va), len(te)) == (5100, 100, 200)

    @pytest.mark.parametrize("kind", ["random", "pair-of-categories", "constant-category"])
    def test_partition(self, kind):
        s = LatentStructure((3, 4, 2))
        parts = make_split(s, SplitSpec(kind, val_size=5, test_size=5))
        sets = [rows_as_set(p) for p in parts]
        assert sum(len(x) for x in sets) == s.p == len(set().union(*sets))

    def test_vision_split(self):
        from wtasym.sprites import STRUCTURE
        tr, va, te = make_split(STRUCTURE, SplitSpec("vision"))
        assert (len(tr), len(va), len(te)) == (1536, 192, 192)
        with pytest.raises(ValueError):
            make_split(UNMATCHED, SplitSpec("vision"))

    def test_bad_selector(self):
        with pytest.raises(ValueError):
            make_split(LatentStructure((2, 2)), SplitSpec("pair-of-categories", test_select=((0, 5), (1, 0))))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SplitSpec("diagonal")


def test_ignored_factor_has_no_effect():
    s = LatentStructure((3, 3))
    task = sample_downstream_task(s, make_rng(0), ignore_factor=0)
    bank = TaskBank(s, [task])
    post = label_dataset(bank, s.onehot(np.array([[0, 1], [1, 1], [2, 1]])).reshape(3, -1))
    np.testing.assert_allclose(post[:, 0], post[0, 0], atol=1e-12)


def test_hpo_budget_one():
    gen = make_rng(0)
    x = gen.normal(size=(40, 3))
    y = (x[:, 0] > 0).astype(float)
    best, trials = hpo_search(QUICK, (x, y), (x, y), make_rng(1))
    assert len(trials) == 1 and trials[0]["trial"] == 0
    assert set(best) >= {"hidden_dim", "layers", "lr", "batch_size"}


def test_hpo_samples_inside_space():
    space = HpoSpace()
    gen = make_rng(3)
    for _ in range(50):
        hp = space.sample(gen)
        assert hp["hidden_dim"] in space.hidden_dims and hp["layers"] in space.layers
        assert space.lr[0] <= hp["lr"] <= space.lr[1]


def test_separable_data_fits():
    gen = make_rng(0)
    x = gen.normal(size=(300, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(float)
    hp = {"hidden_dim": 16, "layers": 1, "dropout": 0.0, "layernorm": False, "lr": 0.01,
          "weight_decay": 1e-4, "batch_size": 32}
    fit = fit_readout(hp, x[:200], y[:200], x[200:], y[200:], make_rng(1), max_epochs=200, patience=20)
    assert auc(_mlp_logits(fit.net, x[200:])[:, 0], y[200:]) > 0.99
    assert fit.epochs >= 1


class TestComparison:
    def setup_method(self):
        self.s = LatentStructure((3, 3, 2))
        self.phi = build_entanglement(self.s, (10, 10), seed=0)

    def run(self, seeds=(0,)):
        return run_comparison(self.s, self.phi, ideal_encoder(self.s),
                              SplitSpec("pair-of-categories"), [12], list(seeds), QUICK)

    def test_deterministic(self):
        a, b = self.run(), self.run()
        assert a.table() == b.table()

    def test_one_seed_sd_zero(self):
        line = self.run().table()[0]
        assert line[0] == 12 and line[2] == 0.0 and line[8] == 0.0

    def test_report_files(self, tmp_path):
        rep = self.run(seeds=(0, 1))
        rep.write_csv(tmp_path / "c.csv")
        rep.write_json(tmp_path / "c.json")
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ComparisonReport.HEADER and len(rows) == 2
        assert len(rep.rows[0].test_auc["z"]) == 2
        assert rep.curve()[0][0] == 12

    def test_callable_observation(self):
        def observe(c):
            return self.s.onehot(c).reshape(len(c), -1) * 2.0 - 1.0
        rep = run_comparison(self.s, observe, ideal_encoder(self.s), SplitSpec("pair-of-categories"),
                             [10], [0], QUICK, representations=("z",))
        assert rep.rows[0].test_auc["x"] == [] and len(rep.rows[0].test_auc["z"]) == 1


def test_ideal_encoder_is_onehot():
    enc = ideal_encoder(LatentStructure((2, 3)))
    assert enc(np.array([[1, 2]]), None).tolist() == [[0, 1, 0, 0, 1]]
