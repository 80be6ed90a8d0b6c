import json

import numpy as np
import pytest

from nbweight.dataset import Component, NoiseMode, SyntheticDomain, generate, preset
from nbweight.errors import DataError
from nbweight.experiments import (ScoreWeighting, bias_variance, compare_bias_variance, decompose, draw_seeds,
                                  grid_search, paired_bootstrap, paired_evaluation, percent_bin, prepare,
                                  split_train_test)
from nbweight.trainer import TrainConfig, train

FAST = TrainConfig(epochs=3, hidden=8, learning_rate=0.05)


@pytest.fixture(scope="module")
def prepared():
    g = generate(preset("two-gauss-overlap"), 200, 5)
    return prepare(g.dataset, 5, "euclidean", 0.2, 5)


class TestSplit:
    def test_stratified(self):
        g = generate(preset("five-class-ring"), 500, 1)
        tr, te = split_train_test(g.dataset, 0.2, 3)
        assert tr.n + te.n == 500
        assert not set(tr.ids.tolist()) & set(te.ids.tolist())
        for c in range(5):
            total = np.sum(g.dataset.labels == c)
            assert np.sum(te.labels == c) == round(0.2 * total)

    def test_deterministic(self):
        g = generate(preset("two-gauss-overlap"), 100, 1)
        a = split_train_test(g.dataset, 0.3, 8)[1].ids
        assert np.array_equal(a, split_train_test(g.dataset, 0.3, 8)[1].ids)

    def test_prepare_excludes_test(self, prepared):
        tr, te, scores = prepared
        assert [s.sample_id for s in scores] == tr.ids.tolist()


def test_draw_seeds():
    seeds = draw_seeds(np.random.default_rng(0), 1000)
    assert len(set(seeds)) == 1000 and all(0 <= s < 100_000 for s in seeds)
    with pytest.raises(ValueError):
        draw_seeds(np.random.default_rng(0), 100_001)


class TestGridSearch:
    def test_degenerate_grid(self, prepared):
        tr, te, scores = prepared
        r = grid_search(tr, te, scores, (1.0,), 3, FAST)
        assert len(r.mode("NB")) == len(r.mode("Random")) == 1
        assert all(rec.delta == 0.0 for rec in r.records)

    def test_full_grid_size(self, prepared):
        tr, te, scores = prepared
        r = grid_search(tr, te, scores, n_seeds=1, cfg=FAST.replace(epochs=1))
        assert len(r.mode("NB")) == len(r.mode("Random")) == 125
        assert len(r.seeds) == 1
        deltas = [rec.delta for rec in r.records]
        assert deltas == sorted(deltas, reverse=True)
        for rec in r.records:
            assert rec.delta == pytest.approx(rec.mean - r.baseline_mean, abs=1e-15)

    def test_deterministic_and_jobs_independent(self, prepared, tmp_path):
        tr, te, scores = prepared
        grid = (0.25, 1.0)
        a = grid_search(tr, te, scores, grid, 2, FAST, master_seed=4)
        b = grid_search(tr, te, scores, grid, 2, FAST, master_seed=4, jobs=2)
        a.write(tmp_path)
        first = (tmp_path / "grid_search.json").read_bytes()
        b.write(tmp_path)
        assert (tmp_path / "grid_search.json").read_bytes() == first

    def test_cache_consistency(self, prepared):
        tr, te, scores = prepared
        r = grid_search(tr, te, scores, (0.6, 1.0), 3, FAST, master_seed=2)
        standalone = tuple(train(tr, np.ones(tr.n), FAST.replace(seed=s), eval_data=te).accuracy
                           for s in r.seeds)
        assert r.baseline_accuracies == standalone
        uniform = [rec for rec in r.records if rec.weights == (0.6, 0.6, 0.6)]
        assert uniform[0].accuracies == uniform[1].accuracies

    def test_nb_triple_uses_split(self, prepared):
        tr, te, scores = prepared
        r = grid_search(tr, te, scores, (0.25, 2.0), 1, FAST)
        assert sum(r.group_sizes) == tr.n

    def test_scores_must_match(self, prepared):
        tr, te, scores = prepared
        with pytest.raises(DataError):
            grid_search(tr, te, scores[:-1], (1.0,), 1, FAST)

    def test_report_files(self, prepared, tmp_path):
        tr, te, scores = prepared
        grid_search(tr, te, scores, (1.0, 2.0), 1, FAST).write(tmp_path)
        doc = json.loads((tmp_path / "grid_search.json").read_text())
        assert len(doc["records"]) == 16
        lines = (tmp_path / "grid_search.csv").read_text().splitlines()
        assert lines[0] == "mode,w_g0,w_g1,w_g2,mean_accuracy,delta_vs_baseline" and len(lines) == 17


class TestPaired:
    def test_identical_arms(self, prepared):
        tr, te, _ = prepared
        r = paired_evaluation(tr, te, 4, FAST, weights=np.ones(tr.n), n_boot=200)
        assert r.baseline == r.weighted
        assert r.mean_improvement == 0.0 and r.variance_ratio == 1.0

    def test_reproducible(self, prepared):
        tr, te, scores = prepared
        a = paired_evaluation(tr, te, 2, FAST, scores=scores, master_seed=9, n_boot=500)
        b = paired_evaluation(tr, te, 2, FAST, scores=scores, master_seed=9, n_boot=500, jobs=2)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        assert len(set(a.seeds)) == 2

    def test_validation(self, prepared):
        tr, te, scores = prepared
        with pytest.raises(ValueError):
            paired_evaluation(tr, te, 1, FAST, scores=scores)
        with pytest.raises(ValueError):
            paired_evaluation(tr, te, 100_001, FAST, scores=scores)
        with pytest.raises(ValueError):
            paired_evaluation(tr, te, 2, FAST)

    def test_statistics(self):
        from nbweight.experiments import PairedRunReport
        base, wtd = (0.80, 0.82, 0.84, 0.86), (0.82, 0.83, 0.83, 0.84)
        r = PairedRunReport((1, 2, 3, 4), base, wtd, paired_bootstrap(wtd, base, 1000, np.random.default_rng(0)))
        assert r.baseline_var == pytest.approx(np.var(base), rel=1e-12)
        assert r.mean_improvement == pytest.approx(0.0, abs=1e-12)
        assert r.variance_ratio == pytest.approx(0.0005 / 0.005 * 1.0, rel=1e-9)
        assert r.histogram() == [(80, 1, 0), (81, 0, 0), (82, 1, 1), (83, 0, 2), (84, 1, 1), (85, 0, 0),
                                 (86, 1, 0)]
        lo, hi = r.variance_ratio_interval()
        assert lo <= r.variance_ratio_upper() <= hi

    def test_percent_bin(self):
        assert percent_bin(0.8341) == 83
        assert percent_bin(0.83) == 83  # 0.83 * 100 is 82.99999999999999 in binary
        assert percent_bin(1.0) == 100

    def test_report_files(self, prepared, tmp_path):
        tr, te, scores = prepared
        paired_evaluation(tr, te, 3, FAST, scores=scores, n_boot=100).write(tmp_path)
        assert (tmp_path / "histogram.csv").read_text().startswith("accuracy_percent,baseline_models,weighted_models\n")
        assert len((tmp_path / "paired_runs.csv").read_text().splitlines()) == 4


class TestDecompose:
    def test_r2_hand_algebra(self):
        p, q = np.array([0.9, 0.1]), np.array([0.4, 0.6])
        y = np.array([1.0, 0.0])
        gbar, bias, var, mse, _, _ = decompose(np.stack([p, q])[:, None, :], y[None, :])
        np.testing.assert_allclose(gbar[0], (p + q) / 2)
        assert var == pytest.approx(np.sum((p - q) ** 2) / 4, rel=1e-15)
        assert bias == pytest.approx(np.sum(((p + q) / 2 - y) ** 2), rel=1e-15)
        assert mse == pytest.approx((np.sum((p - y) ** 2) + np.sum((q - y) ** 2)) / 2, rel=1e-15)
        assert abs(mse - bias - var) <= 1e-15

    def test_perfect_ensemble(self):
        y = np.eye(3)[[0, 2, 1]]
        _, bias, var, mse, _, _ = decompose(np.stack([y] * 4), y)
        assert bias == var == mse == 0.0

    def test_identity_random(self):
        rng = np.random.default_rng(0)
        G = rng.dirichlet(np.ones(4), size=(30, 50))
        Y = np.eye(4)[rng.integers(0, 4, 50)]
        _, bias, var, mse, _, _ = decompose(G, Y)
        assert abs(mse - (bias + var)) / mse < 1e-12


class TestBiasVariance:
    def test_degenerate_ensemble(self):
        # zero epochs with a shared training seed gives identical models
        dom = preset("two-gauss-overlap")
        rep = bias_variance(dom, FAST.replace(epochs=0), 3, 50, 20, shared_init=True)
        assert rep.variance == 0.0
        assert rep.identity_gap() < 1e-9

    def test_identity_and_determinism(self):
        dom = preset("two-gauss-overlap")
        a = bias_variance(dom, FAST, 4, 80, 30, master_seed=3)
        b = bias_variance(dom, FAST, 4, 80, 30, master_seed=3, jobs=2)
        assert a.identity_gap() < 1e-9
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        assert a.mean_prediction.shape == (30, 2)

    def test_r_validation(self):
        with pytest.raises(ValueError):
            bias_variance(preset("two-gauss-overlap"), FAST, 1, 50, 10)

    def test_explicit_points(self):
        rep = bias_variance(preset("two-gauss-overlap"), FAST, 2, 60, [[0.5, 0.0], [-2.0, 1.0]])
        assert rep.mean_prediction.shape == (2, 2) and rep.identity_gap() < 1e-9

    def test_compare_smoke(self):
        cmp_ = compare_bias_variance(preset("two-gauss-overlap"), FAST, 2, 60, 20)
        assert cmp_.baseline.identity_gap() < 1e-9 and cmp_.weighted.identity_gap() < 1e-9
        assert cmp_.baseline.seeds == cmp_.weighted.seeds
        doc = cmp_.to_dict()
        assert {"delta_bias", "delta_variance", "delta_bias_se", "delta_variance_se"} <= set(doc)

    NOISE_FREE = SyntheticDomain.build([[Component((-6.0, 0.0), 0.5)], [Component((6.0, 0.0), 0.5)]],
                                       noise=NoiseMode("boundary-flip", 0.0, 1.0))

    def test_noise_free_arms_agree(self):
        # no uncertain points, so every score is 0 and every weight is g(0);
        # under the 1/N divisor that constant only rescales the step size
        cmp_ = compare_bias_variance(self.NOISE_FREE, TrainConfig(epochs=30, hidden=8), 20, 100, 50, master_seed=1)
        assert abs(cmp_.delta_variance) <= 3 * cmp_.delta_variance_se()
        assert abs(cmp_.delta_bias) <= 3 * cmp_.delta_bias_se()

    def test_noise_free_renormalized_identical(self):
        cfg = TrainConfig(epochs=5, hidden=8, renormalize=True)
        cmp_ = compare_bias_variance(self.NOISE_FREE, cfg, 5, 100, 20, master_seed=1)
        assert cmp_.delta_variance == 0.0 and cmp_.delta_bias == 0.0

    def test_score_weighting(self):
        g = generate(preset("two-gauss-overlap"), 100, 2)
        w = ScoreWeighting()(g.dataset)
        assert w.shape == (100,) and np.all((w > 0.25) & (w < 1.5))
        wm = ScoreWeighting(median_beta=True)(g.dataset)
        assert not np.array_equal(w, wm)
