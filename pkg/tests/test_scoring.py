import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbweight.dataset import Dataset, preset, generate
from nbweight.errors import DataError
from nbweight.knn import Neighborhood
from nbweight.scoring import (neighborhood_score, read_scores_csv, score_arrays, score_dataset,
                              score_values, write_scores_csv)
from oracles import score_oracle


def nb_of(distances):
    k = len(distances)
    return Neighborhood(0, tuple(range(k)), tuple(distances), tuple(distances))


def score(labels, distances, C):
    return neighborhood_score(nb_of(distances), labels, C).score


@st.composite
def neighborhoods(draw, min_k=2, max_k=12, max_C=5):
    C = draw(st.integers(2, max_C))
    k = draw(st.integers(min_k, max_k))
    labels = draw(st.lists(st.integers(0, C - 1), min_size=k, max_size=k))
    raw = draw(st.lists(st.floats(1.0, 50.0), min_size=k - 1, max_size=k - 1))
    m = min(raw)
    return labels, [0.0] + [r / m for r in raw], C


class TestReferenceExamples:
    def test_homogeneous_is_zero(self):
        s = neighborhood_score(nb_of([0, 1, 1.5, 2, 3]), [2, 2, 2, 2, 2], 3)
        assert s.score == 0.0
        assert s.zero_denominator

    @pytest.mark.parametrize("C", [2, 3, 5])
    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_balanced_equal_distance_is_one(self, C, m):
        labels = sorted(list(range(C)) * m)
        labels.remove(0)
        labels = [0] + labels
        assert score(labels, [0.0] + [1.0] * (C * m - 1), C) == pytest.approx(1.0, abs=1e-12)

    def test_surrounded_center(self):
        # 1 blue center, 4 red at unit distance; 1.2865148822056232 from mpmath
        s = neighborhood_score(nb_of([0, 1, 1, 1, 1]), [0, 1, 1, 1, 1], 2)
        assert s.score == pytest.approx(1.2865148822056232, rel=1e-14)
        assert s.self_only_class and not s.zero_denominator

    def test_matches_hand_formula(self):
        e = lambda p: -p * math.log(p)
        assert score([0, 1, 1, 1, 1], [0, 1, 1, 1, 1], 2) == pytest.approx(
            2 * e(0.2) / (e(0.2) + e(0.8)), rel=1e-14)


class TestRequirements:
    @pytest.mark.parametrize("k", range(4, 10))
    def test_surrounded_exceeds_one(self, k):
        assert score([0] + [1] * (k - 1), [0.0] + [1.0] * (k - 1), 2) > 1.0

    @pytest.mark.parametrize("k", range(4, 10))
    def test_mixed_minority_above_homogeneous(self, k):
        for m in range(1, (k + 1) // 2):
            if m >= k / 2:
                continue
            mixed = score([0] * m + [1] * (k - m), [0.0] + [1.0] * (k - 1), 2)
            assert mixed > score([0] * k, [0.0] + [1.0] * (k - 1), 2) == 0.0

    @given(neighborhoods(min_k=3), st.floats(1.01, 10.0))
    @settings(max_examples=300, deadline=None)
    def test_own_class_distance_monotone(self, nb, t):
        labels, dist, C = nb
        own = [i for i in range(1, len(labels)) if labels[i] == labels[0]]
        if not own or all(l == labels[0] for l in labels):
            return
        scaled = [d * t if i in own else d for i, d in enumerate(dist)]
        assert score(labels, scaled, C) < score(labels, dist, C)

    @given(neighborhoods(min_k=3), st.floats(1.01, 10.0))
    @settings(max_examples=300, deadline=None)
    def test_other_class_distance_monotone(self, nb, t):
        labels, dist, C = nb
        other = [i for i in range(1, len(labels)) if labels[i] != labels[0]]
        if not other:
            return
        scaled = [d * t if i in other else d for i, d in enumerate(dist)]
        assert score(labels, scaled, C) > score(labels, dist, C)

    @given(neighborhoods(), st.floats(0.1, 100.0))
    @settings(max_examples=200, deadline=None)
    def test_uniform_scaling_cancels(self, nb, t):
        labels, dist, C = nb
        if labels.count(labels[0]) == 1:
            return  # the self-only unit distance is fixed and does not scale
        assert score(labels, [d * t for d in dist], C) == pytest.approx(score(labels, dist, C), rel=1e-12)


class TestProperties:
    @given(neighborhoods())
    @settings(max_examples=300, deadline=None)
    def test_bounded_and_finite(self, nb):
        labels, dist, C = nb
        b = score(labels, dist, C)
        assert math.isfinite(b) and 0.0 <= b <= C + 1e-12

    @given(neighborhoods())
    @settings(max_examples=300, deadline=None)
    def test_log_base_invariance(self, nb):
        labels, dist, C = nb
        n = nb_of(dist)
        assert neighborhood_score(n, labels, C, base=2).score == pytest.approx(
            neighborhood_score(n, labels, C).score, abs=1e-12)

    @given(neighborhoods(min_k=3), st.randoms(use_true_random=False))
    @settings(max_examples=200, deadline=None)
    def test_member_permutation_invariance(self, nb, rnd):
        labels, dist, C = nb
        rest = list(zip(labels[1:], dist[1:]))
        rnd.shuffle(rest)
        perm_labels = [labels[0]] + [l for l, _ in rest]
        perm_dist = [0.0] + [d for _, d in rest]
        assert score(perm_labels, perm_dist, C) == pytest.approx(score(labels, dist, C), rel=1e-13, abs=1e-15)

    @given(neighborhoods())
    @settings(max_examples=500, deadline=None)
    def test_oracle_agreement(self, nb):
        labels, dist, C = nb
        expected, zero_den, self_only = score_oracle(labels, dist, C)
        got = neighborhood_score(nb_of(dist), labels, C)
        assert got.score == pytest.approx(expected, rel=1e-12, abs=1e-12)
        assert got.zero_denominator == zero_den
        assert got.self_only_class == self_only

    def test_duplicate_points_stay_finite(self):
        # a different-class duplicate of the center plus far points
        labels = [0, 1, 0, 1]
        dist = [0.0, 0.0, 3e12, 5e12]
        b = score(labels, dist, 2)
        assert math.isfinite(b)
        assert b == pytest.approx(score_oracle(labels, dist, 2)[0], rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            score([0, 3], [0.0, 1.0], 2)

    def test_vectorized_matches_single(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, size=(200, 6))
        dist = np.hstack([np.zeros((200, 1)), rng.uniform(1, 5, size=(200, 5))])
        s, _, _ = score_arrays(labels, dist, 3)
        for i in range(200):
            assert s[i] == pytest.approx(score_oracle(labels[i].tolist(), dist[i].tolist(), 3)[0], rel=1e-12)


class TestScoreDataset:
    def test_single_class_all_zero(self):
        X = np.random.default_rng(1).normal(size=(30, 2))
        scores = score_dataset(Dataset(X, np.zeros(30, dtype=int), 2), 5)
        assert all(s.score == 0.0 and s.zero_denominator for s in scores)

    def test_exclusion(self):
        g = generate(preset("two-gauss-overlap"), 200, 3)
        full = score_dataset(g.dataset, 5)
        excluded = set(range(0, 200, 4))
        part = score_dataset(g.dataset, 5, exclude_ids=excluded)
        assert len(part) == 150
        assert not excluded & {s.sample_id for s in part}
        # equivalent to scoring the retained rows alone
        keep = np.array([i not in excluded for i in range(200)])
        alone = score_dataset(g.dataset.subset(keep), 5)
        assert [s.score for s in part] == [s.score for s in alone]
        assert [s.score for s in part] != [s.score for s in full if s.sample_id not in excluded]

    def test_exclusion_too_large(self):
        data = Dataset(np.arange(6.0), [0, 1, 0, 1, 0, 1], 2)
        with pytest.raises(DataError):
            score_dataset(data, 5, exclude_ids=[0, 1])
        with pytest.raises(DataError):
            score_dataset(data, 2, exclude_ids=[99])

    def test_cosine_k5(self):
        g = generate(preset("five-class-ring"), 300, 4)
        scores = score_dataset(g.dataset, 5, "cosine")
        assert len(scores) == 300
        v = score_values(scores)
        assert np.all((v >= 0) & (v <= 5))

    def test_deterministic(self):
        g = generate(preset("five-class-ring"), 300, 4)
        assert score_dataset(g.dataset, 5) == score_dataset(g.dataset, 5)

    def test_scores_separate_uncertain_points(self):
        g = generate(preset("five-class-ring"), 3000, 8)
        v = score_values(score_dataset(g.dataset, 5))
        assert v[g.uncertain].mean() > 2 * v[~g.uncertain].mean()

    def test_csv_round_trip(self, tmp_path):
        g = generate(preset("two-gauss-overlap"), 100, 3)
        scores = score_dataset(g.dataset, 5)
        write_scores_csv(scores, g.dataset, tmp_path / "s.csv")
        back = read_scores_csv(tmp_path / "s.csv")
        assert [(s.sample_id, s.score, s.zero_denominator, s.self_only_class) for s in back] == \
               [(s.sample_id, s.score, s.zero_denominator, s.self_only_class) for s in scores]
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "sample_id,label,score,zero_denominator,self_only_class"
