"""Experiment protocols: group-weight grid search, paired-seed evaluation and
Monte Carlo bias-variance decomposition over synthetic domains.

Every protocol takes a master seed; all run seeds, the random control split
and bootstrap resamples derive from it, so a repeated call returns an
identical report regardless of ``jobs``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset import Dataset, SyntheticDomain, generate
from .errors import DataError
from .knn import DistanceMetric
from .scoring import UncertaintyScore, score_dataset
from .trainer import TrainConfig, train
from .weighting import (DEFAULT_WEIGHT_GRID, WeightMapConfig, default_beta, group_weights,
                        logistic_weight, random_groups, split_groups)

SEED_SPACE = 100_000


def _map(fn, tasks, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _streams(master_seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(master_seed).spawn(count)]


def draw_seeds(rng: np.random.Generator, count: int) -> list[int]:
    """``count`` distinct integers from ``[0, 100000)``."""
    if count > SEED_SPACE:
        raise ValueError(f"cannot draw {count} distinct seeds from [0, {SEED_SPACE})")
    return [int(s) for s in rng.choice(SEED_SPACE, size=count, replace=False)]


def split_train_test(data: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded split stratified by class; row order within each part is preserved."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test = np.zeros(data.n, dtype=bool)
    for c in range(data.class_count):
        rows = np.flatnonzero(data.labels == c)
        take = int(round(test_fraction * rows.size))
        test[rng.permutation(rows)[:take]] = True
    if test.all() or not test.any():
        raise DataError("split leaves an empty train or test set")
    return data.subset(~test), data.subset(test)


def prepare(data: Dataset, k: int = 5, metric=DistanceMetric.EUCLIDEAN,
            test_fraction: float = 0.2, seed: int = 0):
    """Split, then score the training part with every test sample excluded."""
    train_set, test_set = split_train_test(data, test_fraction, seed)
    scores = score_dataset(data, k, metric, exclude_ids=test_set.ids)
    return train_set, test_set, scores


def _score_map(scores) -> dict[int, float]:
    if isinstance(scores, Mapping):
        return {int(i): float(s) for i, s in scores.items()}
    return {int(s.sample_id): float(s.score) for s in scores}


def _accuracy(train_set: Dataset, test_set: Dataset, weights, cfg: TrainConfig) -> float:
    return train(train_set, weights, cfg, eval_data=test_set).accuracy


# --------------------------------------------------------------------------
# Grid search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ComboRecord:
    mode: str  # "NB" or "Random"
    weights: tuple[float, float, float]
    accuracies: tuple[float, ...]
    mean: float
    delta: float


@dataclass(frozen=True)
class GridSearchReport:
    records: tuple[ComboRecord, ...]
    baseline_accuracies: tuple[float, ...]
    baseline_mean: float
    seeds: tuple[int, ...]
    group_sizes: tuple[int, int, int]
    weight_grid: tuple[float, ...]

    def mode(self, name: str) -> list[ComboRecord]:
        return [r for r in self.records if r.mode == name]

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "weight_grid": list(self.weight_grid),
            "group_sizes": list(self.group_sizes),
            "baseline_mean": self.baseline_mean,
            "baseline_accuracies": list(self.baseline_accuracies),
            "records": [{"mode": r.mode, "weights": list(r.weights), "mean": r.mean,
                         "delta": r.delta, "accuracies": list(r.accuracies)} for r in self.records],
        }

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        (out_dir / "grid_search.json").write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        with (out_dir / "grid_search.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "w_g0", "w_g1", "w_g2", "mean_accuracy", "delta_vs_baseline"])
            for r in self.records:
                w.writerow([r.mode, *r.weights, f"{r.mean:.6f}", f"{r.delta:+.6f}"])


def grid_search(train_set: Dataset, test_set: Dataset, scores, weight_grid: Sequence[float] = DEFAULT_WEIGHT_GRID,
                n_seeds: int = 10, cfg: TrainConfig = TrainConfig(), master_seed: int = 0,
                jobs: int = 1) -> GridSearchReport:
    """Evaluate every (G0, G1, G2) weight triple for the score-based split and
    a size-matched random split, each over one shared list of seeds.

    Triples with all three weights equal give the same weighting under both
    splits and are trained once; the all-1.0 triple is the baseline.
    """
    grid = tuple(float(x) for x in weight_grid)
    if not grid:
        raise ValueError("weight grid must not be empty")
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    seed_rng, split_rng = _streams(master_seed, 2)
    seeds = draw_seeds(seed_rng, n_seeds)
    smap = _score_map(scores)
    ids = [int(i) for i in train_set.ids]
    if set(smap) != set(ids):
        raise DataError("scores must cover exactly the training ids")
    nb = split_groups(smap)
    rnd = random_groups(nb.sizes, ids, int(split_rng.integers(2**63)))
    splits = {"NB": nb, "Random": rnd}

    triples = list(itertools.product(grid, repeat=3))
    jobs_by_key: dict[tuple, np.ndarray] = {}
    combo_key = {}
    for mode in ("NB", "Random"):
        for t in triples:
            key = ("uniform", t[0]) if t[0] == t[1] == t[2] else (mode, t)
            combo_key[mode, t] = key
            if key not in jobs_by_key:
                wmap = group_weights(splits[mode], t, ids, grid=None)
                jobs_by_key[key] = np.array([wmap[i] for i in ids])
    base_key = ("uniform", 1.0)
    if base_key not in jobs_by_key:
        jobs_by_key[base_key] = np.ones(len(ids))

    keys = list(jobs_by_key)
    tasks = [(train_set, test_set, jobs_by_key[key], cfg.replace(seed=s)) for key in keys for s in seeds]
    accs = _map(_accuracy, tasks, jobs)
    by_key = {key: tuple(accs[i * n_seeds:(i + 1) * n_seeds]) for i, key in enumerate(keys)}

    baseline = by_key[base_key]
    base_mean = float(np.mean(baseline))
    records = []
    for mode in ("NB", "Random"):
        for t in triples:
            a = by_key[combo_key[mode, t]]
            m = float(np.mean(a))
            records.append(ComboRecord(mode, t, a, m, m - base_mean))
    order = {"NB": 0, "Random": 1}
    records.sort(key=lambda r: (-r.delta, order[r.mode], r.weights))
    return GridSearchReport(tuple(records), baseline, base_mean, tuple(seeds), nb.sizes, grid)


# --------------------------------------------------------------------------
# Paired-seed evaluation
# --------------------------------------------------------------------------


def _population_var(a) -> float:
    return float(np.var(np.asarray(a, dtype=np.float64)))


def _variance_ratio(weighted, baseline) -> float:
    vb, vw = _population_var(baseline), _population_var(weighted)
    if vb == 0:
        return 1.0 if vw == 0 else math.inf
    return vw / vb


def percent_bin(acc: float) -> int:
    """Whole-percentage-point histogram bin of an accuracy fraction."""
    return int(math.floor(round(acc * 100.0, 9)))


@dataclass(frozen=True)
class PairedRunReport:
    seeds: tuple[int, ...]
    baseline: tuple[float, ...]
    weighted: tuple[float, ...]
    bootstrap_ratios: np.ndarray = field(repr=False, compare=False)

    @property
    def n_pairs(self) -> int:
        return len(self.seeds)

    @property
    def baseline_mean(self) -> float:
        return float(np.mean(self.baseline))

    @property
    def weighted_mean(self) -> float:
        return float(np.mean(self.weighted))

    @property
    def mean_improvement(self) -> float:
        return self.weighted_mean - self.baseline_mean

    @property
    def baseline_var(self) -> float:
        return _population_var(self.baseline)

    @property
    def weighted_var(self) -> float:
        return _population_var(self.weighted)

    @property
    def variance_ratio(self) -> float:
        return _variance_ratio(self.weighted, self.baseline)

    def variance_ratio_interval(self, level: float = 0.95) -> tuple[float, float]:
        lo, hi = np.quantile(self.bootstrap_ratios, [(1 - level) / 2, (1 + level) / 2])
        return float(lo), float(hi)

    def variance_ratio_upper(self, level: float = 0.95) -> float:
        """One-sided upper bootstrap bound on weighted / baseline variance."""
        return float(np.quantile(self.bootstrap_ratios, level))

    def histogram(self) -> list[tuple[int, int, int]]:
        """Rows ``(percent, baseline count, weighted count)`` over 1-point bins."""
        b = [percent_bin(a) for a in self.baseline]
        w = [percent_bin(a) for a in self.weighted]
        lo, hi = min(b + w), max(b + w)
        return [(p, b.count(p), w.count(p)) for p in range(lo, hi + 1)]

    def to_dict(self) -> dict:
        lo, hi = self.variance_ratio_interval()
        return {
            "n_pairs": self.n_pairs,
            "seeds": list(self.seeds),
            "baseline": {"mean": self.baseline_mean, "variance": self.baseline_var,
                         "std": math.sqrt(self.baseline_var), "accuracies": list(self.baseline)},
            "weighted": {"mean": self.weighted_mean, "variance": self.weighted_var,
                         "std": math.sqrt(self.weighted_var), "accuracies": list(self.weighted)},
            "mean_improvement": self.mean_improvement,
            "variance_ratio": self.variance_ratio,
            "variance_ratio_ci95": [lo, hi],
            "variance_ratio_upper95": self.variance_ratio_upper(),
            "histogram": [{"percent": p, "baseline": nb, "weighted": nw} for p, nb, nw in self.histogram()],
        }

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        (out_dir / "paired_eval.json").write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        with (out_dir / "paired_runs.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "baseline_accuracy", "weighted_accuracy"])
            for row in zip(self.seeds, self.baseline, self.weighted):
                w.writerow([row[0], repr(row[1]), repr(row[2])])
        with (out_dir / "histogram.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["accuracy_percent", "baseline_models", "weighted_models"])
            w.writerows(self.histogram())


def paired_bootstrap(weighted, baseline, n_boot: int, rng: np.random.Generator) -> np.ndarray:
    """Variance ratios over ``n_boot`` paired resamples of the seeds."""
    w = np.asarray(weighted, dtype=np.float64)
    b = np.asarray(baseline, dtype=np.float64)
    idx = rng.integers(0, w.size, size=(n_boot, w.size))
    vw, vb = w[idx].var(axis=1), b[idx].var(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(vb > 0, vw / np.where(vb > 0, vb, 1.0), np.where(vw > 0, np.inf, 1.0))
    return ratio


def paired_evaluation(train_set: Dataset, test_set: Dataset, n_pairs: int, cfg: TrainConfig = TrainConfig(), *,
                      scores=None, weight_map: WeightMapConfig | None = None, weights=None,
                      master_seed: int = 0, n_boot: int = 10_000, jobs: int = 1) -> PairedRunReport:
    """Train a baseline (all weights 1.0) and a weighted model for each of
    ``n_pairs`` distinct seeds; both arms of a pair share initialization and
    batch order.

    The weighted arm uses explicit ``weights`` if given, otherwise the logistic
    map of ``scores`` under ``weight_map`` (default parameters if omitted).
    """
    if n_pairs < 2:
        raise ValueError("n_pairs must be at least 2")
    if weights is None:
        if scores is None:
            raise ValueError("either scores or weights is required")
        smap = _score_map(scores)
        try:
            s = np.array([smap[int(i)] for i in train_set.ids])
        except KeyError as exc:
            raise DataError(f"no score for training id {exc.args[0]}") from None
        weights = logistic_weight(s, weight_map or WeightMapConfig())
    elif isinstance(weights, Mapping):
        weights = np.array([weights[int(i)] for i in train_set.ids], dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    seed_rng, boot_rng = _streams(master_seed, 2)
    seeds = draw_seeds(seed_rng, n_pairs)
    ones = np.ones(train_set.n)
    tasks = [(train_set, test_set, w, cfg.replace(seed=s)) for s in seeds for w in (ones, weights)]
    accs = _map(_accuracy, tasks, jobs)
    base, wtd = tuple(accs[0::2]), tuple(accs[1::2])
    return PairedRunReport(tuple(seeds), base, wtd, paired_bootstrap(wtd, base, n_boot, boot_rng))


# --------------------------------------------------------------------------
# Bias-variance decomposition
# --------------------------------------------------------------------------


def decompose(predictions, targets):
    """Empirical squared-error decomposition over an ensemble of predictions.

    ``predictions`` has shape (R, m, C), ``targets`` (m, C). Returns
    ``(mean_prediction, bias, variance, mse, per_draw_variance, per_draw_mse)``
    where squared errors are summed over classes and averaged over test points.
    """
    G = np.asarray(predictions, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    gbar = G[0] + (G - G[0]).mean(axis=0)  # exact when all draws agree
    bias = float(((gbar - Y) ** 2).sum(axis=1).mean())
    per_var = ((G - gbar) ** 2).sum(axis=2).mean(axis=1)
    per_mse = ((G - Y) ** 2).sum(axis=2).mean(axis=1)
    return gbar, bias, float(per_var.mean()), float(per_mse.mean()), per_var, per_mse


@dataclass(frozen=True, eq=False)
class BiasVarianceReport:
    draws: int
    mean_prediction: np.ndarray
    bias: float
    variance: float
    mse: float
    per_draw_variance: np.ndarray
    per_draw_mse: np.ndarray
    seeds: tuple[tuple[int, int], ...]

    def identity_gap(self) -> float:
        """Relative gap ``|mse - (bias + variance)| / mse``."""
        gap = abs(self.mse - (self.bias + self.variance))
        return gap / self.mse if self.mse else gap

    def to_dict(self) -> dict:
        return {"draws": self.draws, "bias": self.bias, "variance": self.variance, "mse": self.mse,
                "identity_gap": self.identity_gap(),
                "per_draw_variance": self.per_draw_variance.tolist(),
                "per_draw_mse": self.per_draw_mse.tolist(),
                "seeds": [list(s) for s in self.seeds]}


def ground_truth_targets(domain: SyntheticDomain, points) -> np.ndarray:
    """One-hot rows of the arg-max class of the posterior at each point."""
    post = domain.posterior(points)
    return np.eye(domain.class_count)[post.argmax(axis=1)]


def _bv_draw(domain, n_train, data_seed, cfg, test_points, weighting):
    data = generate(domain, n_train, data_seed).dataset
    w = np.ones(data.n) if weighting is None else weighting(data)
    return train(data, w, cfg).predict_proba(test_points)


def fixed_test_points(domain: SyntheticDomain, test_points, master_seed: int) -> np.ndarray:
    """A fixed point set; an integer draws that many points from the domain."""
    if isinstance(test_points, (int, np.integer)):
        seed = np.random.SeedSequence(master_seed).spawn(2)[1]
        return generate(domain, int(test_points), seed.generate_state(1)[0]).dataset.features
    return np.atleast_2d(np.asarray(test_points, dtype=np.float64))


def bias_variance(domain: SyntheticDomain, cfg: TrainConfig, R: int, n_train: int, test_points,
                  master_seed: int = 0, weighting: Callable[[Dataset], np.ndarray] | None = None,
                  jobs: int = 1, shared_init: bool = False) -> BiasVarianceReport:
    """Train ``R`` models on independent draws from ``domain`` and decompose
    their squared error against one-hot ground-truth targets at ``test_points``.

    ``weighting`` maps each drawn dataset to its sample weights (all 1.0 when
    omitted). Draw and training seeds depend only on ``master_seed``; with
    ``shared_init`` every draw trains from ``cfg.seed`` instead.
    """
    if R < 2:
        raise ValueError("need at least 2 draws")
    pts = fixed_test_points(domain, test_points, master_seed)
    targets = ground_truth_targets(domain, pts)
    rng = np.random.default_rng(np.random.SeedSequence(master_seed).spawn(2)[0])
    pairs = [(int(a), int(b)) for a, b in rng.integers(0, 2**63, size=(R, 2))]
    if shared_init:
        pairs = [(a, cfg.seed) for a, _ in pairs]
    tasks = [(domain, n_train, ds, cfg.replace(seed=ts), pts, weighting) for ds, ts in pairs]
    preds = np.stack(_map(_bv_draw, tasks, jobs))
    gbar, bias, var, mse, per_var, per_mse = decompose(preds, targets)
    return BiasVarianceReport(R, gbar, bias, var, mse, per_var, per_mse, tuple(pairs))


@dataclass(frozen=True)
class ScoreWeighting:
    """Per-draw weighting: score the drawn data, then apply the logistic map."""

    k: int = 5
    metric: str = "euclidean"
    weight_map: WeightMapConfig = WeightMapConfig()
    median_beta: bool = False

    def __call__(self, data: Dataset) -> np.ndarray:
        s = np.array([u.score for u in score_dataset(data, self.k, self.metric)])
        cfg = self.weight_map
        if self.median_beta and np.any(s > 0):
            cfg = WeightMapConfig(cfg.alpha, default_beta(s), cfg.gamma, cfg.eta)
        return logistic_weight(s, cfg)


@dataclass(frozen=True)
class BiasVarianceComparison:
    baseline: BiasVarianceReport
    weighted: BiasVarianceReport

    def _paired_se(self, a, b) -> float:
        d = np.asarray(a) - np.asarray(b)
        return float(d.std(ddof=1) / math.sqrt(d.size))

    @property
    def delta_variance(self) -> float:
        return self.weighted.variance - self.baseline.variance

    @property
    def delta_bias(self) -> float:
        return self.weighted.bias - self.baseline.bias

    def delta_variance_se(self) -> float:
        return self._paired_se(self.weighted.per_draw_variance, self.baseline.per_draw_variance)

    def delta_bias_se(self) -> float:
        """Approximate; per-draw bias contribution taken as per-draw mse minus per-draw variance."""
        w = self.weighted.per_draw_mse - self.weighted.per_draw_variance
        b = self.baseline.per_draw_mse - self.baseline.per_draw_variance
        return self._paired_se(w, b)

    def to_dict(self) -> dict:
        return {"baseline": self.baseline.to_dict(), "weighted": self.weighted.to_dict(),
                "delta_bias": self.delta_bias, "delta_bias_se": self.delta_bias_se(),
                "delta_variance": self.delta_variance, "delta_variance_se": self.delta_variance_se()}


def compare_bias_variance(domain: SyntheticDomain, cfg: TrainConfig, R: int, n_train: int, test_points,
                          weighting: ScoreWeighting = ScoreWeighting(), master_seed: int = 0,
                          jobs: int = 1) -> BiasVarianceComparison:
    """Baseline and score-weighted decompositions on the same draws and seeds."""
    base = bias_variance(domain, cfg, R, n_train, test_points, master_seed, None, jobs)
    wtd = bias_variance(domain, cfg, R, n_train, test_points, master_seed, weighting, jobs)
    return BiasVarianceComparison(base, wtd)
