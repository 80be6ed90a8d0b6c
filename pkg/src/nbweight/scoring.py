"""Neighborhood label-uncertainty score.

For a center of class ``y`` in a k-neighborhood with ``k_j`` members of class
``j`` (center counted in its own class), the score is::

    b = C * T_y / sum_j T_j,    T_j = -(k_j/k) log(k_j/k) / mean_j

where ``mean_j`` is the mean normalized distance from the center to its
non-self class-``j`` members, and ``b = 0`` when every member shares the
center's class. A class with no non-self members (the center alone in its
class) or only coincident duplicates gets ``mean_j = 1``, the nearest-neighbor
distance unit. Since ``T_y`` is one of the non-negative terms of the
denominator, ``0 <= b <= C``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import DataError
from .knn import DistanceMetric, Neighborhood, knn_arrays


@dataclass(frozen=True)
class UncertaintyScore:
    sample_id: int
    score: float
    zero_denominator: bool = False
    self_only_class: bool = False
    degenerate: bool = False


def score_arrays(labels: np.ndarray, distances: np.ndarray, class_count: int,
                 log=np.log) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized score for many neighborhoods at once.

    ``labels`` and ``distances`` have shape (m, k) with the center in column
    0; ``distances`` are normalized. Returns ``(scores, zero_denominator,
    self_only_class)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    dist = np.asarray(distances, dtype=np.float64)
    m, k = labels.shape
    C = int(class_count)
    if C < 2:
        raise ValueError("class count must be at least 2")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")

    onehot = labels[:, :, None] == np.arange(C)
    counts = onehot.sum(axis=1).astype(np.float64)
    others = onehot[:, 1:, :]
    sums = (others * dist[:, 1:, None]).sum(axis=1)
    n_other = others.sum(axis=1)
    center = labels[:, 0]
    rows = np.arange(m)

    self_only = counts[rows, center] == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = np.where(sums > 0, sums / np.maximum(n_other, 1), 1.0)
        p = counts / k
        info = np.where(counts > 0, -p * log(np.where(counts > 0, p, 1.0)), 0.0)
    terms = info / mean
    zero_den = counts[rows, center] == k
    den = terms.sum(axis=1)
    num = C * terms[rows, center]
    scores = np.where(zero_den, 0.0, num / np.where(zero_den, 1.0, den))
    return scores, zero_den, self_only


def neighborhood_score(nb: Neighborhood, labels, class_count: int, base: float | None = None) -> UncertaintyScore:
    """Score of ``nb.center_id`` given the labels of ``nb.member_ids`` (aligned)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (nb.k,):
        raise ValueError("labels must align with neighborhood members")
    log = np.log if base is None else (lambda v: np.log(v) / math.log(base))
    s, z, so = score_arrays(labels[None, :], np.asarray(nb.normalized_distances)[None, :], class_count, log)
    return UncertaintyScore(nb.center_id, float(s[0]), bool(z[0]), bool(so[0]), nb.degenerate)


def score_dataset(dataset: Dataset, k: int = 5, metric=DistanceMetric.EUCLIDEAN,
                  exclude_ids=None) -> list[UncertaintyScore]:
    """Score every non-excluded sample; excluded samples never act as neighbors."""
    data = dataset
    if exclude_ids is not None and len(exclude_ids):
        excl = {int(i) for i in exclude_ids}
        unknown = excl - {int(i) for i in dataset.ids}
        if unknown:
            raise DataError(f"excluded ids not in dataset: {sorted(unknown)[:5]}")
        keep = np.array([int(i) not in excl for i in dataset.ids])
        if keep.sum() < k:
            raise DataError(f"exclusion leaves {int(keep.sum())} points, fewer than k={k}")
        data = dataset.subset(keep)
    members, _, normalized, degenerate = knn_arrays(data.features, data.ids, k, metric)
    scores, zero_den, self_only = score_arrays(data.labels[members], normalized, data.class_count)
    return [UncertaintyScore(int(i), float(s), bool(z), bool(o), bool(g))
            for i, s, z, o, g in zip(data.ids, scores, zero_den, self_only, degenerate)]


def score_values(scores) -> np.ndarray:
    return np.array([s.score for s in scores], dtype=np.float64)


def write_scores_csv(scores, dataset: Dataset, path) -> None:
    """Columns ``(sample_id, label, score, zero_denominator, self_only_class)``."""
    pos = dataset.positions(s.sample_id for s in scores)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "score", "zero_denominator", "self_only_class"])
        for s, p in zip(scores, pos):
            w.writerow([s.sample_id, dataset.label_name(dataset.labels[p]), repr(s.score),
                        int(s.zero_denominator), int(s.self_only_class)])


def read_scores_csv(path) -> list[UncertaintyScore]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"sample_id", "score"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected sample_id and score columns")
        for row in reader:
            try:
                s = float(row["score"])
                sid = int(row["sample_id"])
            except ValueError:
                raise DataError(f"{path}: malformed row {row}") from None
            if not math.isfinite(s) or s < 0:
                raise DataError(f"{path}: invalid score {row['score']!r}")
            out.append(UncertaintyScore(sid, s, row.get("zero_denominator") == "1",
                                        row.get("self_only_class") == "1"))
    return out
