"""Exact brute-force k-nearest-neighbor retrieval with nearest-neighbor distance normalization."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import Dataset
from .errors import DataError

DUPLICATE_EPS = 1e-12
_CHUNK = 1024


class DistanceMetric(enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "DistanceMetric":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown metric {value!r}; use 'euclidean' or 'cosine'") from None


@dataclass(frozen=True)
class Neighborhood:
    """A center point and its k-1 nearest neighbors, center first."""

    center_id: int
    member_ids: tuple[int, ...]
    raw_distances: tuple[float, ...]
    normalized_distances: tuple[float, ...]
    degenerate: bool = False

    @property
    def k(self) -> int:
        return len(self.member_ids)


def normalize_distances(raw) -> tuple[np.ndarray, bool]:
    """Scale so the nearest non-self neighbor sits at distance 1.

    ``raw[0]`` is the center's own (zero) entry and is left at 0. Returns the
    normalized vector and a flag that is set when the nearest non-self
    distance is 0 (duplicate points), in which case ``DUPLICATE_EPS`` is used
    as the divisor.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size < 2:
        raise ValueError("need the center entry plus at least one neighbor")
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise ValueError("distances must be finite and non-negative")
    nearest = raw[1:].min()
    degenerate = nearest == 0.0
    out = np.zeros_like(raw)
    out[1:] = raw[1:] / (DUPLICATE_EPS if degenerate else nearest)
    return out, bool(degenerate)


def _check_cosine(X: np.ndarray) -> None:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise DataError(f"zero-norm vector at row {bad} under cosine distance")


def distance_rows(X: np.ndarray, rows: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """Distances from ``X[rows]`` to every row of ``X``; negatives clipped to 0."""
    D = cdist(X[rows], X, metric=metric.value)
    np.maximum(D, 0.0, out=D)
    return D


def knn_arrays(X: np.ndarray, ids: np.ndarray, k: int, metric) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Array form of :func:`neighborhoods`.

    Returns ``(members, raw, normalized, degenerate)`` where ``members`` holds
    row positions, shape (n, k), with the center in column 0.
    """
    metric = DistanceMetric.parse(metric)
    X = np.asarray(X, dtype=np.float64)
    ids = np.asarray(ids)
    n = X.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"k must satisfy 2 <= k <= n (got k={k}, n={n})")
    if metric is DistanceMetric.COSINE:
        _check_cosine(X)

    members = np.empty((n, k), dtype=np.int64)
    raw = np.zeros((n, k))
    for start in range(0, n, _CHUNK):
        rows = np.arange(start, min(start + _CHUNK, n))
        D = distance_rows(X, rows, metric)
        D[np.arange(rows.size), rows] = -1.0  # center sorts first
        if k < n:
            kth = np.partition(D, k - 1, axis=1)[:, k - 1]
        for r, i in enumerate(rows):
            dist = D[r]
            cand = np.arange(n) if k == n else np.flatnonzero(dist <= kth[r])
            order = cand[np.lexsort((ids[cand], dist[cand]))][:k]
            members[i] = order
            raw[i, 1:] = dist[order[1:]]

    nearest = raw[:, 1:].min(axis=1)
    degenerate = nearest == 0.0
    divisor = np.where(degenerate, DUPLICATE_EPS, nearest)
    normalized = np.zeros_like(raw)
    normalized[:, 1:] = raw[:, 1:] / divisor[:, None]
    return members, raw, normalized, degenerate


def neighborhoods(dataset: Dataset, k: int, metric=DistanceMetric.EUCLIDEAN) -> list[Neighborhood]:
    """Exact k-neighborhood (center included) of every point in ``dataset``.

    Distance ties are broken by ascending sample id.
    """
    members, raw, normalized, degenerate = knn_arrays(dataset.features, dataset.ids, k, metric)
    ids = dataset.ids
    return [
        Neighborhood(int(ids[i]), tuple(int(m) for m in ids[members[i]]),
                     tuple(raw[i].tolist()), tuple(normalized[i].tolist()), bool(degenerate[i]))
        for i in range(dataset.n)
    ]


def write_neighborhoods_csv(nbs, path) -> None:
    """Dump neighborhoods as rows ``(center_id, rank, member_id, raw_distance, normalized_distance)``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["center_id", "rank", "member_id", "raw_distance", "normalized_distance"])
        for nb in nbs:
            for rank, (m, r, z) in enumerate(zip(nb.member_ids, nb.raw_distances, nb.normalized_distances)):
                w.writerow([nb.center_id, rank, m, repr(r), repr(z)])
