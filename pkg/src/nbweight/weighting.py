"""Score-to-weight mappings: a decreasing logistic and the three-group split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import DataError

DEFAULT_WEIGHT_GRID = (0.25, 0.6, 1.0, 1.5, 2.0)
GROUP_NAMES = ("G0", "G1", "G2")


@dataclass(frozen=True)
class WeightMapConfig:
    """``weight(b) = gamma / (1 + exp(-alpha * (beta - b))) + eta``."""

    alpha: float = 4.0
    beta: float = 1.13
    gamma: float = 1.25
    eta: float = 0.25

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.eta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("weight map parameters must be finite")
        if self.alpha <= 0 or self.gamma <= 0 or self.beta < 0 or self.eta < 0:
            raise ValueError("need alpha > 0, gamma > 0, beta >= 0, eta >= 0")


def logistic_weight(b, cfg: WeightMapConfig = WeightMapConfig()):
    """Map score(s) ``b`` to weights in ``(eta, eta + gamma)``; decreasing in ``b``."""
    out = cfg.gamma * expit(cfg.alpha * (cfg.beta - np.asarray(b, dtype=np.float64))) + cfg.eta
    return float(out) if np.ndim(out) == 0 else out


def default_beta(scores) -> float:
    """Median of the strictly positive scores."""
    s = np.asarray(scores, dtype=np.float64)
    pos = s[s > 0]
    if pos.size == 0:
        raise ValueError("no nonzero scores")
    return float(np.median(pos))


@dataclass(frozen=True)
class GroupSplit:
    g0: tuple[int, ...]
    g1: tuple[int, ...]
    g2: tuple[int, ...]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.g0), len(self.g1), len(self.g2)

    def group_of(self) -> dict[int, int]:
        out = {}
        for g, members in enumerate((self.g0, self.g1, self.g2)):
            for i in members:
                out[i] = g
        return out


def split_groups(scores: Mapping[int, float]) -> GroupSplit:
    """Zero scores to G0; nonzero scores sorted by (score, id) and halved.

    The lower half (taking the extra element when the count is odd) is G1.
    """
    zero = sorted(i for i, s in scores.items() if s == 0)
    nonzero = sorted(((s, i) for i, s in scores.items() if s != 0))
    if len(nonzero) < 2:
        raise ValueError("need at least 2 nonzero scores to split")
    cut = (len(nonzero) + 1) // 2
    return GroupSplit(tuple(zero), tuple(i for _, i in nonzero[:cut]),
                      tuple(i for _, i in nonzero[cut:]))


def group_weights(split: GroupSplit, w: Sequence[float], ids=None,
                  grid: Sequence[float] | None = DEFAULT_WEIGHT_GRID) -> dict[int, float]:
    """Map every id to its group's weight ``w = (w_G0, w_G1, w_G2)``.

    With ``ids`` given, the mapping is restricted to (and ordered by) those ids.
    Pass ``grid=None`` to allow weights outside the configured grid.
    """
    if len(w) != 3:
        raise ValueError("need one weight per group")
    if grid is not None and any(x not in grid for x in w):
        raise ValueError(f"weights {tuple(w)} not all drawn from grid {tuple(grid)}")
    groups = split.group_of()
    if ids is None:
        ids = sorted(groups)
    try:
        return {int(i): float(w[groups[int(i)]]) for i in ids}
    except KeyError as exc:
        raise DataError(f"id {exc.args[0]} missing from split") from None


def random_groups(sizes: Sequence[int], ids, seed: int) -> GroupSplit:
    """Uniformly random partition of ``ids`` with the given group sizes."""
    ids = [int(i) for i in ids]
    if len(sizes) != 3 or any(s < 0 for s in sizes) or sum(sizes) != len(ids):
        raise ValueError(f"group sizes {tuple(sizes)} do not partition {len(ids)} ids")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[p] for p in perm]
    a, b = sizes[0], sizes[0] + sizes[1]
    return GroupSplit(tuple(shuffled[:a]), tuple(shuffled[a:b]), tuple(shuffled[b:]))


def write_weights_csv(rows, path) -> None:
    """``rows`` are ``(sample_id, score, group, weight)``; group may be empty."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "score", "group", "weight"])
        for sid, score, group, weight in rows:
            w.writerow([sid, repr(float(score)), group, repr(float(weight))])


def read_weights_csv(path) -> dict[int, float]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"sample_id", "weight"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected sample_id and weight columns")
        for row in reader:
            try:
                wt = float(row["weight"])
                out[int(row["sample_id"])] = wt
            except ValueError:
                raise DataError(f"{path}: malformed row {row}") from None
            if not math.isfinite(wt) or wt < 0:
                raise DataError(f"{path}: invalid weight {row['weight']!r}")
    return out
