"""Data model, CSV ingestion and synthetic Gaussian-mixture domains.

A :class:`SyntheticDomain` knows its own class posterior ``f(x)`` in closed
form, which makes the informative / uncertain status of every generated point
exact rather than estimated.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DataError

ID_COLUMN = "sample_id"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, integer labels in ``[0, class_count)`` and sample ids.

    Arrays are copied and made read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    ids: np.ndarray | None = None
    label_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("features must be a non-empty n x d matrix")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite feature")
        y = np.asarray(self.labels)
        if y.shape != (X.shape[0],):
            raise DataError("labels must align one-to-one with feature rows")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integer class indices")
        y = y.astype(np.int64)
        C = int(self.class_count)
        if C < 2:
            raise DataError("class_count must be at least 2")
        if y.min() < 0 or y.max() >= C:
            raise DataError(f"labels must lie in [0, {C})")
        ids = np.arange(X.shape[0]) if self.ids is None else np.asarray(self.ids)
        if ids.shape != (X.shape[0],):
            raise DataError("ids must align one-to-one with feature rows")
        ids = ids.astype(np.int64)
        if np.unique(ids).size != ids.size:
            raise DataError("sample ids must be unique")
        if self.label_names is not None and len(self.label_names) < C:
            raise DataError("label_names must name every class")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names must match the feature count")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "class_count", C)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "Dataset":
        """Rows selected by a positional index array or boolean mask."""
        index = np.asarray(index)
        return Dataset(
            self.features[index],
            self.labels[index],
            self.class_count,
            ids=self.ids[index],
            label_names=self.label_names,
            feature_names=self.feature_names,
        )

    def positions(self, ids: Iterable[int]) -> np.ndarray:
        """Row positions of the given sample ids, in the given order."""
        lookup = {int(i): p for p, i in enumerate(self.ids)}
        try:
            return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]}") from None

    def label_name(self, label: int) -> str:
        if self.label_names is None:
            return str(int(label))
        return self.label_names[int(label)]


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def load_csv(path, label_column: str, k_classes: int | None = None,
             id_column: str | None = ID_COLUMN) -> Dataset:
    """Read a headered CSV file into a :class:`Dataset`.

    Labels are re-encoded densely in order of first appearance; the original
    label strings are kept in ``Dataset.label_names``. If ``id_column`` is
    present in the header its integer values become the sample ids, otherwise
    ids are the zero-based row numbers. Every other column is a feature.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    body = [r for r in body if r]  # tolerate a trailing blank line
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} absent")
    if not body:
        raise DataError(f"{path}: no data rows")
    label_at = header.index(label_column)
    id_at = header.index(id_column) if id_column and id_column in header else None
    feature_at = [j for j in range(len(header)) if j not in (label_at, id_at)]
    if not feature_at:
        raise DataError(f"{path}: no feature columns")

    X = np.empty((len(body), len(feature_at)))
    codes: dict[str, int] = {}
    y = np.empty(len(body), dtype=np.int64)
    ids = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{r}: expected {len(header)} columns, got {len(row)}")
        for c, j in enumerate(feature_at):
            try:
                v = float(row[j])
            except ValueError:
                raise DataError(f"{path}:{r}: non-numeric feature {header[j]}={row[j]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}:{r}: non-finite feature {header[j]}={row[j]!r}")
            X[r - 2, c] = v
        y[r - 2] = codes.setdefault(row[label_at].strip(), len(codes))
        if id_at is None:
            ids[r - 2] = r - 2
        else:
            try:
                ids[r - 2] = int(row[id_at])
            except ValueError:
                raise DataError(f"{path}:{r}: sample id must be an integer") from None

    if len(codes) < 2:
        raise DataError(f"{path}: fewer than 2 distinct labels")
    C = len(codes)
    if k_classes is not None:
        if k_classes < C:
            raise DataError(f"{path}: found {C} labels but k_classes={k_classes}")
        C = k_classes
    names = list(codes) + [f"class_{c}" for c in range(len(codes), C)]
    return Dataset(X, y, C, ids=ids, label_names=tuple(names),
                   feature_names=tuple(header[j] for j in feature_at))


def write_csv(dataset: Dataset, path, label_column: str = "y") -> None:
    """Write ``dataset`` so that :func:`load_csv` reproduces it exactly.

    Floats are written with ``repr`` (shortest round-tripping form).
    """
    names = dataset.feature_names or tuple(f"x{j}" for j in range(dataset.d))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([ID_COLUMN, *names, label_column])
        for i, row, lab in zip(dataset.ids, dataset.features, dataset.labels):
            w.writerow([int(i), *(repr(float(v)) for v in row), dataset.label_name(lab)])


# --------------------------------------------------------------------------
# Synthetic domains
# --------------------------------------------------------------------------


class PointStatus(enum.Enum):
    INFORMATIVE = "informative"
    UNCERTAIN = "uncertain"


def point_status(posterior: Sequence[float], observed_label: int) -> PointStatus:
    """Informative iff ``observed_label`` attains the maximum of ``posterior``.

    Any maximizing label counts as informative when the maximum is tied.
    """
    p = np.asarray(posterior, dtype=np.float64)
    if not 0 <= observed_label < p.size:
        raise ValueError(f"label {observed_label} out of range for {p.size} classes")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("posterior must sum to 1")
    return PointStatus.INFORMATIVE if p[observed_label] == p.max() else PointStatus.UNCERTAIN


@dataclass(frozen=True)
class Component:
    """Isotropic Gaussian ``N(mean, std^2 I)`` with a within-class mixing weight."""

    mean: tuple[float, ...]
    std: float
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        if not self.std > 0 or not math.isfinite(self.std):
            raise DataError("degenerate mixture: component std must be positive")
        if not self.weight > 0:
            raise DataError("component weight must be positive")


@dataclass(frozen=True)
class NoiseMode:
    """How observed labels are produced from a generated point.

    ``posterior``: the label is the class that generated the point, which is
    a draw from ``f(x)``.

    ``boundary-flip``: the label starts as the arg-max class of ``f(x)`` and
    flips to the runner-up class with probability
    ``rate * exp(-margin**2 / bandwidth**2)`` where ``margin`` is the gap
    between the two largest posterior values.
    """

    kind: str = "posterior"
    rate: float = 0.0
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("posterior", "boundary-flip"):
            raise DataError(f"unknown noise mode {self.kind!r}")
        if self.kind == "boundary-flip":
            if not 0.0 <= self.rate <= 1.0:
                raise DataError("flip rate must lie in [0, 1]")
            if not self.bandwidth > 0:
                raise DataError("flip bandwidth must be positive")

    def to_dict(self) -> dict:
        if self.kind == "posterior":
            return {"mode": "posterior"}
        return {"mode": self.kind, "rate": self.rate, "bandwidth": self.bandwidth}


@dataclass(frozen=True)
class SyntheticDomain:
    """Per-class isotropic Gaussian mixtures with class priors.

    ``classes[c]`` is the component list of class ``c``; component weights
    and ``priors`` are normalized on construction (they must already sum to 1
    within 1e-12, or be given unnormalized via :meth:`build`).
    """

    classes: tuple[tuple[Component, ...], ...]
    priors: tuple[float, ...]
    noise: NoiseMode = field(default_factory=NoiseMode)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise DataError("a domain needs at least 2 classes")
        if len(self.priors) != len(self.classes):
            raise DataError("one prior per class required")
        if any(len(comps) == 0 for comps in self.classes):
            raise DataError("empty component list")
        dims = {len(c.mean) for comps in self.classes for c in comps}
        if len(dims) != 1 or 0 in dims:
            raise DataError("all component means must share one positive dimension")
        pri = np.asarray(self.priors, dtype=np.float64)
        if np.any(pri < 0) or abs(pri.sum() - 1.0) > 1e-12:
            raise DataError("priors must form a probability vector")
        for comps in self.classes:
            if abs(sum(c.weight for c in comps) - 1.0) > 1e-12:
                raise DataError("mixing proportions of a class must sum to 1")

    @classmethod
    def build(cls, classes, priors=None, noise: NoiseMode | None = None) -> "SyntheticDomain":
        """Construct from loose specs, normalizing priors and mixing weights."""
        built = []
        for comps in classes:
            comps = [c if isinstance(c, Component) else Component(**c) for c in comps]
            if not comps:
                raise DataError("empty component list")
            total = sum(c.weight for c in comps)
            built.append(tuple(Component(c.mean, c.std, c.weight / total) for c in comps))
        pri = np.ones(len(built)) if priors is None else np.asarray(priors, dtype=np.float64)
        if np.any(pri < 0) or pri.sum() <= 0:
            raise DataError("priors must be non-negative and not all zero")
        pri = pri / pri.sum()
        return cls(tuple(built), tuple(float(p) for p in pri), noise or NoiseMode())

    @property
    def class_count(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return len(self.classes[0][0].mean)

    def with_noise(self, noise: NoiseMode) -> "SyntheticDomain":
        return SyntheticDomain(self.classes, self.priors, noise)

    def log_joint(self, X) -> np.ndarray:
        """``log(prior_c * p(x | c))`` for every row of ``X``, shape (n, C)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        d = X.shape[1]
        out = np.empty((X.shape[0], self.class_count))
        with np.errstate(divide="ignore"):
            for c, comps in enumerate(self.classes):
                terms = []
                for comp in comps:
                    sq = ((X - np.asarray(comp.mean)) ** 2).sum(axis=1)
                    terms.append(np.log(comp.weight) - 0.5 * sq / comp.std**2
                                 - d * np.log(comp.std) - 0.5 * d * np.log(2 * np.pi))
                out[:, c] = np.log(self.priors[c]) + logsumexp(np.stack(terms), axis=0)
        return out

    def posterior(self, X) -> np.ndarray:
        """Closed-form class posterior ``f(x)``, shape (n, C); rows sum to 1."""
        lj = self.log_joint(X)
        e = np.exp(lj - lj.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "priors": list(self.priors),
            "classes": [[{"mean": list(c.mean), "std": c.std, "weight": c.weight}
                         for c in comps] for comps in self.classes],
            "noise": self.noise.to_dict(),
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "SyntheticDomain":
        """Inverse of :meth:`to_dict`; see README for the schema."""
        noise = spec.get("noise", {"mode": "posterior"})
        noise = NoiseMode(noise.get("mode", "posterior"),
                          float(noise.get("rate", 0.0)), float(noise.get("bandwidth", 1.0)))
        try:
            return cls.build(spec["classes"], spec.get("priors"), noise)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed domain config: {exc}") from None


def load_domain(path) -> SyntheticDomain:
    with Path(path).open(encoding="utf-8") as fh:
        return SyntheticDomain.from_dict(json.load(fh))


def _ring_means(count: int, radius: float) -> list[tuple[float, float]]:
    return [(radius * math.cos(2 * math.pi * c / count), radius * math.sin(2 * math.pi * c / count))
            for c in range(count)]


def preset(name: str, noise: NoiseMode | None = None) -> SyntheticDomain:
    """Named desk-scale domains.

    ``two-gauss-overlap``: two unit-variance classes centred at (-1, 0) and
    (1, 0). ``five-class-ring``: five classes on a circle of radius 2 with
    std 0.75. Both default to boundary-flip noise with rate 0.45 and
    bandwidth 1.0.
    """
    if name == "two-gauss-overlap":
        classes = [[Component((-1.0, 0.0), 1.0)], [Component((1.0, 0.0), 1.0)]]
        default = NoiseMode("boundary-flip", rate=0.45, bandwidth=1.0)
    elif name == "five-class-ring":
        classes = [[Component(m, 0.75)] for m in _ring_means(5, 2.0)]
        default = NoiseMode("boundary-flip", rate=0.45, bandwidth=1.0)
    else:
        raise DataError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return SyntheticDomain.build(classes, None, noise or default)


PRESETS = ("two-gauss-overlap", "five-class-ring")


@dataclass(frozen=True, eq=False)
class GeneratedData:
    dataset: Dataset
    posteriors: np.ndarray
    status: tuple[PointStatus, ...]

    def __iter__(self):
        return iter((self.dataset, self.posteriors, self.status))

    @property
    def uncertain(self) -> np.ndarray:
        return np.array([s is PointStatus.UNCERTAIN for s in self.status])


def _status_vector(posteriors: np.ndarray, labels: np.ndarray) -> tuple[PointStatus, ...]:
    own = posteriors[np.arange(labels.size), labels]
    informative = own == posteriors.max(axis=1)
    return tuple(PointStatus.INFORMATIVE if f else PointStatus.UNCERTAIN for f in informative)


def generate(domain: SyntheticDomain, n: int, seed: int) -> GeneratedData:
    """Draw ``n`` labelled points; a pure function of ``(domain, n, seed)``.

    Returns the dataset, the exact posterior ``f(x)`` of every point and each
    point's informative / uncertain status.
    """
    if n < 1:
        raise DataError("n must be at least 1")
    rng = np.random.default_rng(seed)
    C, d = domain.class_count, domain.dim
    cls = rng.choice(C, size=n, p=np.asarray(domain.priors))
    X = np.empty((n, d))
    for c, comps in enumerate(domain.classes):
        rows = np.flatnonzero(cls == c)
        if rows.size == 0:
            continue
        which = rng.choice(len(comps), size=rows.size, p=[comp.weight for comp in comps])
        means = np.array([comp.mean for comp in comps])[which]
        stds = np.array([comp.std for comp in comps])[which]
        X[rows] = means + stds[:, None] * rng.standard_normal((rows.size, d))

    post = domain.posterior(X)
    if domain.noise.kind == "posterior":
        # The generating class is itself a draw from f(x) given x.
        y = cls
    else:
        order = np.argsort(-post, axis=1, kind="stable")
        top, second = order[:, 0], order[:, 1]
        rows = np.arange(n)
        margin = post[rows, top] - post[rows, second]
        p_flip = domain.noise.rate * np.exp(-(margin**2) / domain.noise.bandwidth**2)
        y = np.where(rng.random(n) < p_flip, second, top)
    data = Dataset(X, y, C)
    return GeneratedData(data, _frozen(post), _status_vector(post, data.labels))
