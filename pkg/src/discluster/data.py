"""Synthetic domain-shift tasks, CSV ingestion, merging and batching."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ParseError


@dataclass(frozen=True)
class Dataset:
    """Feature rows with optional labels; ``labels`` is None for unlabeled data."""

    features: np.ndarray
    labels: np.ndarray | None
    domain_tag: str
    num_classes: int
    provenance: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError(f"features must be a matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ConfigError("features contain non-finite values")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise ConfigError(f"{y.shape[0]} labels for {x.shape[0]} rows")
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise ConfigError(f"labels must lie in 0..{self.num_classes - 1}")
            object.__setattr__(self, "labels", y)
        if not self.provenance:
            object.__setattr__(self, "provenance", (self.domain_tag,))

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def train_view(self) -> "UnlabeledView":
        return UnlabeledView(self.features, self.domain_tag, self.num_classes)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.domain_tag, self.num_classes, self.provenance)


@dataclass(frozen=True)
class UnlabeledView:
    """What the trainer sees of a target domain: rows only, no label accessor."""

    features: np.ndarray
    domain_tag: str
    num_classes: int

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def rotate_translate(points: np.ndarray, rotation_deg: float, translation=(0.0, 0.0)) -> np.ndarray:
    theta = math.radians(rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    return points @ rot.T + np.asarray(translation, dtype=np.float64)


_MOON_CENTER = np.array([0.5, 0.25])


def _moons(n: int, noise_sd: float, rng: np.random.Generator):
    n_outer = n // 2
    n_inner = n - n_outer
    t_out = rng.uniform(0.0, math.pi, n_outer)
    t_in = rng.uniform(0.0, math.pi, n_inner)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    # centre the pair of moons on the origin so rotation does not also translate
    outer -= _MOON_CENTER
    inner -= _MOON_CENTER
    x = np.concatenate([outer, inner]) + rng.normal(0.0, noise_sd, size=(n, 2))
    y = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    order = rng.permutation(n)
    return x[order], y[order]


def gen_two_moons_shift(n: int = 400, noise_sd: float = 0.1, rotation_deg: float = 40.0,
                        translation=(0.0, 0.0), seed: int = 0) -> tuple[Dataset, Dataset]:
    """Two-moons source and a rotated/translated target, each with n points.

    The target is drawn independently of the source, then rotated about the
    origin and translated.
    """
    if n < 2 or noise_sd < 0:
        raise ConfigError("two-moons needs n >= 2 and noise_sd >= 0")
    translation = tuple(float(v) for v in translation)
    if len(translation) != 2:
        raise ConfigError("translation must have two components")
    rs, rt = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    xs, ys = _moons(n, noise_sd, rs)
    xt, yt = _moons(n, noise_sd, rt)
    xt = rotate_translate(xt, rotation_deg, translation)
    return Dataset(xs, ys, "source", 2), Dataset(xt, yt, "target", 2)


def gen_gaussian_blobs_shift(K: int = 3, n_per_class: int = 100, d: int = 2,
                             mean_shift: float = 1.0, cov_scale: float = 1.0, seed: int = 0,
                             separation: float = 4.0) -> tuple[Dataset, Dataset]:
    """Isotropic Gaussian classes; the target moves every mean and rescales the covariance.

    Class means are drawn once per seed with spread ``separation``; the target
    means are the source means plus ``mean_shift`` along the unit diagonal,
    and the target covariance is ``cov_scale`` times the identity.
    """
    if K < 2 or n_per_class < 1 or d < 1 or cov_scale <= 0:
        raise ConfigError("blobs need K >= 2, n_per_class >= 1, d >= 1, cov_scale > 0")
    rm, rs, rt = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    means = rm.normal(0.0, separation, size=(K, d))
    direction = np.ones(d) / math.sqrt(d)
    target_means = means + mean_shift * direction

    def draw(rng, centers, sd):
        y = np.repeat(np.arange(K), n_per_class)
        x = centers[y] + rng.normal(0.0, sd, size=(K * n_per_class, d))
        order = rng.permutation(y.size)
        return x[order], y[order]

    xs, ys = draw(rs, means, 1.0)
    xt, yt = draw(rt, target_means, math.sqrt(cov_scale))
    return Dataset(xs, ys, "source", K), Dataset(xt, yt, "target", K)


def blob_means(K: int, d: int, seed: int, separation: float = 4.0) -> np.ndarray:
    """Source class means used by :func:`gen_gaussian_blobs_shift` for this seed."""
    rm = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[0])
    return rm.normal(0.0, separation, size=(K, d))


def feature_stats(source: Dataset) -> tuple[np.ndarray, np.ndarray]:
    mean = source.features.mean(axis=0)
    std = source.features.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def standardize(source: Dataset, *others: Dataset) -> list[Dataset]:
    """Z-score every dataset with the source's per-column mean and std."""
    mean, std = feature_stats(source)
    return [ds.with_features((ds.features - mean) / std) for ds in (source, *others)]


# ------------------------------------------------------------------ CSV

def load_csv(path, domain_tag: str | None = None, num_classes: int | None = None) -> Dataset:
    """Read ``f1,...,fd,label`` rows; a label of -1 marks an unlabeled row."""
    path = Path(path)
    rows, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1].strip() != "label" or len(header) < 2:
            raise ParseError(f"{path}:1: header must be f1,...,fd,label")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
            try:
                rows.append([float(c) for c in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell") from None
            if labels[-1] < -1:
                raise ParseError(f"{path}:{lineno}: label must be -1 or a class index")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    unlabeled = y == -1
    if unlabeled.any() and not unlabeled.all():
        first = int(np.flatnonzero(unlabeled != unlabeled[0])[0]) + 2
        raise ParseError(f"{path}:{first}: file mixes labeled and unlabeled rows")
    tag = domain_tag or path.stem
    if unlabeled.all():
        if num_classes is None:
            raise ParseError(f"{path}: unlabeled file needs num_classes")
        return Dataset(np.array(rows), None, tag, num_classes)
    K = num_classes if num_classes is not None else int(y.max()) + 1
    return Dataset(np.array(rows), y, tag, K)


def write_csv(dataset: Dataset, path, hide_labels: bool = False):
    path = Path(path)
    d = dataset.dim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i + 1}" for i in range(d)] + ["label"])
        labels = dataset.labels if dataset.labels is not None and not hide_labels else None
        for i, row in enumerate(dataset.features):
            w.writerow([repr(float(v)) for v in row] + [int(labels[i]) if labels is not None else -1])


def merge_sources(*datasets: Dataset) -> Dataset:
    """Stack several labeled source domains into one."""
    if not datasets:
        raise ConfigError("nothing to merge")
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.dim != first.dim or ds.num_classes != first.num_classes:
            raise ConfigError("merged sources must share feature width and class count")
        if ds.labeled != first.labeled:
            raise ConfigError("cannot merge labeled with unlabeled data")
    if len(datasets) == 1:
        return first
    x = np.concatenate([ds.features for ds in datasets])
    y = np.concatenate([ds.labels for ds in datasets]) if first.labeled else None
    prov = tuple(p for ds in datasets for p in ds.provenance)
    return Dataset(x, y, "+".join(prov), first.num_classes, prov)


# ------------------------------------------------------------------ batching

class Batcher:
    """Paired shuffled mini-batches from a labeled source and an unlabeled target.

    One epoch is one pass over the larger domain; the smaller one is cycled
    through fresh permutations. Both batches in a step have the same size.
    """

    def __init__(self, source: Dataset, target: UnlabeledView | None, batch_size: int, seed: int = 0):
        if len(source) == 0 or (target is not None and len(target) == 0):
            raise ConfigError("batcher needs non-empty datasets")
        if not source.labeled:
            raise ConfigError("source dataset must be labeled")
        self.source = source
        self.target = target
        self.batch_size = int(batch_size)
        self.rng = np.random.default_rng(seed)

    @property
    def steps_per_epoch(self) -> int:
        n = max(len(self.source), len(self.target) if self.target is not None else 0)
        return math.ceil(n / self.batch_size)

    def _order(self, n: int, total: int) -> np.ndarray:
        parts, have = [], 0
        while have < total:
            parts.append(self.rng.permutation(n))
            have += n
        return np.concatenate(parts)[:total]

    def epoch(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray | None]]:
        n_s = len(self.source)
        n_t = len(self.target) if self.target is not None else 0
        total = max(n_s, n_t)
        idx_s = self._order(n_s, total)
        idx_t = self._order(n_t, total) if self.target is not None else None
        for lo in range(0, total, self.batch_size):
            hi = min(lo + self.batch_size, total)
            s = idx_s[lo:hi]
            xt = self.target.features[idx_t[lo:hi]] if idx_t is not None else None
            yield self.source.features[s], self.source.labels[s], xt
