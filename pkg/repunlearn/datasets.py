"""
Synthetic mixture generation, retain/forget splits and class-count priors.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np

from repunlearn.errors import DatasetError
from repunlearn.numerics import sample_gaussian, seeded_rng
from repunlearn.schemas import MixtureConfig, UnlearnModeEnum

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with integer labels in [0, n_classes); read-only after construction"""
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DatasetError(f"Features must be a matrix, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DatasetError(f"{labels.shape[0]} labels for {features.shape[0]} rows")
        if self.n_classes < 1:
            raise DatasetError(f"n_classes must be positive, got {self.n_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DatasetError(f"Labels outside [0, {self.n_classes})")
        if not np.all(np.isfinite(features)):
            raise DatasetError("Features contain non-finite values")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes)

    def class_indices(self, classes: Iterable[int]) -> np.ndarray:
        return np.flatnonzero(np.isin(self.labels, list(classes)))


@dataclass(frozen=True, eq=False)
class UnlearnSplit:
    """Index partition of a dataset into retain and forget parts, with per-class counts"""
    retain_indices: np.ndarray
    forget_indices: np.ndarray
    class_counts: np.ndarray  # N^c
    forget_counts: np.ndarray  # N_f^c
    mode: UnlearnModeEnum
    forget_classes: Tuple[int, ...] = ()

    @property
    def n_total(self) -> int:
        return int(self.retain_indices.size + self.forget_indices.size)

    @property
    def n_forget(self) -> int:
        return int(self.forget_indices.size)

    @property
    def n_retain(self) -> int:
        return int(self.retain_indices.size)

    @property
    def retain_counts(self) -> np.ndarray:
        return self.class_counts - self.forget_counts


@dataclass
class AccessLog:
    """Records which dataset rows an algorithm actually read"""
    reads: List[np.ndarray] = field(default_factory=list)

    def record(self, indices) -> None:
        self.reads.append(np.atleast_1d(np.asarray(indices, dtype=np.int64)).copy())

    def indices(self) -> np.ndarray:
        if not self.reads:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.reads))

    def count_outside(self, allowed: np.ndarray) -> int:
        """Number of distinct rows read that are not in `allowed`"""
        return int(np.setdiff1d(self.indices(), allowed).size)


class AuditedRows:
    """Indexable view over selected rows of a feature matrix that logs every read"""

    def __init__(self, features: np.ndarray, source_indices: np.ndarray, log: AccessLog):
        self._features = features
        self._source = np.asarray(source_indices, dtype=np.int64)
        self.log = log

    def __len__(self) -> int:
        return int(self._source.size)

    def __getitem__(self, idx) -> np.ndarray:
        rows = self._source[idx]
        self.log.record(rows)
        return self._features[rows]


# Generation
def _draw_classes(rng: np.random.Generator, means: np.ndarray, sigma: float, n_per_class: int) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.repeat(np.arange(means.shape[0]), n_per_class)
    features = sample_gaussian(rng, means[labels], sigma ** 2)
    return features, labels


def class_means(config: MixtureConfig, rng: np.random.Generator) -> np.ndarray:
    """Circle means in the first two coordinates, N(0, tau^2) elsewhere (one draw per class)"""
    C, d = config.n_classes, config.dim
    angles = 2.0 * np.pi * np.arange(C) / C
    means = np.zeros((C, d))
    means[:, 0] = config.radius * np.cos(angles)
    means[:, 1] = config.radius * np.sin(angles)
    if d > 2:
        means[:, 2:] = config.tau * rng.standard_normal((C, d - 2))
    return means


def generate_toy_mixture(
    config: MixtureConfig,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Balanced train/test draws from the circle Gaussian mixture.

    Class means are drawn first from `rng` and shared by both sets; train and
    test samples then come from two spawned sub-streams (spawn order: train, test).
    """
    if rng is None:
        rng = seeded_rng(config.seed)
    means = class_means(config, rng)
    train_rng, test_rng = rng.spawn(2)

    x_train, y_train = _draw_classes(train_rng, means, config.sigma, config.n_per_class)
    x_test, y_test = _draw_classes(test_rng, means, config.sigma, config.test_per_class)

    logger.info(
        "Generated mixture: %d classes, dim %d, %d train / %d test samples",
        config.n_classes, config.dim, x_train.shape[0], x_test.shape[0],
    )
    return (
        LabeledDataset(x_train, y_train, config.n_classes),
        LabeledDataset(x_test, y_test, config.n_classes),
    )


# Splits
def _make_split(dataset: LabeledDataset, forget_mask: np.ndarray, mode: UnlearnModeEnum, forget_classes=()) -> UnlearnSplit:
    forget = np.flatnonzero(forget_mask)
    retain = np.flatnonzero(~forget_mask)
    return UnlearnSplit(
        retain_indices=retain,
        forget_indices=forget,
        class_counts=dataset.class_counts,
        forget_counts=np.bincount(dataset.labels[forget], minlength=dataset.n_classes),
        mode=mode,
        forget_classes=tuple(sorted(int(c) for c in forget_classes)),
    )


def split_class_unlearn(dataset: LabeledDataset, forget_classes: Iterable[int]) -> UnlearnSplit:
    """Forget every sample whose label is in forget_classes"""
    classes = sorted(set(int(c) for c in forget_classes))
    if not classes:
        raise DatasetError("Forget class set is empty")
    present = set(np.unique(dataset.labels).tolist())
    missing = [c for c in classes if c not in present]
    if missing:
        raise DatasetError(f"Forget classes {missing} have no samples")
    if present.issubset(classes):
        raise DatasetError("Forget classes cover every present class; the retain set would be empty")

    split = _make_split(dataset, np.isin(dataset.labels, classes), UnlearnModeEnum.CLASS, classes)
    logger.info("Class split: forget classes %s, N_f=%d, N_r=%d", classes, split.n_forget, split.n_retain)
    return split


def split_random_unlearn(dataset: LabeledDataset, fraction: float, rng: np.random.Generator) -> UnlearnSplit:
    """Forget a uniform sample without replacement of round-half-up(fraction * N) rows"""
    if not 0 < fraction < 1:
        raise DatasetError(f"Fraction must lie strictly between 0 and 1, got {fraction}")
    n = dataset.n_samples
    n_forget = int(np.floor(fraction * n + 0.5))
    if n_forget < 1 or n_forget >= n:
        raise DatasetError(f"Fraction {fraction} of {n} samples gives an empty forget or retain set")

    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=n_forget, replace=False)] = True
    split = _make_split(dataset, mask, UnlearnModeEnum.RANDOM)
    logger.info("Random split: fraction %.3f, N_f=%d, N_r=%d", fraction, split.n_forget, split.n_retain)
    return split


# Priors
def retain_class_prior(n_total: int, class_counts: np.ndarray, forget_counts: np.ndarray) -> np.ndarray:
    """
    p(y_r = c) = (N p(y=c) - N_f p(y_f=c)) / (N - N_f).

    With p(y=c) = N^c / N and p(y_f=c) = N_f^c / N_f both numerator terms are
    integer counts, so the subtraction is carried out on counts and the result is
    exactly N_r^c / N_r.
    """
    class_counts = np.asarray(class_counts, dtype=np.int64)
    forget_counts = np.asarray(forget_counts, dtype=np.int64)
    if class_counts.shape != forget_counts.shape:
        raise DatasetError(f"Count vectors differ in length: {class_counts.shape} vs {forget_counts.shape}")
    if np.any(forget_counts < 0) or np.any(forget_counts > class_counts):
        raise DatasetError("Forget counts must lie between 0 and the class counts")
    if int(class_counts.sum()) != int(n_total):
        raise DatasetError(f"Class counts sum to {int(class_counts.sum())}, expected N={n_total}")
    n_forget = int(forget_counts.sum())
    if n_forget >= n_total:
        raise DatasetError("Forget set covers the whole dataset")

    n_retain_per_class = class_counts - forget_counts  # N p(y=c) - N_f p(y_f=c)
    return n_retain_per_class / float(n_total - n_forget)
