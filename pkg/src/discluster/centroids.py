"""Running class/cluster centroids with the moving-average update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, ParameterError, StateError
from .model import argmax_rows


@dataclass(frozen=True)
class CentroidBank:
    """K stored centroids for one (domain, feature space) pair.

    The stored arrays are plain buffers; nothing in them carries gradient.
    Updates return a new bank rather than mutating this one.
    """

    centroids: np.ndarray
    initialized: np.ndarray
    alpha: float = 0.7

    @classmethod
    def empty(cls, num_classes: int, dim: int, alpha: float = 0.7) -> "CentroidBank":
        if not 0.0 <= alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes, dtype=bool), float(alpha))

    @property
    def num_classes(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def ready(self) -> bool:
        return bool(self.initialized.all())

    def require_ready(self):
        missing = np.flatnonzero(~self.initialized)
        if missing.size:
            raise StateError(f"centroid {int(missing[0])} has not been initialized")

    def copy(self) -> "CentroidBank":
        return CentroidBank(self.centroids.copy(), self.initialized.copy(), self.alpha)


def assign_pseudo_labels(logits) -> np.ndarray:
    """Cluster assignment of each row: argmax with lowest-index tie-break."""
    return argmax_rows(logits)


def update(bank: CentroidBank, features: Tensor, labels) -> tuple[CentroidBank, Tensor]:
    """Apply one moving-average step and build the in-graph centroids.

    Returns the new stored bank and a KxM tensor whose row k is
    ``alpha * stored_k + (1 - alpha) * mean of this batch's class-k features``
    with the stored part detached. A class seen for the first time takes
    the batch mean directly; a class absent from the batch keeps its stored
    (detached) value.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, m = features.shape
    K = bank.num_classes
    if m != bank.dim:
        raise DimensionError(f"feature width {m} != centroid width {bank.dim}")
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= K):
        raise ContractError(f"label out of range for {K} classes")

    alpha = bank.alpha
    counts = np.bincount(labels, minlength=K)
    present = counts > 0
    fresh = present & ~bank.initialized
    # mean weight per class; first sighting bypasses alpha
    batch_weight = np.where(fresh, 1.0, 1.0 - alpha)
    keep_weight = np.where(present & ~fresh, alpha, np.where(present, 0.0, 1.0))

    mix = np.zeros((K, n))
    mix[labels, np.arange(n)] = (batch_weight / np.maximum(counts, 1))[labels]
    carried = keep_weight[:, None] * bank.centroids

    m_hat = ad.add(ad.constant(carried), ad.matmul(ad.constant(mix), features))
    new_values = m_hat.value.copy()
    new_bank = CentroidBank(new_values, bank.initialized | present, alpha)
    return new_bank, m_hat


def stored_centroids(bank: CentroidBank) -> Tensor:
    return ad.constant(bank.centroids)


def within_vector(f: Tensor, centroids: Tensor) -> Tensor:
    """Rows of negative squared distances from each feature row to each centroid."""
    return ad.neg(ad.sq_dist(f, centroids))


def between_vectors(centroids: Tensor) -> Tensor:
    """KxK matrix; row k is the negative squared distance of centroid k to all others."""
    return ad.neg(ad.sq_dist(centroids, centroids))


def within_vector_bank(f, bank: CentroidBank) -> np.ndarray:
    """Value-only distance vector(s) against a stored bank."""
    bank.require_ready()
    f = f if isinstance(f, Tensor) else ad.constant(f)
    return within_vector(f, stored_centroids(bank)).value


def between_vector_bank(k: int, bank: CentroidBank) -> np.ndarray:
    bank.require_ready()
    if not 0 <= k < bank.num_classes:
        raise ContractError(f"class {k} out of range")
    return between_vectors(stored_centroids(bank)).value[k]
