"""FIFO memory bank of EMA features, class distributions and labels."""

import logging
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel

from .models import BankEntry, NeighborSet
from .numeric import ShapeError

logger = logging.getLogger(__name__)

# Tolerances for validating pushed rows.
_UNIT_TOL = 1e-6
_SIMPLEX_TOL = 1e-9


class BankSnapshot(BaseModel):
    """Immutable copy of the bank contents, oldest entry first."""

    features: np.ndarray  # (count, d)
    dists: np.ndarray  # (count, C)
    labels: np.ndarray  # (count,)

    model_config = {"arbitrary_types_allowed": True, "frozen": True}

    @property
    def count(self) -> int:
        return int(self.labels.shape[0])

    def query_neighbors(self, z: np.ndarray, label: int, top_n: int) -> NeighborSet:
        """Top-N same-label anchors by similarity plus every different-label anchor.

        Positives come out by descending similarity; equal similarities go to
        the newer entry first. Negatives stay in chronological order.
        """
        if top_n <= 0:
            raise ValueError(f"top_n must be positive, got {top_n}")
        dim = self.features.shape[1]
        query = np.asarray(z, dtype=np.float64)
        if query.shape != (dim,):
            raise ShapeError(f"query has shape {query.shape}, bank stores dim {dim}")

        same = self.labels == label
        pos_ids = np.flatnonzero(same)
        neg_ids = np.flatnonzero(~same)
        if pos_ids.size:
            sims = self.features[pos_ids] @ query
            # lexsort: last key is primary (similarity desc), then recency desc.
            order = np.lexsort((-pos_ids, -sims))
            pos_ids = pos_ids[order[:top_n]]
        return NeighborSet(
            positives=self.features[pos_ids],
            negatives=self.features[neg_ids],
            positive_ids=pos_ids.tolist(),
            negative_ids=neg_ids.tolist(),
        )


class MemoryBank:
    """Fixed-capacity ring buffer; each push past capacity evicts the oldest entry.

    Args:
        capacity: Maximum number of stored entries K.
        feature_dim: Dimension of stored features.
        num_classes: Length of stored class distributions.
    """

    def __init__(self, capacity: int, feature_dim: int, num_classes: int):
        if capacity <= 0 or feature_dim <= 0 or num_classes <= 0:
            raise ValueError("capacity, feature_dim and num_classes must be > 0")
        self.capacity = int(capacity)
        self.feature_dim = int(feature_dim)
        self.num_classes = int(num_classes)
        self.write_cursor = 0
        self.count = 0
        self._features = np.zeros((self.capacity, self.feature_dim), dtype=np.float64)
        self._dists = np.zeros((self.capacity, self.num_classes), dtype=np.float64)
        self._labels = np.zeros(self.capacity, dtype=np.int64)

    def __len__(self) -> int:
        return self.count

    @property
    def is_full(self) -> bool:
        return self.count == self.capacity

    def push_batch(self, entries: Sequence[BankEntry]) -> None:
        """Append entries in order, evicting the oldest once full."""
        if not entries:
            return
        self.push_arrays(
            np.stack([np.asarray(e.feature, dtype=np.float64) for e in entries]),
            np.stack([np.asarray(e.class_dist, dtype=np.float64) for e in entries]),
            np.asarray([e.label for e in entries], dtype=np.int64),
        )

    def push_arrays(self, features: np.ndarray, dists: np.ndarray, labels: np.ndarray) -> None:
        """Array form of ``push_batch``: row i of each argument is one entry."""
        feats = np.asarray(features, dtype=np.float64)
        probs = np.asarray(dists, dtype=np.float64)
        labs = np.asarray(labels, dtype=np.int64)
        n = labs.shape[0]
        if n == 0:
            return
        if feats.shape != (n, self.feature_dim):
            raise ShapeError(f"features must have shape ({n}, {self.feature_dim}), got {feats.shape}")
        if probs.shape != (n, self.num_classes):
            raise ShapeError(f"class distributions must have shape ({n}, {self.num_classes}), got {probs.shape}")
        if np.any(labs < 0) or np.any(labs >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if np.any(np.abs(np.linalg.norm(feats, axis=1) - 1.0) > _UNIT_TOL):
            raise ValueError("bank features must be unit-norm")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > _SIMPLEX_TOL):
            raise ValueError("bank class distributions must sum to 1")

        if n > self.capacity:
            # Only the newest K rows survive; advance as if the rest were written.
            skipped = n - self.capacity
            self.write_cursor = (self.write_cursor + skipped) % self.capacity
            feats, probs, labs = feats[skipped:], probs[skipped:], labs[skipped:]
            n = self.capacity

        slots = (self.write_cursor + np.arange(n)) % self.capacity
        self._features[slots] = feats
        self._dists[slots] = probs
        self._labels[slots] = labs
        self.write_cursor = int((self.write_cursor + n) % self.capacity)
        self.count = min(self.capacity, self.count + n)
        logger.debug(f"bank push: {n} entries, count={self.count}, cursor={self.write_cursor}")

    def chronological_slots(self) -> np.ndarray:
        """Storage slots ordered oldest to newest."""
        if self.count < self.capacity:
            return np.arange(self.count)
        return (self.write_cursor + np.arange(self.capacity)) % self.capacity

    def snapshot(self) -> BankSnapshot:
        """Copy of the contents, oldest first; later pushes do not affect it."""
        slots = self.chronological_slots()
        return BankSnapshot(
            features=self._features[slots].copy(),
            dists=self._dists[slots].copy(),
            labels=self._labels[slots].copy(),
        )

    def entries(self) -> List[BankEntry]:
        snap = self.snapshot()
        return [
            BankEntry(feature=snap.features[i], class_dist=snap.dists[i], label=int(snap.labels[i]))
            for i in range(snap.count)
        ]

    def query_neighbors(self, z: np.ndarray, label: int, top_n: int) -> NeighborSet:
        return self.snapshot().query_neighbors(z, label, top_n)

    @classmethod
    def from_snapshot(cls, capacity: int, snapshot: BankSnapshot) -> "MemoryBank":
        """Rebuild a bank whose chronological contents equal ``snapshot``."""
        bank = cls(capacity, snapshot.features.shape[1], snapshot.dists.shape[1])
        bank.push_arrays(snapshot.features, snapshot.dists, snapshot.labels)
        return bank
