"""
Feature vectors and the FIFO memory banks that hold them.

Banks store their entries column-wise in a ``FeatureBatch`` so that a whole
bank can be used as a negatives matrix without restacking.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Union

import numpy as np

from fcl_sim.exceptions import EmptyBankError, ShapeError, ValidationError

NORM_TOLERANCE = 1e-9


@dataclass
class FeatureVec:
    values: np.ndarray
    origin: int
    birth_round: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ShapeError(f"feature must be a non-empty vector, got {self.values.shape}")
        if abs(np.linalg.norm(self.values) - 1.0) > NORM_TOLERANCE:
            raise ValidationError("feature vectors must have unit L2 norm")
        if self.origin < 0:
            raise ValidationError(f"invalid origin device id {self.origin}")


@dataclass
class FeatureBatch:
    """
    Features stored row-wise with their origin device and birth round.
    """

    values: np.ndarray
    origins: np.ndarray
    birth_rounds: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.origins = np.asarray(self.origins, dtype=np.int64).reshape(-1)
        self.birth_rounds = np.asarray(self.birth_rounds, dtype=np.int64).reshape(-1)
        if self.values.ndim != 2:
            raise ShapeError(f"feature batch must be 2-D, got {self.values.shape}")

        n = self.values.shape[0]
        if self.origins.shape != (n,) or self.birth_rounds.shape != (n,):
            raise ShapeError(
                f"{n} features but {self.origins.size} origins, {self.birth_rounds.size} rounds"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def __iter__(self):
        return iter(self.to_vectors())

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "FeatureBatch":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_values(cls, values: np.ndarray, origin: int, birth_round: int = 0):
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[0]
        return cls(values, np.full(n, origin), np.full(n, birth_round))

    @classmethod
    def from_vectors(cls, feats: Sequence[FeatureVec], dim: int = None) -> "FeatureBatch":
        if not feats:
            if dim is None:
                raise ValidationError("empty feature list needs an explicit dim")
            return cls.empty(dim)
        return cls(
            np.stack([f.values for f in feats]),
            [f.origin for f in feats],
            [f.birth_round for f in feats],
        )

    @classmethod
    def concat(cls, batches: Iterable["FeatureBatch"], dim: int) -> "FeatureBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty(dim)
        return cls(
            np.concatenate([b.values for b in batches]),
            np.concatenate([b.origins for b in batches]),
            np.concatenate([b.birth_rounds for b in batches]),
        )

    def take(self, index) -> "FeatureBatch":
        return FeatureBatch(
            self.values[index].copy(),
            self.origins[index].copy(),
            self.birth_rounds[index].copy(),
        )

    def copy(self) -> "FeatureBatch":
        return self.take(slice(None))

    def to_vectors(self) -> List[FeatureVec]:
        return [
            FeatureVec(v.copy(), int(o), int(r))
            for v, o, r in zip(self.values, self.origins, self.birth_rounds)
        ]


@dataclass
class MemoryBank:
    """
    Fixed-capacity first-in-first-out queue of features, oldest first.
    """

    capacity: int
    dim: int
    features: FeatureBatch = None

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValidationError(f"bank capacity must be positive, got {self.capacity}")
        if self.features is None:
            self.features = FeatureBatch.empty(self.dim)
        if len(self.features) > self.capacity:
            self.features = self.features.take(slice(-self.capacity, None))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def values(self) -> np.ndarray:
        return self.features.values

    @property
    def origins(self) -> np.ndarray:
        return self.features.origins

    @property
    def entries(self) -> List[FeatureVec]:
        return self.features.to_vectors()

    def copy(self, capacity: int = None) -> "MemoryBank":
        return MemoryBank(capacity or self.capacity, self.dim, self.features.copy())


def _as_batch(feats: Union[FeatureBatch, Sequence[FeatureVec]], dim: int) -> FeatureBatch:
    if isinstance(feats, FeatureBatch):
        return feats
    return FeatureBatch.from_vectors(list(feats), dim=dim)


def bank_push(bank: MemoryBank, feats: Union[FeatureBatch, Sequence[FeatureVec]]) -> MemoryBank:
    """
    Appends features in order and evicts the oldest beyond capacity.

    Parameters
    ----------
    bank : MemoryBank
        Updated in place.
    feats : FeatureBatch or list of FeatureVec

    Returns
    ----------
    bank : MemoryBank
    """
    batch = _as_batch(feats, bank.dim)
    if not len(batch):
        return bank
    if batch.dim != bank.dim:
        raise ShapeError(f"pushing {batch.dim}-d features into a {bank.dim}-d bank")

    merged = FeatureBatch.concat([bank.features, batch], bank.dim)
    if len(merged) > bank.capacity:
        merged = merged.take(slice(-bank.capacity, None))
    bank.features = merged
    return bank


def bank_sample_uniform(bank: MemoryBank, count: int, rng: np.random.Generator) -> FeatureBatch:
    """
    Draws count entries uniformly with replacement; the result holds copies.
    """
    if not len(bank):
        raise EmptyBankError("cannot sample from an empty bank")

    index = rng.integers(0, len(bank), size=count)
    return bank.features.take(index)
