"""
Non-IID partitioning across devices, stratified train/test splits and nested
label-fraction subsets. Every function has an ``*_indices`` form that works on
label arrays, which the Dataset-level helpers wrap.
"""
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from fcl_sim.data.main import Dataset
from fcl_sim.exceptions import ConfigError, InfeasiblePartitionError, ValidationError
from fcl_sim.logger import get_logger

logger = get_logger(__name__)

SKEW_MODES = ("dominant_class", "dirichlet")
DIRICHLET_ATTEMPTS = 100


@dataclass
class PartitionSpec:
    """
    Parameters
    ----------
    n_devices : int
    skew_mode : str
        ``dominant_class`` gives device d at least ``skew_param`` of its samples
        from class d mod n_classes; ``dirichlet`` draws per-class device shares
        from Dir(skew_param).
    skew_param : float
        Dominance fraction in (0, 1] or Dirichlet concentration > 0.
    seed : int
    tone_shift : float
        Strength of a per-device brightness/contrast offset emulating devices that
        see different skin tones. 0 disables it.
    """

    n_devices: int = 10
    skew_mode: str = "dominant_class"
    skew_param: float = 0.7
    seed: int = 0
    tone_shift: float = 0.0

    def __post_init__(self):
        if self.n_devices < 2:
            raise ConfigError(f"partition.n_devices must be >= 2, got {self.n_devices}")
        if self.skew_mode not in SKEW_MODES:
            raise ConfigError(f"partition.skew_mode must be one of {SKEW_MODES}")
        if self.skew_param <= 0:
            raise ConfigError("partition.skew_param must be positive")
        if self.skew_mode == "dominant_class" and self.skew_param > 1:
            raise ConfigError("partition.skew_param is a fraction in dominant_class mode")
        if not 0.0 <= self.tone_shift < 0.5:
            raise ConfigError("partition.tone_shift must be in [0, 0.5)")


@dataclass
class DeviceSplit:
    device_id: int
    train: Dataset
    test: Dataset


def _dominant_class(labels, n_classes, spec, rng) -> List[np.ndarray]:
    n, devices = len(labels), spec.n_devices
    sizes = [n // devices + (1 if d < n % devices else 0) for d in range(devices)]
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in range(n_classes)]

    parts, needs = [], []
    for device, size in enumerate(sizes):
        label = device % n_classes
        need = math.ceil(spec.skew_param * size - 1e-9)
        if need > len(pools[label]):
            raise InfeasiblePartitionError(
                f"device {device} needs {need} samples of class {label}, "
                f"only {len(pools[label])} left"
            )
        parts.append(pools[label][:need])
        pools[label] = pools[label][need:]
        needs.append(need)

    leftovers = rng.permutation(np.array(sum(pools, []), dtype=np.int64))
    start = 0
    for device, size in enumerate(sizes):
        fill = size - needs[device]
        parts[device] = parts[device] + list(leftovers[start : start + fill])
        start += fill

    return [np.sort(np.array(p, dtype=np.int64)) for p in parts]


def _dirichlet(labels, n_classes, spec, rng) -> List[np.ndarray]:
    devices = spec.n_devices
    for _ in range(DIRICHLET_ATTEMPTS):
        parts = [[] for _ in range(devices)]
        for label in range(n_classes):
            index = rng.permutation(np.flatnonzero(labels == label))
            shares = rng.dirichlet(np.full(devices, spec.skew_param))
            cuts = (np.cumsum(shares) * len(index)).astype(int)[:-1]
            for device, chunk in enumerate(np.split(index, cuts)):
                parts[device] += chunk.tolist()

        if all(parts):
            return [np.sort(np.array(p, dtype=np.int64)) for p in parts]

    raise InfeasiblePartitionError(
        f"no Dirichlet({spec.skew_param}) draw left every device nonempty "
        f"after {DIRICHLET_ATTEMPTS} attempts"
    )


def partition_indices(labels: np.ndarray, n_classes: int, spec: PartitionSpec) -> List[np.ndarray]:
    """
    Disjoint cover of range(len(labels)) by one nonempty index array per device.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) < spec.n_devices:
        raise InfeasiblePartitionError(
            f"{len(labels)} samples cannot fill {spec.n_devices} devices"
        )

    rng = np.random.default_rng(spec.seed)
    if spec.skew_mode == "dominant_class":
        return _dominant_class(labels, n_classes, spec, rng)
    return _dirichlet(labels, n_classes, spec, rng)


def apply_tone_shift(datasets: List[Dataset], strength: float, seed: int) -> List[Dataset]:
    """
    Gives every device its own brightness offset and contrast factor.
    """
    rng = np.random.default_rng([seed, 7919])
    shifted = []
    for dataset in datasets:
        offset = rng.uniform(-strength, strength)
        contrast = 1.0 + rng.uniform(-strength, strength)
        samples = np.clip((dataset.samples - 0.5) * contrast + 0.5 + offset, 0.0, 1.0)
        shifted.append(Dataset(samples, dataset.labels.copy(), dataset.n_classes))
    return shifted


def partition(dataset: Dataset, spec: PartitionSpec) -> List[Dataset]:
    """
    Splits a dataset into label-skewed per-device datasets.

    Parameters
    ----------
    dataset : Dataset
    spec : PartitionSpec

    Returns
    ----------
    devices : list of Dataset
        One dataset per device, in device-id order.
    """
    parts = [
        dataset.subset(index)
        for index in partition_indices(dataset.labels, dataset.n_classes, spec)
    ]
    if spec.tone_shift > 0:
        parts = apply_tone_shift(parts, spec.tone_shift, spec.seed)

    logger.debug(f"Partition sizes: {[len(p) for p in parts]}")
    return parts


def _allocate(quotas: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of quotas to integers summing to total."""
    counts = np.floor(quotas).astype(np.int64)
    remainders = quotas - counts
    order = sorted(range(len(quotas)), key=lambda i: (-remainders[i], i))

    i = 0
    while counts.sum() < total:
        counts[order[i % len(order)]] += 1
        i += 1
    i = len(order) - 1
    while counts.sum() > total:
        j = order[i % len(order)]
        if counts[j] > 0:
            counts[j] -= 1
        i -= 1
    return counts


def split_indices(labels: np.ndarray, ratio: float = 0.6, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stratified (train, test) index split with round(ratio * N) training samples.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n < 2:
        raise ValidationError(f"cannot split {n} samples")
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")

    n_train = min(max(int(math.floor(ratio * n + 0.5)), 1), n - 1)
    classes, counts = np.unique(labels, return_counts=True)
    quotas = _allocate(ratio * counts, n_train)

    rng = np.random.default_rng(seed)
    train = []
    for label, quota in zip(classes, quotas):
        members = rng.permutation(np.flatnonzero(labels == label))
        train.append(members[:quota])

    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(n), train)
    return train, test


def split_train_test(dataset: Dataset, ratio: float = 0.6, seed: int = 0) -> Tuple[Dataset, Dataset]:
    train, test = split_indices(dataset.labels, ratio, seed)
    return dataset.subset(train), dataset.subset(test)


def label_subset_indices(labels: np.ndarray, fraction: float, seed: int = 0) -> np.ndarray:
    """
    Stratified subset of ceil(fraction * N) indices.

    Every class is spread evenly over one seeded global ranking and the subset is a
    prefix of that ranking, so subsets for increasing fractions are nested.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"label fraction must be in (0, 1], got {fraction}")

    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    k = min(n, math.ceil(fraction * n - 1e-9))

    rng = np.random.default_rng(seed)
    keys = np.empty(n)
    for label in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == label))
        keys[members] = (np.arange(len(members)) + 0.5) / len(members)
    tiebreak = rng.random(n)

    ranking = np.lexsort((tiebreak, keys))
    return np.sort(ranking[:k])


def label_subset(train: Dataset, fraction: float, seed: int = 0) -> Dataset:
    return train.subset(label_subset_indices(train.labels, fraction, seed))
