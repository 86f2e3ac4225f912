"""
Labelled sample containers and the synthetic blob-image generator.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from fcl_sim.exceptions import ConfigError, ShapeError, ValidationError


@dataclass
class Dataset:
    """
    Samples of shape (N, H, W, C) or (N, D) with values in [0, 1] and integer labels.
    """

    samples: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)

        if self.samples.ndim not in (2, 4):
            raise ShapeError(f"samples must be (N, D) or (N, H, W, C), got {self.samples.shape}")
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"{self.samples.shape[0]} samples but {self.labels.shape[0]} labels"
            )
        if self.n_classes <= 0:
            raise ValidationError(f"n_classes must be positive, got {self.n_classes}")
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError(f"labels must lie in [0, {self.n_classes})")
        if len(self) and (self.samples.min() < 0.0 or self.samples.max() > 1.0):
            raise ValidationError("sample values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return self.samples.shape[1:]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.sample_shape))

    def flat(self) -> np.ndarray:
        return self.samples.reshape(len(self), -1).astype(np.float64)

    def subset(self, index) -> "Dataset":
        return Dataset(self.samples[index].copy(), self.labels[index].copy(), self.n_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass
class SyntheticSpec:
    """
    Parameters
    ----------
    n_classes : int
        Number of blob-pattern classes.
    samples_per_class : int
    grid : tuple of int
        (H, W, C) of every sample.
    blobs_per_class : int
        Gaussian blobs in each class template.
    radius_range : tuple of float
        Range the blob radii (in pixels) are drawn from.
    jitter_sigma : float
        Intra-class variation: blob displacement, amplitude and pixel noise all scale with it.
    seed : int
    """

    n_classes: int = 5
    samples_per_class: int = 200
    grid: Tuple[int, int, int] = (16, 16, 1)
    blobs_per_class: int = 2
    radius_range: Tuple[float, float] = (1.5, 3.5)
    jitter_sigma: float = 0.15
    seed: int = 0

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.radius_range = tuple(float(r) for r in self.radius_range)
        if len(self.grid) != 3 or min(self.grid) <= 0:
            raise ConfigError(f"synthetic.grid must be three positive ints, got {self.grid}")
        for name in ("n_classes", "samples_per_class", "blobs_per_class"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synthetic.{name} must be positive")
        if self.jitter_sigma < 0:
            raise ConfigError("synthetic.jitter_sigma must be >= 0")
        if not 0 < self.radius_range[0] < self.radius_range[1]:
            raise ConfigError("synthetic.radius_range must be an increasing positive pair")


def generate_synthetic(spec: SyntheticSpec, seed: int = None) -> Dataset:
    """
    Renders every class as a fixed set of Gaussian blobs, then perturbs each
    sample by displacing the blobs, rescaling their amplitude and adding pixel
    noise. Labels are balanced and class-major.

    Parameters
    ----------
    spec : SyntheticSpec
    seed : int, optional
        Overrides ``spec.seed``.

    Returns
    ----------
    dataset : Dataset
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    height, width, channels = spec.grid
    n, blobs = spec.samples_per_class, spec.blobs_per_class
    yy, xx = np.mgrid[0:height, 0:width]
    margin = np.array([min(2.0, (height - 1) / 2), min(2.0, (width - 1) / 2)])

    samples, labels = [], []
    for label in range(spec.n_classes):
        centers = rng.uniform(margin, np.array([height - 1, width - 1]) - margin, (blobs, 2))
        radii = rng.uniform(*spec.radius_range, size=blobs)
        gain = rng.uniform(0.6, 1.0, size=(blobs, channels))

        shift = spec.jitter_sigma * min(height, width) / 2
        cy = centers[:, 0] + rng.normal(0.0, 1.0, (n, blobs)) * shift
        cx = centers[:, 1] + rng.normal(0.0, 1.0, (n, blobs)) * shift
        amplitude = 1.0 + spec.jitter_sigma * rng.normal(0.0, 1.0, (n, blobs))

        d2 = (yy - cy[:, :, None, None]) ** 2 + (xx - cx[:, :, None, None]) ** 2
        bumps = np.exp(-d2 / (2.0 * radii[None, :, None, None] ** 2))
        bumps *= amplitude[:, :, None, None]
        images = np.einsum("nbhw,bc->nhwc", bumps, gain)

        if spec.jitter_sigma > 0:
            images += rng.normal(0.0, 0.2 * spec.jitter_sigma, images.shape)

        samples.append(np.clip(images, 0.0, 1.0))
        labels.append(np.full(n, label))

    return Dataset(np.concatenate(samples), np.concatenate(labels), spec.n_classes)
