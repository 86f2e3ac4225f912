"""
Random views of a sample for the two branches of contrastive learning.

Grid samples have shape (H, W, C); flat samples have shape (D,). Geometric
ops apply to grids only and masking to flat vectors only.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from fcl_sim.exceptions import ConfigError

ROTATIONS = (0, 90, 180, 270)


def _check_range(name, bounds, low=None, high=None):
    if bounds is None:
        return None
    bounds = tuple(float(b) for b in bounds)
    if len(bounds) != 2 or not bounds[0] < bounds[1]:
        raise ConfigError(f"augmentation.{name} must be an increasing pair, got {bounds}")
    if (low is not None and bounds[0] < low) or (high is not None and bounds[1] > high):
        raise ConfigError(f"augmentation.{name} must lie within [{low}, {high}]")
    return bounds


@dataclass
class AugmentationSpec:
    crop_scale: Optional[Tuple[float, float]] = (0.6, 1.0)
    flip_prob: float = 0.5
    rotations: Tuple[int, ...] = ROTATIONS
    brightness: Optional[Tuple[float, float]] = (-0.2, 0.2)
    contrast: Optional[Tuple[float, float]] = (0.8, 1.2)
    noise_sigma: float = 0.05
    mask_prob: float = 0.0

    def __post_init__(self):
        self.crop_scale = _check_range("crop_scale", self.crop_scale, 0.0, 1.0)
        self.brightness = _check_range("brightness", self.brightness)
        self.contrast = _check_range("contrast", self.contrast, 0.0)

        for name in ("flip_prob", "mask_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"augmentation.{name} must be a probability")
        if self.noise_sigma < 0:
            raise ConfigError("augmentation.noise_sigma must be >= 0")

        if isinstance(self.rotations, int):
            self.rotations = (self.rotations,)
        self.rotations = tuple(int(r) for r in self.rotations)
        if not set(self.rotations) <= set(ROTATIONS):
            raise ConfigError(f"augmentation.rotations must be drawn from {ROTATIONS}")

    @classmethod
    def mild(cls) -> "AugmentationSpec":
        """
        Views that keep every pattern where it is: a slight crop-and-zoom,
        amplitude jitter and pixel noise, with no flips, rotations or global
        brightness offset. Suited to blob images whose class is set by blob
        positions.
        """
        return cls(
            crop_scale=(0.8, 1.0),
            flip_prob=0.0,
            rotations=(),
            brightness=None,
            contrast=(0.85, 1.15),
            noise_sigma=0.03,
            mask_prob=0.0,
        )

    @classmethod
    def disabled(cls) -> "AugmentationSpec":
        return cls(
            crop_scale=None,
            flip_prob=0.0,
            rotations=(),
            brightness=None,
            contrast=None,
            noise_sigma=0.0,
            mask_prob=0.0,
        )


def _random_resized_crop(x, scale, rng):
    height, width = x.shape[:2]
    area = rng.uniform(*scale)
    crop_h = min(height, max(1, int(round(np.sqrt(area) * height))))
    crop_w = min(width, max(1, int(round(np.sqrt(area) * width))))
    top = rng.integers(0, height - crop_h + 1)
    left = rng.integers(0, width - crop_w + 1)

    # nearest-neighbour resize back to the input size
    rows = top + (np.arange(height) * crop_h) // height
    cols = left + (np.arange(width) * crop_w) // width
    return x[rows][:, cols]


def augment(x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Applies one random transform t ~ T to a sample, returning a fresh array.
    """
    out = np.array(x, dtype=np.float64, copy=True)
    grid = out.ndim == 3

    if grid and spec.crop_scale is not None:
        out = _random_resized_crop(out, spec.crop_scale, rng)

    if spec.flip_prob > 0 and rng.random() < spec.flip_prob:
        out = out[:, ::-1] if grid else out[::-1]

    if grid and spec.rotations:
        allowed = spec.rotations
        if out.shape[0] != out.shape[1]:
            allowed = tuple(r for r in allowed if r in (0, 180)) or (0,)
        out = np.rot90(out, int(rng.choice(allowed)) // 90, axes=(0, 1))

    photometric = False
    if spec.brightness is not None:
        out = out + rng.uniform(*spec.brightness)
        photometric = True
    if spec.contrast is not None:
        mean = out.mean()
        out = (out - mean) * rng.uniform(*spec.contrast) + mean
        photometric = True
    if spec.noise_sigma > 0:
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
        photometric = True
    if not grid and spec.mask_prob > 0:
        out = np.where(rng.random(out.shape) < spec.mask_prob, 0.0, out)

    if photometric:
        out = np.clip(out, 0.0, 1.0)

    return np.ascontiguousarray(out)


def augment_pair(x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator):
    """
    Two independent views (x_q, x_k) of the same sample.
    """
    return augment(x, spec, rng), augment(x, spec, rng)


def augment_batch(batch: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator):
    """
    Views of every sample in a batch, flattened to (B, D) for the network.
    """
    views_q, views_k = zip(*(augment_pair(x, spec, rng) for x in batch))
    n = len(batch)
    return np.stack(views_q).reshape(n, -1), np.stack(views_k).reshape(n, -1)
