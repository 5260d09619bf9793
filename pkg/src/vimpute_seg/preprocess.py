"""Input canonicalization: resize to the working resolution, equalize contrast."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.transform import resize as _sk_resize

from .data_io import Dataset, Sample


@dataclass(frozen=True)
class PreprocessConfig:
    target_height: int = 640
    target_width: int = 512
    equalize: bool = True
    n_bins: int = 256

    def __post_init__(self):
        if self.target_height <= 0 or self.target_width <= 0:
            raise ValueError("target dimensions must be positive")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")


def resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize for intensity images."""
    if h < 8 or w < 8:
        raise ValueError(f"target dims must be >= 8, got {(h, w)}")
    out = _sk_resize(np.asarray(img, dtype=np.float64), (h, w), order=1, mode="reflect",
                     preserve_range=True)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbor resize for masks; values stay in {0, 1}."""
    if h < 8 or w < 8:
        raise ValueError(f"target dims must be >= 8, got {(h, w)}")
    out = _sk_resize(np.asarray(mask), (h, w), order=0, mode="edge",
                     preserve_range=True, anti_aliasing=False)
    return (out > 0.5).astype(np.uint8)


def equalize_histogram(img: np.ndarray, n_bins: int = 256) -> np.ndarray:
    """Map each pixel through the image's own empirical CDF.

    Monotone non-decreasing in input intensity; output lies in [0, 1]; a
    constant image maps to a constant.
    """
    img = np.asarray(img, dtype=np.float64)
    bins = np.minimum((img * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(bins.ravel(), minlength=n_bins)
    cdf = np.cumsum(counts) / img.size
    return cdf[bins].astype(np.float32)


def preprocess_image(img, cfg: PreprocessConfig) -> np.ndarray:
    out = resize(img, cfg.target_height, cfg.target_width)
    if cfg.equalize:
        out = equalize_histogram(out, cfg.n_bins)
    return out


def preprocess_dataset(ds: Dataset, cfg: PreprocessConfig) -> Dataset:
    """Resize (and optionally equalize) every sample; masks use the nearest path."""
    items = tuple(
        Sample(
            preprocess_image(s.image, cfg),
            resize_mask(s.mask, cfg.target_height, cfg.target_width),
            s.id,
        )
        for s in ds
    )
    return Dataset(items, ds.split_tag)
