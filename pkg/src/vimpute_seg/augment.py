"""Occlusion-simulating data augmentation.

Three families, each gated by an independent Bernoulli(p_aug) draw:

* standard: random rotation plus horizontal/vertical flips, applied
  identically to image and mask;
* block: one half of the image (top/bottom/left/right) set to zero, mask
  untouched;
* diffuse: bright overlapping disks placed by a Strauss point process,
  smoothed with a Gaussian kernel and added so intensities saturate, mask
  untouched.

Block and diffuse never change the label: the supervision keeps saying the
lung is there even when the image no longer shows it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, rotate as _nd_rotate


@dataclass(frozen=True)
class StraussParams:
    """Pairwise-interaction point process: density ~ beta^n * gamma^(close pairs)."""

    beta: float = 6.0 / (640 * 512)   # points per px^2; ~6 expected disks per image
    gamma: float = 0.5
    interaction_radius_px: float = 100.0
    mcmc_steps: int = 2000

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.interaction_radius_px <= 0:
            raise ValueError("interaction radius must be positive")


@dataclass(frozen=True)
class AugmentConfig:
    p_aug: float = 0.9
    enable_standard: bool = True
    enable_block: bool = False
    enable_diffuse: bool = False
    rotation_max_deg: float = 10.0
    strauss: StraussParams = field(default_factory=StraussParams)
    disk_radius_range: tuple[float, float] = (20.0, 80.0)
    gaussian_sigma_px: float = 16.0
    saturation_level: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.p_aug <= 1.0:
            raise ValueError("p_aug must be in [0, 1]")
        rmin, rmax = self.disk_radius_range
        if rmin <= 0 or rmax < rmin:
            raise ValueError(f"invalid disk radius range {self.disk_radius_range}")
        if self.gaussian_sigma_px <= 0:
            raise ValueError("gaussian_sigma_px must be positive")

    def scaled_to(self, h: int, w: int) -> "AugmentConfig":
        """Rescale the pixel-unit noise parameters from 640x512 to (h, w)."""
        s = math.sqrt((h * w) / (640.0 * 512.0))
        return AugmentConfig(
            p_aug=self.p_aug,
            enable_standard=self.enable_standard,
            enable_block=self.enable_block,
            enable_diffuse=self.enable_diffuse,
            rotation_max_deg=self.rotation_max_deg,
            strauss=StraussParams(
                beta=self.strauss.beta / (s * s),
                gamma=self.strauss.gamma,
                interaction_radius_px=self.strauss.interaction_radius_px * s,
                mcmc_steps=self.strauss.mcmc_steps,
            ),
            disk_radius_range=(self.disk_radius_range[0] * s, self.disk_radius_range[1] * s),
            gaussian_sigma_px=self.gaussian_sigma_px * s,
            saturation_level=self.saturation_level,
        )


@dataclass(frozen=True)
class PointPattern:
    points: tuple[tuple[float, float], ...]   # (row, col)
    window: tuple[int, int]

    def __post_init__(self):
        h, w = self.window
        for y, x in self.points:
            if not (0.0 <= y < h and 0.0 <= x < w):
                raise ValueError(f"point ({y}, {x}) outside window {self.window}")


def sample_strauss(params: StraussParams, window, rng) -> PointPattern:
    """Birth-death Metropolis-Hastings over point configurations.

    Each step proposes a birth or a death with probability 1/2. With the
    Papangelou intensity lam(u; x) = beta * gamma^t(u, x) (t = points of x
    within the interaction radius of u), the acceptance ratios are
    beta*gamma^t*|W|/(n+1) for a birth and n/(beta*gamma^t*|W|) for a death.
    Started from the empty configuration, so gamma = 0 keeps the hard-core
    constraint at every step.
    """
    h, w = window
    area = float(h) * float(w)
    r2 = params.interaction_radius_px ** 2
    pts: list[tuple[float, float]] = []

    for _ in range(params.mcmc_steps):
        if rng.random() < 0.5:
            u = (rng.uniform(0.0, h), rng.uniform(0.0, w))
            t = sum((p[0] - u[0]) ** 2 + (p[1] - u[1]) ** 2 < r2 for p in pts)
            accept = params.beta * params.gamma**t * area / (len(pts) + 1)
            if rng.random() < accept:
                pts.append(u)
        elif pts:
            i = int(rng.integers(len(pts)))
            u = pts[i]
            rest = pts[:i] + pts[i + 1 :]
            t = sum((p[0] - u[0]) ** 2 + (p[1] - u[1]) ** 2 < r2 for p in rest)
            lam = params.beta * params.gamma**t * area
            if lam > 0 and rng.random() < len(pts) / lam:
                pts = rest
    return PointPattern(tuple(pts), (h, w))


def _stamp_disks(pattern: PointPattern, radii) -> np.ndarray:
    h, w = pattern.window
    fld = np.zeros((h, w), dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    for (cy, cx), r in zip(pattern.points, radii):
        y0, y1 = max(0, int(cy - r) - 1), min(h, int(cy + r) + 2)
        x0, x1 = max(0, int(cx - r) - 1), min(w, int(cx + r) + 2)
        box = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2 <= r * r
        fld[y0:y1, x0:x1][box] = 1.0
    return fld


def diffused_noise(img: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    """Add a normalized, Gaussian-smoothed disk field scaled by the saturation level."""
    pattern = sample_strauss(cfg.strauss, img.shape, rng)
    radii = rng.uniform(*cfg.disk_radius_range, size=len(pattern.points))
    if not pattern.points:
        return np.asarray(img, dtype=np.float32).copy()
    fld = gaussian_filter(_stamp_disks(pattern, radii), sigma=cfg.gaussian_sigma_px)
    peak = fld.max()
    if peak <= 0:
        return np.asarray(img, dtype=np.float32).copy()
    fld /= peak
    out = np.clip(img + cfg.saturation_level * fld, 0.0, 1.0)
    return np.maximum(out, img).astype(np.float32)


def block_mask(img: np.ndarray, rng, fill: float = 0.0) -> np.ndarray:
    """Zero out one half of the image (top/bottom/left/right, chosen uniformly)."""
    h, w = img.shape
    out = np.asarray(img, dtype=np.float32).copy()
    half = int(rng.integers(4))
    if half == 0:
        out[: h // 2, :] = fill
    elif half == 1:
        out[h - h // 2 :, :] = fill
    elif half == 2:
        out[:, : w // 2] = fill
    else:
        out[:, w - w // 2 :] = fill
    return out


def apply_geometric(img, mask, angle_deg, flip_h, flip_v):
    """Rotate/flip image (bilinear) and mask (nearest, re-binarized) identically."""
    img = np.asarray(img, dtype=np.float32)
    mask = np.asarray(mask)
    if angle_deg != 0.0:
        img = _nd_rotate(img, angle_deg, reshape=False, order=1, mode="constant", cval=0.0)
        mask = _nd_rotate(mask.astype(np.float32), angle_deg, reshape=False, order=0,
                          mode="constant", cval=0.0)
    if flip_h:
        img, mask = img[:, ::-1], mask[:, ::-1]
    if flip_v:
        img, mask = img[::-1, :], mask[::-1, :]
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    mask = (np.asarray(mask, dtype=np.float32) > 0.5).astype(np.uint8)
    return np.ascontiguousarray(img), np.ascontiguousarray(mask)


def standard_augment(img, mask, cfg: AugmentConfig, rng):
    angle = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    return apply_geometric(img, mask, angle, flip_h, flip_v)


def sample_gates(cfg: AugmentConfig, rng) -> dict[str, bool]:
    """One Bernoulli(p_aug) gate per family; draws happen in a fixed order."""
    u = {name: rng.random() for name in ("standard", "block", "diffuse")}
    return {
        "standard": cfg.enable_standard and u["standard"] < cfg.p_aug,
        "block": cfg.enable_block and u["block"] < cfg.p_aug,
        "diffuse": cfg.enable_diffuse and u["diffuse"] < cfg.p_aug,
    }


def apply(img, mask, cfg: AugmentConfig, rng):
    """Apply every gated family. Only `standard` touches the mask."""
    gates = sample_gates(cfg, rng)
    img = np.asarray(img, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.uint8)
    if gates["standard"]:
        img, mask = standard_augment(img, mask, cfg, rng)
    if gates["block"]:
        img = block_mask(img, rng)
    if gates["diffuse"]:
        img = diffused_noise(img, cfg, rng)
    return img, mask
