"""Dataset loading, synthetic lung phantoms, and train/val/test splitting.

Images are 2-D float32 arrays with intensities in [0, 1]; masks are 2-D uint8
arrays over {0, 1}. On-disk layout is ``<root>/images/<id>.png`` plus
``<root>/masks/<id>.png`` (images 8- or 16-bit grayscale PNG, masks 8-bit
with nonzero = foreground).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter


def check_image(pixels: np.ndarray) -> None:
    """Raise ValueError unless `pixels` is a valid grayscale image."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {pixels.shape}")
    if pixels.shape[0] < 8 or pixels.shape[1] < 8:
        raise ValueError(f"image must be at least 8x8, got {pixels.shape}")
    if not np.isfinite(pixels).all():
        raise ValueError("image contains non-finite values")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")


def check_mask(pixels: np.ndarray, image: np.ndarray | None = None) -> None:
    """Raise ValueError unless `pixels` is a valid binary mask (paired with `image` if given)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {pixels.shape}")
    if not np.isin(pixels, (0, 1)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    if image is not None and pixels.shape != np.asarray(image).shape:
        raise ValueError(
            f"mask shape {pixels.shape} does not match image shape {np.asarray(image).shape}"
        )


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    mask: np.ndarray
    id: str


@dataclass(frozen=True)
class Dataset:
    items: tuple[Sample, ...]
    split_tag: str = "train"

    def __post_init__(self):
        ids = [s.id for s in self.items]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate sample ids: {dupes}")
        for s in self.items:
            if s.image.shape != s.mask.shape:
                raise ValueError(
                    f"sample {s.id!r}: image {s.image.shape} vs mask {s.mask.shape}"
                )

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass(frozen=True)
class EllipseParams:
    """Axis-aligned-then-rotated ellipse in (row, col) pixel coordinates."""

    center: tuple[float, float]   # (row, col)
    semi_axes: tuple[float, float]  # (row semi-axis, col semi-axis)
    rotation: float = 0.0           # radians


@dataclass(frozen=True)
class PhantomSpec:
    canvas: tuple[int, int]
    lung_ellipses: tuple[EllipseParams, EllipseParams]
    background_texture_seed: int
    occlusion: dict | None = field(default=None)

    def __post_init__(self):
        h, w = self.canvas
        for e in self.lung_ellipses:
            ry, rx = e.semi_axes
            if ry <= 0 or rx <= 0:
                raise ValueError("ellipse semi-axes must be strictly positive")
            # half-extents of the rotated ellipse's bounding box
            ey = math.sqrt((ry * math.cos(e.rotation)) ** 2 + (rx * math.sin(e.rotation)) ** 2)
            ex = math.sqrt((ry * math.sin(e.rotation)) ** 2 + (rx * math.cos(e.rotation)) ** 2)
            cy, cx = e.center
            if cy - ey < 0 or cy + ey > h - 1 or cx - ex < 0 or cx + ex > w - 1:
                raise ValueError(f"ellipse {e} does not lie fully inside canvas {self.canvas}")


def _ellipse_rho(shape, ellipse: EllipseParams) -> np.ndarray:
    """Normalized elliptical radius: rho <= 1 exactly on the interior."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = ellipse.center
    ry, rx = ellipse.semi_axes
    c, s = math.cos(ellipse.rotation), math.sin(ellipse.rotation)
    u = (yy - cy) * c + (xx - cx) * s
    v = -(yy - cy) * s + (xx - cx) * c
    return np.sqrt((u / ry) ** 2 + (v / rx) ** 2)


def ellipse_interior(shape, ellipse: EllipseParams) -> np.ndarray:
    return _ellipse_rho(shape, ellipse) <= 1.0


def phantom_mask(spec: PhantomSpec) -> np.ndarray:
    """Union of the two lung-ellipse interiors; never affected by occlusion."""
    m = np.zeros(spec.canvas, dtype=bool)
    for e in spec.lung_ellipses:
        m |= ellipse_interior(spec.canvas, e)
    return m.astype(np.uint8)


def _smooth_field(rng, shape, sigma, amplitude):
    f = gaussian_filter(rng.normal(0.0, 1.0, shape), sigma=sigma)
    peak = np.abs(f).max()
    if peak > 0:
        f *= amplitude / peak
    return f


def sample_phantom_spec(canvas, rng, occluded: bool) -> PhantomSpec:
    """Draw a random phantom geometry.

    Lung centers share a common body offset so the position of an occluded
    lung stays inferable from the visible one.
    """
    h, w = canvas
    dy = rng.uniform(-0.030, 0.030) * h
    dx = rng.uniform(-0.030, 0.030) * w
    lungs = []
    for side, cx_frac in (("left", 0.30), ("right", 0.70)):
        cy = 0.52 * h + dy + rng.uniform(-1.5, 1.5) * h / 128.0
        cx = cx_frac * w + dx + rng.uniform(-1.5, 1.5) * w / 128.0
        ry = rng.uniform(0.235, 0.280) * h
        rx = rng.uniform(0.125, 0.150) * w
        tilt = rng.uniform(0.02, 0.12)
        rot = -tilt if side == "left" else tilt
        lungs.append(EllipseParams((cy, cx), (ry, rx), rot))
    occlusion = None
    if occluded:
        occlusion = {
            "side": int(rng.integers(0, 2)),          # 0 = left lung, 1 = right lung
            "level_shift": float(rng.uniform(0.0, 0.04)),
        }
    else:
        # keep the rng stream identical whether or not occlusion is applied
        rng.integers(0, 2)
        rng.uniform(0.0, 0.04)
    return PhantomSpec(
        canvas=canvas,
        lung_ellipses=(lungs[0], lungs[1]),
        background_texture_seed=int(rng.integers(0, 2**31 - 1)),
        occlusion=occlusion,
    )


def render_phantom(spec: PhantomSpec) -> np.ndarray:
    """Render a phantom image: dark lungs, textured background, bright mediastinum."""
    h, w = spec.canvas
    rng = np.random.default_rng(spec.background_texture_seed)

    texture = _smooth_field(rng, (h, w), sigma=h / 16.0, amplitude=0.05)
    background = 0.62 + texture
    # bright mediastinum ridge between the lungs
    xx = np.arange(w, dtype=np.float64)[None, :]
    cx_m = 0.5 * (spec.lung_ellipses[0].center[1] + spec.lung_ellipses[1].center[1])
    background = background + 0.22 * np.exp(-(((xx - cx_m) / (0.085 * w)) ** 2))

    img = background.copy()
    for e in spec.lung_ellipses:
        rho = _ellipse_rho((h, w), e)
        # crisp edge: ~1 px ramp so the visible boundary matches the label
        edge = np.clip((1.02 - rho) / 0.06, 0.0, 1.0)
        level = rng.uniform(0.25, 0.31)
        lung_tex = _smooth_field(rng, (h, w), sigma=h / 24.0, amplitude=0.03)
        img = img * (1.0 - edge) + edge * (level + lung_tex)

    if spec.occlusion is not None:
        e = spec.lung_ellipses[spec.occlusion["side"]]
        rho = _ellipse_rho((h, w), e)
        # smooth window: 1 on the whole interior, cosine rolloff outside (no rim cue)
        win = np.where(
            rho <= 1.0,
            1.0,
            np.where(rho >= 1.45, 0.0, 0.5 * (1.0 + np.cos(np.pi * (rho - 1.0) / 0.45))),
        )
        target = background + spec.occlusion["level_shift"]
        img = img * (1.0 - win) + win * target

    img = np.clip(img, 0.0, 1.0)
    # snap to the 16-bit grid so save/load round-trips are exact
    img = np.round(img * 65535.0) / 65535.0
    return img.astype(np.float32)


def generate_phantoms(n, canvas, occluded_fraction, seed) -> Dataset:
    """Generate `n` phantom image/mask pairs, deterministic in `seed`.

    The first ``round(n * occluded_fraction)`` images get one lung blended
    into the background; the mask always covers both full ellipses.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= occluded_fraction <= 1.0:
        raise ValueError(f"occluded_fraction must be in [0, 1], got {occluded_fraction}")
    n_occluded = int(round(n * occluded_fraction))
    items = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        spec = sample_phantom_spec(canvas, rng, occluded=i < n_occluded)
        items.append(Sample(render_phantom(spec), phantom_mask(spec), f"phantom_{i:04d}"))
    return Dataset(tuple(items), split_tag="train")


def _read_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except Exception as exc:
        raise ValueError(f"unreadable image file {path}: {exc}") from exc
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    # 16-bit PNGs decode as uint16 or int32 depending on the PIL mode
    return arr.astype(np.float32) / 65535.0


def load_dataset(root_path, split_tag="train") -> Dataset:
    """Load all image/mask pairs under `root_path` (see module docstring for layout)."""
    root = Path(root_path)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"no images directory under {root}")
    img_files = sorted(img_dir.glob("*.png"))
    if not img_files:
        raise ValueError(f"no PNG images found in {img_dir}")
    orphans = [p.stem for p in img_files if not (mask_dir / p.name).exists()]
    if orphans:
        raise ValueError(f"images without masks: {', '.join(orphans)}")
    items = []
    for p in img_files:
        image = _read_gray(p)
        mask = (_read_gray(mask_dir / p.name) > 0.5).astype(np.uint8)
        check_image(image)
        items.append(Sample(image, mask, p.stem))
    return Dataset(tuple(items), split_tag=split_tag)


def save_dataset(ds: Dataset, root_path) -> None:
    """Write `ds` as 16-bit image PNGs and 8-bit {0,255} mask PNGs."""
    root = Path(root_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in ds:
        img16 = np.round(np.asarray(s.image, dtype=np.float64) * 65535.0).astype(np.uint16)
        Image.fromarray(img16).save(root / "images" / f"{s.id}.png")
        Image.fromarray((s.mask * 255).astype(np.uint8), mode="L").save(
            root / "masks" / f"{s.id}.png"
        )


def split_dataset(ds: Dataset, fractions, seed):
    """Shuffle and split into (train, val) by the given fractions."""
    f_train, f_val = fractions
    if f_train <= 0 or f_val <= 0:
        raise ValueError("split fractions must be positive")
    if f_train + f_val > 1.0 + 1e-9:
        raise ValueError(f"split fractions sum to {f_train + f_val} > 1")
    order = np.random.default_rng(seed).permutation(len(ds.items))
    n_train = int(f_train * len(ds.items))
    n_val = int(f_val * len(ds.items))
    train = tuple(ds.items[i] for i in order[:n_train])
    val = tuple(ds.items[i] for i in order[n_train : n_train + n_val])
    return Dataset(train, "train"), Dataset(val, "val")
