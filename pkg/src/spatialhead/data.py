"""Datasets, augmentation, preprocessing and batching.

Images are float arrays [h, w, channels] on the 0-255 scale. Geometric
transforms sample bilinearly and repeat the nearest edge pixel outside the
image (``scipy.ndimage.affine_transform`` with ``order=1, mode="nearest"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, ShapeError
from .pnm import PNM_SUFFIXES, read_image, write_image
from .tensor import Tensor, resolve_dtype

IMAGE_SUFFIXES = PNM_SUFFIXES | {".png", ".jpg", ".jpeg", ".bmp"}
CAFFE_MEAN_BGR = np.array([103.939, 116.779, 123.68])


@dataclass
class Dataset:
    samples: list[tuple[np.ndarray, int]]
    class_names: list[str]
    split: str = "train"
    sources: list[str] = field(default_factory=list)

    def __post_init__(self):
        k = len(self.class_names)
        for _, label in self.samples:
            if not 0 <= label < k:
                raise DataError(f"label {label} outside [0, {k})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.samples], dtype=np.int64)


def resize_bilinear(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    width = height if width is None else width
    h, w, c = img.shape
    if (h, w) == (height, width):
        return img.copy()
    sy, sx = h / height, w / width
    # pixel centres aligned: src = (dst + 0.5) * scale - 0.5
    out = np.empty((height, width, c), dtype=np.float64)
    for ch in range(c):
        out[:, :, ch] = ndimage.affine_transform(
            img[:, :, ch].astype(np.float64),
            np.diag([sy, sx]),
            offset=(0.5 * sy - 0.5, 0.5 * sx - 0.5),
            output_shape=(height, width),
            order=1,
            mode="nearest",
        )
    return out


def load_dataset(root, image_side: int, split: str = "train", rescale: float = 1.0) -> Dataset:
    """Read ``root/<class>/<image>``; classes sorted by directory name."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"no class directories under {root}")
    samples, sources = [], []
    for label, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"class directory {d} has no images")
        for f in files:
            img = read_image(f)
            samples.append((resize_bilinear(img, image_side) * rescale, label))
            sources.append(str(f))
    return Dataset(samples, [d.name for d in class_dirs], split, sources)


def write_dataset(ds: Dataset, root, scale: float = 255.0) -> list[Path]:
    """Materialise ``ds`` as ``root/<class>/<index>.pgm|.ppm`` (values clipped to 0-255)."""
    root = Path(root)
    written = []
    for i, (img, label) in enumerate(ds.samples):
        d = root / ds.class_names[label]
        d.mkdir(parents=True, exist_ok=True)
        ext = ".pgm" if img.shape[2] == 1 else ".ppm"
        path = d / f"{i:05d}{ext}"
        write_image(path, np.rint(img * scale))
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    vflip: bool = True
    zoom_frac: float = 0.20
    rotation_deg: float = 360.0
    width_shift_frac: float = 0.10
    height_shift_frac: float = 0.10
    channel_shift: float = 50.0
    brightness_range: tuple[float, float] | None = (0.0, 1.2)
    preprocess: str = "caffe"

    def __post_init__(self):
        for name in ("zoom_frac", "width_shift_frac", "height_shift_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.rotation_deg < 0 or self.channel_shift < 0:
            raise ConfigError("rotation_deg and channel_shift must be >= 0")
        if self.brightness_range is not None:
            lo, hi = self.brightness_range
            if lo < 0 or hi < lo:
                raise ConfigError(f"bad brightness_range {self.brightness_range}")
        if self.preprocess not in ("caffe", "none"):
            raise ConfigError(f"preprocess must be caffe or none, got {self.preprocess!r}")

    @classmethod
    def disabled(cls, preprocess: str = "none") -> "AugmentConfig":
        return cls(False, False, 0.0, 0.0, 0.0, 0.0, 0.0, None, preprocess)

    @property
    def geometric(self) -> bool:
        return bool(self.rotation_deg or self.zoom_frac or self.width_shift_frac or self.height_shift_frac)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1, :].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    return img[::-1, :, :].copy()


def affine_warp(img: np.ndarray, angle_deg: float = 0.0, zoom: float = 1.0, shift_xy=(0.0, 0.0)) -> np.ndarray:
    """Rotate (counter-clockwise on screen) and zoom about the centre, then translate.

    ``zoom > 1`` magnifies. Output pixel o samples input at
    ``R(-angle) (o - c - shift) / zoom + c``.
    """
    h, w, c = img.shape
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    # (row, col) coordinates; row axis points down, so a screen-CCW rotation
    # maps to this matrix in (row, col) order
    inv = np.array([[cos, sin], [-sin, cos]]) / zoom
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([shift_xy[1], shift_xy[0]], dtype=np.float64)
    offset = centre - inv @ (centre + shift)
    out = np.empty_like(img, dtype=np.float64)
    for ch in range(c):
        out[:, :, ch] = ndimage.affine_transform(
            img[:, :, ch].astype(np.float64), inv, offset=offset, order=1, mode="nearest"
        )
    return out


def rotate(img: np.ndarray, angle_deg: float) -> np.ndarray:
    return affine_warp(img, angle_deg=angle_deg)


def caffe_preprocess(img) -> np.ndarray:
    """RGB (0-255) -> BGR with ImageNet channel means subtracted, no scaling."""
    a = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if a.ndim < 1 or a.shape[-1] != 3:
        raise ShapeError(f"caffe preprocessing needs 3 channels, got shape {a.shape}")
    return a[..., ::-1] - CAFFE_MEAN_BGR.astype(a.dtype)


def preprocess(img: np.ndarray, mode: str) -> np.ndarray:
    if mode == "caffe":
        return caffe_preprocess(img)
    if mode == "none":
        return img
    raise ConfigError(f"unknown preprocess {mode!r}")


def augment(img, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Randomly transformed copy of ``img`` followed by preprocessing.

    Order: flips, rotation/zoom/shift (one warp), channel shift, brightness,
    preprocessing. Disabled steps draw nothing from ``rng``.
    """
    out = img.data if isinstance(img, Tensor) else np.asarray(img)
    h, w, c = out.shape
    if cfg.hflip and rng.random() < 0.5:
        out = hflip(out)
    if cfg.vflip and rng.random() < 0.5:
        out = vflip(out)
    if cfg.geometric:
        angle = rng.uniform(0.0, cfg.rotation_deg) if cfg.rotation_deg else 0.0
        zoom = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac) if cfg.zoom_frac else 1.0
        dx = rng.uniform(-cfg.width_shift_frac, cfg.width_shift_frac) * w if cfg.width_shift_frac else 0.0
        dy = rng.uniform(-cfg.height_shift_frac, cfg.height_shift_frac) * h if cfg.height_shift_frac else 0.0
        out = affine_warp(out, angle, max(zoom, 1e-6), (dx, dy))
    if cfg.channel_shift:
        out = out + rng.uniform(-cfg.channel_shift, cfg.channel_shift, size=c)
    if cfg.brightness_range is not None:
        out = out * rng.uniform(*cfg.brightness_range)
    return preprocess(out, cfg.preprocess)


# ---------------------------------------------------------------------------
# synthetic position tasks


def quadrant_cells(grid: int, q: int) -> list[tuple[int, int]]:
    """Cells strictly inside quadrant q (0 TL, 1 TR, 2 BL, 3 BR); an odd grid's middle line is unused."""
    half = grid // 2
    low, high = range(0, half), range((grid + 1) // 2, grid)
    rows = low if q in (0, 1) else high
    cols = low if q in (0, 2) else high
    return [(r, c) for r in rows for c in cols]


def synth_position_dataset(
    grid: int,
    classes: str,
    n_per_class: int,
    noise_std: float,
    rng: np.random.Generator,
    split: str = "train",
    channels: int = 1,
) -> Dataset:
    """One-hot spatial maps [grid, grid, channels] whose class is a position.

    ``per_cell``: class = cell index (grid**2 classes). ``quadrant``: class =
    quadrant (4 classes). Every noiseless map has the same spatial mean
    ``1 / grid**2``, so a global average carries no class information.
    With ``channels > 1`` the map is repeated in every channel.
    """
    if grid < 2:
        raise ConfigError("grid must be >= 2")
    if channels < 1:
        raise ConfigError("channels must be >= 1")
    if classes == "per_cell":
        cell_sets = [[(i // grid, i % grid)] for i in range(grid * grid)]
        names = [f"cell{i:03d}" for i in range(grid * grid)]
    elif classes == "quadrant":
        cell_sets = [quadrant_cells(grid, q) for q in range(4)]
        names = ["q0_top_left", "q1_top_right", "q2_bottom_left", "q3_bottom_right"]
    else:
        raise ConfigError(f"classes must be per_cell or quadrant, got {classes!r}")
    samples = []
    for label, cells in enumerate(cell_sets):
        for _ in range(n_per_class):
            r, c = cells[int(rng.integers(len(cells)))]
            m = np.zeros((grid, grid, channels))
            m[r, c, :] = 1.0
            if noise_std > 0:
                m = m + rng.normal(0.0, noise_std, size=m.shape)
            samples.append((m, label))
    return Dataset(samples, names, split)


# ---------------------------------------------------------------------------
# batching


def batches(
    ds: Dataset,
    batch_size: int,
    shuffle_seed: int | None,
    epoch: int = 0,
    transform=None,
    precision="float32",
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Seeded per-epoch shuffle; the last partial batch is kept.

    ``transform(img, sample_index)`` is applied per sample when given.
    ``shuffle_seed=None`` keeps dataset order.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    dtype = resolve_dtype(precision)
    n = len(ds)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng([shuffle_seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        imgs = []
        for i in idx:
            img = ds.samples[i][0]
            imgs.append(transform(img, int(i)) if transform is not None else img)
        labels = np.array([ds.samples[i][1] for i in idx], dtype=np.int64)
        yield Tensor(np.stack(imgs), dtype), labels


def stack_all(ds: Dataset, precision="float32", transform=None) -> tuple[Tensor, np.ndarray]:
    imgs = [transform(img, i) if transform else img for i, (img, _) in enumerate(ds.samples)]
    return Tensor(np.stack(imgs), resolve_dtype(precision)), ds.labels


def check_channels(ds: Dataset, channels: int) -> None:
    for img, _ in ds.samples:
        if img.shape[2] != channels:
            raise DataError(f"expected {channels}-channel images, found shape {img.shape}")


def class_counts(ds: Dataset) -> Sequence[int]:
    return np.bincount(ds.labels, minlength=ds.num_classes).tolist()
