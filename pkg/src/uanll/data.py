"""Datasets: synthetic shape images, pair-flip label noise, random resized
crops, normalization, splitting, and CIFAR-10 binary batch ingestion.

All randomness flows through explicit numpy Generators or seeds, so every
dataset and augmentation stream is reproducible from (config, seed).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError

DATASET_MAGIC = b"UDAT0001"
CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 channel-major pixel bytes


@dataclass(frozen=True)
class LabeledImage:
    """Pixel tensor (channels, height, width) with an integer class label."""

    pixels: np.ndarray = field(repr=False)
    label: int

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ShapeError(f"pixels must be (c, h, w), got {self.pixels.shape}")
        self.pixels.setflags(write=False)

    @property
    def n_features(self) -> int:
        return int(self.pixels.size)


@dataclass
class Dataset:
    images: list[LabeledImage]
    num_classes: int
    clean_labels: list[int] | None = None

    def __post_init__(self):
        if self.clean_labels is not None and len(self.clean_labels) != len(self.images):
            raise ShapeError("clean_labels length must match image count")
        for img in self.images:
            if not 0 <= img.label < self.num_classes:
                raise ValueError(f"label {img.label} out of range")

    def __len__(self) -> int:
        return len(self.images)

    def stack(self):
        """Pixels as one (m, c, h, w) array plus an (m,) int label array."""
        x = np.stack([img.pixels for img in self.images])
        labels = np.array([img.label for img in self.images], dtype=np.int64)
        return x, labels

    def subset(self, indices) -> "Dataset":
        clean = None
        if self.clean_labels is not None:
            clean = [self.clean_labels[i] for i in indices]
        return Dataset([self.images[i] for i in indices], self.num_classes, clean)


# ---------------------------------------------------------------------------
# synthetic shape images

N_TEMPLATES = 8


def render_shape(kind: int, side: int, cy: float, cx: float, radius: float) -> np.ndarray:
    """Draw template `kind` on a (side, side) canvas, values in [0, 1].

    Templates come in visually similar pairs: kind 2k+1 is a perturbed
    variant of kind 2k (disk/ring, upright/diagonal cross, two bar phases,
    two checker periods), so pair-flip label noise between neighbours is
    meaningful.
    """
    if not 0 <= kind < N_TEMPLATES:
        raise ConfigError(f"template {kind} not available (have {N_TEMPLATES})")
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    dy, dx = ys - cy, xs - cx
    dist = np.hypot(dy, dx)

    def soft(v):  # 1 px antialiased edge
        return np.clip(v + 0.5, 0.0, 1.0)

    box = soft(radius - np.maximum(np.abs(dy), np.abs(dx)))
    if kind == 0:  # disk
        return soft(radius - dist)
    if kind == 1:  # ring: the disk's hollowed variant
        return soft(0.35 * radius - np.abs(dist - radius * 0.8))
    if kind in (2, 3):  # upright cross and its diagonal variant
        th = 0.3 * radius
        theta = 0.0 if kind == 2 else np.pi / 4.0
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        arm_u = soft(th - np.abs(u)) * soft(radius - np.abs(v))
        arm_v = soft(th - np.abs(v)) * soft(radius - np.abs(u))
        return np.maximum(arm_u, arm_v)
    period = max(2.0, radius * 0.9)
    if kind == 4:  # horizontal bars
        return box * (np.floor(dy / (period / 2.0)) % 2 == 0)
    if kind == 5:  # horizontal bars, shifted phase
        return box * (np.floor((dy + period / 4.0) / (period / 2.0)) % 2 == 0)
    if kind == 6:  # checkerboard
        q = max(2.0, radius * 0.6)
        return box * ((np.floor(dy / q) + np.floor(dx / q)) % 2 == 0)
    # kind == 7: coarser checkerboard
    q = max(2.0, radius * 0.95)
    return box * ((np.floor(dy / q) + np.floor(dx / q)) % 2 == 0)


def gen_synthetic_shapes(
    n_classes: int,
    per_class: int,
    side: int = 16,
    noise_std: float = 0.05,
    seed=0,
    channels: int = 1,
) -> Dataset:
    """Deterministic dataset of jittered shape templates plus pixel noise.

    Class k uses template k at a randomized center/size. The geometry
    stream does not depend on noise_std, so datasets with different noise
    levels share geometry sample by sample.
    """
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    if n_classes > N_TEMPLATES:
        raise ConfigError(f"only {N_TEMPLATES} shape templates available")
    if side < 8:
        raise ConfigError("side must be at least 8 pixels")
    rng = np.random.default_rng(seed)
    jitter = side / 8.0
    images = []
    for kind in range(n_classes):
        for _ in range(per_class):
            cy = side / 2.0 + rng.uniform(-jitter, jitter)
            cx = side / 2.0 + rng.uniform(-jitter, jitter)
            radius = side * rng.uniform(0.24, 0.34)
            canvas = render_shape(kind, side, cy, cx, radius)
            noise = rng.standard_normal((side, side))
            canvas = np.clip(canvas + noise_std * noise, 0.0, 1.0)
            pixels = np.broadcast_to(canvas, (channels, side, side)).copy()
            images.append(LabeledImage(pixels=pixels, label=kind))
    return Dataset(images, n_classes)


# ---------------------------------------------------------------------------
# label noise

@dataclass(frozen=True)
class NoiseSpec:
    """Pair-flip corruption: labels inside each pair swap with probability rate."""

    pairs: tuple
    rate: float
    seed: int
    direction: str = "both"  # "both" or "forward" (first -> second only)

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"noise rate must lie in [0, 1], got {self.rate}")
        if self.direction not in ("both", "forward"):
            raise ConfigError(f"unknown noise direction {self.direction!r}")
        seen = set()
        for pair in self.pairs:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ConfigError(f"invalid class pair {pair}")
            for c in pair:
                if c in seen:
                    raise ConfigError(f"class {c} appears in more than one pair")
                seen.add(c)

    def partner_map(self, n_classes: int) -> dict:
        partners = {}
        for a, b in self.pairs:
            if not (0 <= a < n_classes and 0 <= b < n_classes):
                raise ConfigError(f"pair ({a}, {b}) outside {n_classes} classes")
            partners[a] = b
            if self.direction == "both":
                partners[b] = a
        return partners


def inject_asymmetric_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Flip paired labels with probability rate; pixels are untouched and the
    pre-noise labels are kept in clean_labels."""
    partners = spec.partner_map(ds.num_classes)
    rng = np.random.default_rng(spec.seed)
    clean = list(ds.clean_labels) if ds.clean_labels is not None else [
        img.label for img in ds.images
    ]
    images = []
    for img in ds.images:
        label = img.label
        if label in partners and rng.random() < spec.rate:
            label = partners[img.label]
        images.append(LabeledImage(pixels=img.pixels, label=label) if label != img.label else img)
    return Dataset(images, ds.num_classes, clean)


# ---------------------------------------------------------------------------
# augmentation

def _bilinear_resize(img: np.ndarray, out_side: int) -> np.ndarray:
    """Resize (c, hs, ws) to (c, out, out). Lerp form keeps constant inputs
    bit-identical and never leaves the input value range."""
    c, hs, ws = img.shape
    sr = np.clip((np.arange(out_side) + 0.5) * hs / out_side - 0.5, 0.0, hs - 1.0)
    sc = np.clip((np.arange(out_side) + 0.5) * ws / out_side - 0.5, 0.0, ws - 1.0)
    i0 = np.floor(sr).astype(np.intp)
    j0 = np.floor(sc).astype(np.intp)
    i1 = np.minimum(i0 + 1, hs - 1)
    j1 = np.minimum(j0 + 1, ws - 1)
    wy = (sr - i0)[None, :, None]
    wx = (sc - j0)[None, None, :]
    rows = img[:, i0, :] + wy * (img[:, i1, :] - img[:, i0, :])
    out = rows[:, :, j0] + wx * (rows[:, :, j1] - rows[:, :, j0])
    return np.clip(out, img.min(), img.max())


def _draw_crop_params(rng, side: int, sc: float):
    # one crop consumes exactly three draws regardless of outcome
    frac = rng.uniform(sc, 1.0)
    cs = int(round(side * np.sqrt(frac)))
    cs = min(max(cs, 1), side)
    y0 = int(rng.integers(0, side - cs + 1))
    x0 = int(rng.integers(0, side - cs + 1))
    return cs, y0, x0


def random_resized_crop(img: LabeledImage, sc: float, rng) -> LabeledImage:
    """Square crop with area fraction uniform in [sc, 1] at a uniform
    position, resized back to the original side; the label is unchanged."""
    if not 0.0 < sc <= 1.0:
        raise ValueError(f"crop scale must lie in (0, 1], got {sc}")
    c, h, w = img.pixels.shape
    if h != w:
        raise ShapeError("random_resized_crop expects square images")
    cs, y0, x0 = _draw_crop_params(rng, h, sc)
    if cs == h:
        return img
    crop = img.pixels[:, y0 : y0 + cs, x0 : x0 + cs]
    return LabeledImage(pixels=_bilinear_resize(crop, h), label=img.label)


def crop_batch(x: np.ndarray, sc: float, rng) -> np.ndarray:
    """random_resized_crop applied image by image to an (m, c, h, w) array,
    drawing parameters in index order from one generator."""
    if not 0.0 < sc <= 1.0:
        raise ValueError(f"crop scale must lie in (0, 1], got {sc}")
    m, c, h, w = x.shape
    if h != w:
        raise ShapeError("crop_batch expects square images")
    out = np.empty_like(x)
    for i in range(m):
        cs, y0, x0 = _draw_crop_params(rng, h, sc)
        if cs == h:
            out[i] = x[i]
        else:
            out[i] = _bilinear_resize(x[i, :, y0 : y0 + cs, x0 : x0 + cs], h)
    return out


def crop_views(pixels: np.ndarray, n: int, sc: float, seed, sample_index: int) -> np.ndarray:
    """n independently cropped views of one (c, h, w) image, vectorized.

    View j draws from its own substream seeded by (seed, sample_index, j),
    so any (sample, view) cell can be regenerated in isolation; view j
    equals random_resized_crop under the same substream.
    """
    if n < 1:
        raise ValueError("need at least one view")
    if not 0.0 < sc <= 1.0:
        raise ValueError(f"crop scale must lie in (0, 1], got {sc}")
    c, h, w = pixels.shape
    if h != w:
        raise ShapeError("crop_views expects square images")
    cs = np.empty(n, dtype=np.intp)
    y0 = np.empty(n, dtype=np.intp)
    x0 = np.empty(n, dtype=np.intp)
    for j in range(n):
        rng = np.random.default_rng([seed, sample_index, j])
        cs[j], y0[j], x0[j] = _draw_crop_params(rng, h, sc)

    # absolute source coordinates per view: offset + (o + 0.5) * cs/h - 0.5
    o = np.arange(h, dtype=np.float64)
    rel = (o[None, :] + 0.5) * (cs[:, None] / h) - 0.5
    rel = np.clip(rel, 0.0, (cs - 1)[:, None].astype(np.float64))
    sr = y0[:, None] + rel
    scol = x0[:, None] + rel
    i0 = np.floor(sr).astype(np.intp)
    i1 = np.minimum(i0 + 1, (y0 + cs - 1)[:, None])
    j0 = np.floor(scol).astype(np.intp)
    j1 = np.minimum(j0 + 1, (x0 + cs - 1)[:, None])
    wy = (sr - i0)[None, :, :, None]  # (1, n, h, 1)
    wx = (scol - j0)[None, :, None, :]  # (1, n, 1, h)

    a0 = pixels[:, i0, :]  # (c, n, h, w)
    a1 = pixels[:, i1, :]
    rows = a0 + wy * (a1 - a0)
    j0e = np.broadcast_to(j0[None, :, None, :], rows.shape[:3] + (h,))
    j1e = np.broadcast_to(j1[None, :, None, :], rows.shape[:3] + (h,))
    r0 = np.take_along_axis(rows, j0e, axis=3)
    r1 = np.take_along_axis(rows, j1e, axis=3)
    out = r0 + wx * (r1 - r0)
    out = np.clip(out, pixels.min(), pixels.max())
    return out.transpose(1, 0, 2, 3)  # (n, c, h, w)


# ---------------------------------------------------------------------------
# normalization and splitting

def compute_channel_stats(ds: Dataset):
    """Per-channel mean and population std over every pixel; std floored at
    1e-8 so constant channels stay usable."""
    x, _ = ds.stack()
    means = x.mean(axis=(0, 2, 3))
    stds = np.maximum(x.std(axis=(0, 2, 3)), 1e-8)
    return means, stds


def normalize(ds: Dataset, means, stds) -> Dataset:
    """Per-channel (x - mean) / std."""
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    if np.any(stds <= 0):
        raise ValueError("stds must be strictly positive")
    images = [
        LabeledImage(
            pixels=(img.pixels - means[:, None, None]) / stds[:, None, None],
            label=img.label,
        )
        for img in ds.images
    ]
    return Dataset(images, ds.num_classes, ds.clean_labels)


def denormalize(ds: Dataset, means, stds) -> Dataset:
    """Inverse of normalize."""
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    images = [
        LabeledImage(
            pixels=img.pixels * stds[:, None, None] + means[:, None, None],
            label=img.label,
        )
        for img in ds.images
    ]
    return Dataset(images, ds.num_classes, ds.clean_labels)


def split_dataset(ds: Dataset, sizes, seed):
    """Shuffle deterministically and partition into train/val/test."""
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise ConfigError("sizes must be three non-negative counts")
    if sum(sizes) > len(ds):
        raise ConfigError(f"requested {sum(sizes)} samples from {len(ds)}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    bounds = np.cumsum([0] + list(sizes))
    return tuple(
        ds.subset(perm[bounds[i] : bounds[i + 1]].tolist()) for i in range(3)
    )


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches

def parse_cifar10_batch(data: bytes) -> Dataset:
    """Decode CIFAR-10 binary records: 1 label byte then 3072 channel-major
    pixel bytes per record; pixels scaled to [0, 1]."""
    if len(data) % CIFAR_RECORD != 0:
        raise FormatError(
            f"length {len(data)} is not a multiple of {CIFAR_RECORD}-byte records"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    images = []
    for rec in raw:
        label = int(rec[0])
        if label > 9:
            raise FormatError(f"label byte {label} exceeds 9")
        pixels = rec[1:].astype(np.float64).reshape(3, 32, 32) / 255.0
        images.append(LabeledImage(pixels=pixels, label=label))
    return Dataset(images, 10)


def write_cifar10_batch(ds: Dataset) -> bytes:
    """Inverse of parse_cifar10_batch (pixels rounded back to bytes)."""
    out = bytearray()
    for img in ds.images:
        if img.pixels.shape != (3, 32, 32):
            raise ShapeError("CIFAR records must be (3, 32, 32)")
        out.append(img.label)
        out.extend(np.round(img.pixels * 255.0).astype(np.uint8).tobytes())
    return bytes(out)


# ---------------------------------------------------------------------------
# dataset container file

def save_dataset(ds: Dataset, path) -> None:
    """Cache a dataset: shape header, u32 labels, optional u32 clean labels,
    then raw little-endian float64 pixels."""
    if ds.images:
        c, h, w = ds.images[0].pixels.shape
    else:
        c = h = w = 0
    labels = np.array([img.label for img in ds.images], dtype="<u4")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        has_clean = int(ds.clean_labels is not None)
        f.write(struct.pack("<6I", len(ds), c, h, w, ds.num_classes, has_clean))
        f.write(labels.tobytes())
        if has_clean:
            f.write(np.array(ds.clean_labels, dtype="<u4").tobytes())
        for img in ds.images:
            if img.pixels.shape != (c, h, w):
                raise ShapeError("all images must share one shape")
            f.write(np.ascontiguousarray(img.pixels, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != DATASET_MAGIC:
        raise FormatError("bad dataset magic")
    if len(data) < 8 + 24:
        raise FormatError("truncated dataset header")
    count, c, h, w, num_classes, has_clean = struct.unpack_from("<6I", data, 8)
    off = 32
    need = count * 4 * (1 + has_clean) + count * c * h * w * 8
    if len(data) != off + need:
        raise FormatError("dataset payload size mismatch")
    labels = np.frombuffer(data, dtype="<u4", count=count, offset=off)
    off += count * 4
    clean = None
    if has_clean:
        clean = np.frombuffer(data, dtype="<u4", count=count, offset=off).tolist()
        off += count * 4
    images = []
    per = c * h * w
    for i in range(count):
        pix = np.frombuffer(data, dtype="<f8", count=per, offset=off + i * per * 8)
        images.append(
            LabeledImage(pixels=pix.reshape(c, h, w).astype(np.float64), label=int(labels[i]))
        )
    return Dataset(images, num_classes, clean)
