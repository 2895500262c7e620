"""Synthetic landmark images, semi-supervised splits and the HVDS file format.

Each record is a ``W x W`` image made of isotropic Gaussian bumps, one per
landmark, together with the landmark coordinates normalized to ``[0, 1]``
(label vector ``(x0, y0, x1, y1, ...)``).  Landmarks 0 and 1 are the eye pair
used for interocular normalization.

In depth mode the image is a tilted background plane plus the bumps, and some
pixels are marked unobserved: everything closer than a range cutoff and,
with probability one half, a random rectangle.  Unobserved values are stored
as 0.

HVDS layout (little endian)::

    b"HVDS" | u32 version | u32 W | u32 K | u32 flags | u64 n | u64 m | u64 t
    f64 labeled_d[n*W*W] | f64 labeled_h[n*2K] | f64 unlabeled_d[m*W*W]
    f64 test_d[t*W*W]    | f64 test_h[t*2K]
    (flags bit0) packed labeled mask | packed unlabeled mask | packed test mask

Masks are packed with :func:`numpy.packbits` (little bit order), one byte
string per set.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .depth import MaskedImage

MAGIC = b"HVDS"
VERSION = 1
FLAG_DEPTH = 1
_HEADER = struct.Struct("<4sIIIIQQQ")

MAX_RETRIES = 100
RANGE_CUTOFF = 0.1


class FormatError(ValueError):
    """Base class for HVDS/HVCK decoding failures."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    image_side: int = 16
    num_landmarks: int = 4
    blob_std: float = 1.0
    noise_std: float = 0.05
    jitter_std: float = 0.02
    depth_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.image_side < 1:
            raise ValueError(f"image_side must be positive, got {self.image_side}")
        if self.num_landmarks < 2:
            raise ValueError(f"need at least two landmarks (the eye pair), got {self.num_landmarks}")
        if self.blob_std <= 0:
            raise ValueError(f"blob_std must be positive, got {self.blob_std}")
        if self.noise_std < 0 or self.jitter_std < 0:
            raise ValueError("noise_std and jitter_std must be non-negative")

    @property
    def d_dim(self) -> int:
        return self.image_side**2

    @property
    def h_dim(self) -> int:
        return 2 * self.num_landmarks


@dataclass
class Records:
    images: np.ndarray
    labels: np.ndarray
    masks: np.ndarray | None = None
    config: SceneConfig | None = None

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i], self.labels[i]


def base_shape(k: int) -> np.ndarray:
    """Canonical landmark layout: an eye pair, the rest along a lower arc.

    Spacing keeps every pair at least ~3 pixels apart on a 16 pixel frame at
    the smallest scale, so neighbouring bumps do not merge.
    """
    pts = [(0.3, 0.3), (0.7, 0.3)]
    rest = k - 2
    thetas = [math.pi / 2] if rest == 1 else np.linspace(math.pi / 6, 5 * math.pi / 6, rest)
    for theta in thetas[:rest]:
        pts.append((0.5 + 0.3 * math.cos(theta), 0.5 + 0.22 * math.sin(theta)))
    return np.array(pts, dtype=np.float64)


def pixel_centers(side: int) -> tuple:
    c = (np.arange(side) + 0.5) / side
    xs, ys = np.meshgrid(c, c)  # row index is y
    return xs.reshape(-1), ys.reshape(-1)


def render(landmarks: np.ndarray, side: int, blob_std: float) -> np.ndarray:
    """Sum of unit-height Gaussian bumps; ``blob_std`` is in pixels."""
    xs, ys = pixel_centers(side)
    dx = (xs[:, None] - landmarks[None, :, 0]) * side
    dy = (ys[:, None] - landmarks[None, :, 1]) * side
    return np.exp(-(dx**2 + dy**2) / (2.0 * blob_std**2)).sum(axis=1)


def _draw_landmarks(rng: np.random.Generator, cfg: SceneConfig, base: np.ndarray) -> np.ndarray:
    for _ in range(MAX_RETRIES):
        scale = rng.uniform(0.75, 1.25)
        angle = rng.uniform(-0.35, 0.35)
        shift = rng.uniform(-0.12, 0.12, size=2)
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        pts = 0.5 + scale * (base - 0.5) @ rot.T + shift
        pts = pts + cfg.jitter_std * rng.standard_normal(pts.shape)
        if np.all((pts >= 0.0) & (pts <= 1.0)):
            return pts
    raise RuntimeError(f"could not place landmarks inside the frame after {MAX_RETRIES} attempts")


def _depth_mask(rng: np.random.Generator, depth: np.ndarray, side: int) -> np.ndarray:
    observed = depth >= RANGE_CUTOFF
    if rng.uniform() < 0.5:
        h, w = rng.integers(2, max(3, side // 3) + 1, size=2)
        r0 = rng.integers(0, side - h + 1)
        c0 = rng.integers(0, side - w + 1)
        grid = observed.reshape(side, side)
        grid[r0 : r0 + h, c0 : c0 + w] = False
        observed = grid.reshape(-1)
    return observed


def generate(config: SceneConfig, count: int) -> Records:
    """Draw ``count`` records; identical output for identical (config, count)."""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    rng = np.random.default_rng(config.seed)
    side, k = config.image_side, config.num_landmarks
    base = base_shape(k)
    xs, ys = pixel_centers(side)
    images = np.empty((count, side * side))
    labels = np.empty((count, 2 * k))
    masks = np.empty((count, side * side), dtype=bool) if config.depth_mode else None
    for i in range(count):
        pts = _draw_landmarks(rng, config, base)
        img = render(pts, side, config.blob_std)
        if config.depth_mode:
            tilt = rng.uniform(-0.4, 0.4, size=2)
            img = img + 0.2 + tilt[0] * (xs - 0.5) + tilt[1] * (ys - 0.5)
            observed = _depth_mask(rng, img, side)
        if config.noise_std > 0:
            img = img + config.noise_std * rng.standard_normal(img.shape)
        if config.depth_mode:
            img = np.where(observed, img, 0.0)
            masks[i] = observed
        images[i] = img
        labels[i] = pts.reshape(-1)
    return Records(images, labels, masks, config)


@dataclass
class SemiDataset:
    """Labeled pairs, unlabeled images and a labeled test set."""

    labeled_d: np.ndarray
    labeled_h: np.ndarray
    unlabeled_d: np.ndarray
    test_d: np.ndarray
    test_h: np.ndarray
    config: SceneConfig = field(default_factory=SceneConfig)
    labeled_mask: np.ndarray | None = None
    unlabeled_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    source_index: dict | None = None

    @property
    def n(self) -> int:
        return len(self.labeled_d)

    @property
    def m(self) -> int:
        return len(self.unlabeled_d)

    @property
    def t(self) -> int:
        return len(self.test_d)

    @property
    def depth_mode(self) -> bool:
        return self.config.depth_mode

    @property
    def d_dim(self) -> int:
        return self.config.d_dim

    @property
    def h_dim(self) -> int:
        return self.config.h_dim

    def _images(self, values, mask, index):
        if index is not None:
            values = values[index]
            mask = None if mask is None else mask[index]
        return MaskedImage(values, mask) if self.depth_mode else values

    def labeled(self, index=None) -> tuple:
        h = self.labeled_h if index is None else self.labeled_h[index]
        return self._images(self.labeled_d, self.labeled_mask, index), h

    def unlabeled(self, index=None):
        return self._images(self.unlabeled_d, self.unlabeled_mask, index)

    def test(self, index=None) -> tuple:
        h = self.test_h if index is None else self.test_h[index]
        return self._images(self.test_d, self.test_mask, index), h

    def subset(self, n: int | None = None, m: int | None = None) -> "SemiDataset":
        """Leading ``n`` labeled and ``m`` unlabeled records, same test set."""
        n = self.n if n is None else n
        m = self.m if m is None else m
        if n > self.n or m > self.m:
            raise ValueError(f"subset ({n}, {m}) exceeds available ({self.n}, {self.m})")
        return SemiDataset(
            self.labeled_d[:n],
            self.labeled_h[:n],
            self.unlabeled_d[:m],
            self.test_d,
            self.test_h,
            self.config,
            None if self.labeled_mask is None else self.labeled_mask[:n],
            None if self.unlabeled_mask is None else self.unlabeled_mask[:m],
            self.test_mask,
        )


def split(records: Records, n: int, m: int, t: int, seed: int) -> SemiDataset:
    """Shuffle, then take ``n`` labeled, ``m`` unlabeled and ``t`` test records."""
    if min(n, m, t) < 0 or t < 1:
        raise ValueError(f"invalid split counts n={n}, m={m}, t={t} (t must be >= 1)")
    need = n + m + t
    if need > len(records):
        raise ValueError(f"split needs {need} records but only {len(records)} are available")
    perm = np.random.default_rng(seed).permutation(len(records))
    li, ui, ti = perm[:n], perm[n : n + m], perm[n + m : need]
    masks = records.masks
    config = records.config
    if config is None:
        side = int(round(math.sqrt(records.images.shape[1])))
        config = SceneConfig(
            image_side=side, num_landmarks=records.labels.shape[1] // 2, depth_mode=masks is not None
        )
    return SemiDataset(
        records.images[li],
        records.labels[li],
        records.images[ui],
        records.images[ti],
        records.labels[ti],
        config,
        None if masks is None else masks[li],
        None if masks is None else masks[ui],
        None if masks is None else masks[ti],
        {"labeled": li, "unlabeled": ui, "test": ti},
    )


def make_dataset(config: SceneConfig, n: int, m: int, t: int, split_seed: int = 0) -> SemiDataset:
    return split(generate(config, n + m + t), n, m, t, split_seed)


# ---------------------------------------------------------------------------
# HVDS


def _pack(mask: np.ndarray) -> bytes:
    return np.packbits(mask.reshape(-1).astype(np.uint8), bitorder="little").tobytes()


def dataset_bytes(ds: SemiDataset) -> bytes:
    cfg = ds.config
    flags = FLAG_DEPTH if cfg.depth_mode else 0
    parts = [_HEADER.pack(MAGIC, VERSION, cfg.image_side, cfg.num_landmarks, flags, ds.n, ds.m, ds.t)]
    for arr in (ds.labeled_d, ds.labeled_h, ds.unlabeled_d, ds.test_d, ds.test_h):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if cfg.depth_mode:
        for mask in (ds.labeled_mask, ds.unlabeled_mask, ds.test_mask):
            parts.append(_pack(mask))
    return b"".join(parts)


def save_dataset(ds: SemiDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(ds))


def parse_dataset(buf: bytes) -> SemiDataset:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"header needs {_HEADER.size} bytes, file has {len(buf)}")
    _, version, side, k, flags, n, m, t = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersionError(f"HVDS version {version} is not supported (reader is version {VERSION})")
    depth = bool(flags & FLAG_DEPTH)
    dd, hd = side * side, 2 * k
    f64_sizes = [n * dd, n * hd, m * dd, t * dd, t * hd]
    mask_sizes = [(c * dd + 7) // 8 for c in (n, m, t)] if depth else []
    expected = _HEADER.size + 8 * sum(f64_sizes) + sum(mask_sizes)
    if len(buf) < expected:
        raise TruncatedFileError(f"payload truncated: expected {expected} bytes, file has {len(buf)}")
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload")
    offset = _HEADER.size
    arrays = []
    for size in f64_sizes:
        arrays.append(np.frombuffer(buf, dtype="<f8", count=size, offset=offset).astype(np.float64))
        offset += 8 * size
    ld, lh, ud, td, th = arrays
    ld, ud, td = ld.reshape(n, dd), ud.reshape(m, dd), td.reshape(t, dd)
    lh, th = lh.reshape(n, hd), th.reshape(t, hd)
    masks = [None, None, None]
    if depth:
        for i, (size, rows) in enumerate(zip(mask_sizes, (n, m, t))):
            raw = np.frombuffer(buf, dtype=np.uint8, count=size, offset=offset)
            bits = np.unpackbits(raw, count=rows * dd, bitorder="little")
            masks[i] = bits.astype(bool).reshape(rows, dd)
            offset += size
    config = SceneConfig(image_side=side, num_landmarks=k, depth_mode=depth)
    return SemiDataset(ld, lh, ud, td, th, config, *masks)


def load_dataset(path) -> SemiDataset:
    """Read an HVDS file, whether written here or by an external converter."""
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


def from_arrays(images, labels, n: int, m: int, t: int, masks=None, seed: int = 0, path=None) -> SemiDataset:
    """Split externally prepared square images + landmark labels (optionally writing HVDS)."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    records = Records(images.reshape(len(images), -1), labels.reshape(len(labels), -1), masks)
    ds = split(records, n, m, t, seed)
    if path is not None:
        save_dataset(ds, os.fspath(path))
    return ds
