"""Hyperspectral cubes, labels, patch extraction, splits, synthetic scenes.

File formats (little-endian):
  cube  "HSIC" u8 version=1, u32 width/height/bands, then w*h*bands float32
        band-sequential (band major, row-major within a band);
  labels "HSIL" u8 version=1, u32 width/height, u16 n_class, then w*h u16
        row-major labels, 0 = unlabeled, 1..n_class = classes.

In memory a cube is (bands, height, width) float32; all model math happens
on float64 patches cut from it. Patches use mirror padding at the borders,
so every labeled pixel yields a full-size patch centered on it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .rng import Rng
from .tensor import Tensor

CUBE_MAGIC = b"HSIC"
LABEL_MAGIC = b"HSIL"
FORMAT_VERSION = 1


@dataclass
class HsiCube:
    data: np.ndarray  # (bands, height, width) float32

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class LabelMap:
    labels: np.ndarray  # (height, width) uint16
    n_class: int


@dataclass
class PatchBatch:
    patches: Tensor  # (N, bands, size, size) float64
    labels: np.ndarray  # (N,) int64, zero-based class ids
    centers: np.ndarray  # (N, 2) row, col of each patch center


def save_cube(path: str, cube: HsiCube) -> None:
    d = cube.data
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<III", cube.width, cube.height, cube.bands))
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())


def load_cube(path: str) -> HsiCube:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CUBE_MAGIC:
        raise FormatError("bad cube magic at byte 0: %r" % blob[:4])
    if len(blob) < 17:
        raise FormatError("cube header truncated: %d bytes" % len(blob))
    (version,) = struct.unpack("<B", blob[4:5])
    if version != FORMAT_VERSION:
        raise FormatError("unsupported cube version %d" % version)
    w, h, c = struct.unpack("<III", blob[5:17])
    expected = 17 + 4 * w * h * c
    if len(blob) != expected:
        raise FormatError(
            "cube payload size mismatch: header implies %d bytes, file has %d"
            % (expected, len(blob))
        )
    data = np.frombuffer(blob, dtype="<f4", offset=17).astype(np.float32).reshape(c, h, w)
    return HsiCube(data=data)


def save_labels(path: str, label_map: LabelMap) -> None:
    h, w = label_map.labels.shape
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<IIH", w, h, label_map.n_class))
        fh.write(np.ascontiguousarray(label_map.labels, dtype="<u2").tobytes())


def load_labels(path: str) -> LabelMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != LABEL_MAGIC:
        raise FormatError("bad label magic at byte 0: %r" % blob[:4])
    if len(blob) < 15:
        raise FormatError("label header truncated: %d bytes" % len(blob))
    (version,) = struct.unpack("<B", blob[4:5])
    if version != FORMAT_VERSION:
        raise FormatError("unsupported label version %d" % version)
    w, h, n_class = struct.unpack("<IIH", blob[5:15])
    expected = 15 + 2 * w * h
    if len(blob) != expected:
        raise FormatError(
            "label payload size mismatch: header implies %d bytes, file has %d"
            % (expected, len(blob))
        )
    labels = np.frombuffer(blob, dtype="<u2", offset=15).astype(np.uint16).reshape(h, w)
    if labels.max(initial=0) > n_class:
        raise FormatError(
            "label value %d exceeds declared n_class %d" % (int(labels.max()), n_class)
        )
    return LabelMap(labels=labels, n_class=n_class)


def load_dataset(cube_path: str, labels_path: str) -> tuple[HsiCube, LabelMap]:
    cube = load_cube(cube_path)
    label_map = load_labels(labels_path)
    if label_map.labels.shape != (cube.height, cube.width):
        raise FormatError(
            "label grid %s does not match cube %s"
            % (label_map.labels.shape, (cube.height, cube.width))
        )
    return cube, label_map


def normalize(cube: HsiCube) -> HsiCube:
    """Min-max scale each band to [0, 1]; constant bands map to zero."""
    out = np.empty_like(cube.data)
    for b in range(cube.bands):
        band = cube.data[b]
        lo = band.min()
        span = band.max() - lo
        out[b] = (band - lo) / span if span > 0 else 0.0
    return HsiCube(data=out)


def extract_patches(cube: HsiCube, label_map: LabelMap, size: int) -> PatchBatch:
    """One (bands, size, size) float64 patch per labeled pixel, row-major order."""
    if size < 1 or size % 2 == 0:
        raise ConfigError("patch size must be odd and positive, got %d" % size)
    half = size // 2
    if half >= cube.height or half >= cube.width:
        raise ConfigError(
            "patch size %d too large for %dx%d scene (mirror pad needs size//2 < extent)"
            % (size, cube.height, cube.width)
        )
    rows, cols = np.nonzero(label_map.labels)
    if rows.size == 0:
        raise DataError("label map has no labeled pixels")
    padded = (
        np.pad(cube.data, ((0, 0), (half, half), (half, half)), mode="reflect")
        if half
        else cube.data
    )
    patches = np.empty((rows.size, cube.bands, size, size), dtype=np.float64)
    for i, (r, c) in enumerate(zip(rows, cols)):
        patches[i] = padded[:, r : r + size, c : c + size]
    labels = label_map.labels[rows, cols].astype(np.int64) - 1
    centers = np.stack([rows, cols], axis=1).astype(np.int64)
    return PatchBatch(patches=Tensor(patches), labels=labels, centers=centers)


def _take(batch: PatchBatch, idx: np.ndarray) -> PatchBatch:
    return PatchBatch(
        patches=Tensor(batch.patches.data[idx]),
        labels=batch.labels[idx],
        centers=batch.centers[idx],
    )


def split_train_test(
    batch: PatchBatch, fraction: float, seed: int, n_class: int | None = None
) -> tuple[PatchBatch, PatchBatch, list[str]]:
    """Stratified split: per class, shuffle and take ceil(fraction * count)
    for training. Returns (train, test, warnings); classes with no samples
    are recorded as warnings, never an error."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("train fraction must lie in (0, 1], got %r" % fraction)
    rng = Rng(seed)
    present = np.unique(batch.labels)
    warnings = []
    if n_class is not None:
        for c in range(n_class):
            if c not in present:
                warnings.append("class %d has no labeled samples; excluded from split" % (c + 1))
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for c in present:
        members = np.nonzero(batch.labels == c)[0]
        perm = rng.permutation(members.size)
        take = int(np.ceil(fraction * members.size))
        train_idx.append(members[perm[:take]])
        test_idx.append(members[perm[take:]])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx)) if any(t.size for t in test_idx) else np.empty(0, dtype=np.int64)
    return _take(batch, train), _take(batch, test), warnings


def synth_cube(
    n_class: int = 4,
    width: int = 32,
    height: int = 32,
    bands: int = 16,
    noise_sigma: float = 0.05,
    seed: int = 7,
) -> tuple[HsiCube, LabelMap]:
    """Fully labeled synthetic scene of vertical class strips.

    Each class gets a random baseline spectrum in [0, 0.3] plus a +1.2 bump
    on band (class index mod bands). With n_class <= bands the bump bands are
    distinct, so two class spectra differ by at least 0.9 on each of two
    bands: pairwise L2 distance >= 0.9 * sqrt(2) ~ 1.27. Gaussian noise is
    added per pixel on top.
    """
    if n_class < 2:
        raise ConfigError("synthetic scene needs n_class >= 2")
    if n_class > bands:
        raise ConfigError("separability needs n_class <= bands")
    if width < n_class:
        raise ConfigError("width %d cannot host %d vertical strips" % (width, n_class))
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    rng = Rng(seed)
    signatures = rng.uniform((n_class, bands), 0.0, 0.3)
    for k in range(n_class):
        signatures[k, k % bands] += 1.2

    col_class = (np.arange(width) * n_class) // width  # balanced strips
    labels = np.broadcast_to(col_class + 1, (height, width)).astype(np.uint16)

    clean = signatures[col_class].T[:, None, :]  # (bands, 1, width)
    data = np.broadcast_to(clean, (bands, height, width)).astype(np.float64)
    if noise_sigma > 0:
        data = data + rng.normal((bands, height, width), 0.0, noise_sigma)
    return HsiCube(data=data.astype(np.float32)), LabelMap(labels=labels.copy(), n_class=n_class)
