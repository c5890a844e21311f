"""Datasets: IDX files and seeded Gaussian blobs."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from lsrs import rng as rngs

# IDX type code -> big-endian numpy dtype
IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IDXFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("dataset is empty")
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("label outside class range")

    def __len__(self):
        return len(self.labels)

    def subset(self, count):
        return Dataset(self.inputs[:count], self.labels[:count], self.n_classes, self.split)


def read_idx(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_idx(raw)


def parse_idx(raw: bytes):
    if len(raw) < 4:
        raise IDXFormatError("truncated magic number", len(raw))
    zero, type_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise IDXFormatError("magic number must start with two zero bytes", 0)
    if type_code not in IDX_TYPES:
        raise IDXFormatError(f"unknown IDX type code 0x{type_code:02x}", 2)
    if ndim == 0:
        raise IDXFormatError("zero dimensions", 3)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IDXFormatError("truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = IDX_TYPES[type_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    body = len(raw) - header_end
    if body != expected:
        offset = header_end + min(body, expected)
        raise IDXFormatError(f"payload has {body} bytes, dimensions {dims} need {expected}", offset)
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array)
    for code, dt in IDX_TYPES.items():
        if dt.newbyteorder("=") == array.dtype.newbyteorder("="):
            break
    else:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header + array.astype(dt).tobytes())


def load_idx(images_path, labels_path, n_classes=None, split="train") -> Dataset:
    """Images (N x n x n or N x c x n x n) plus labels (N) into a Dataset scaled to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4:
        raise ValueError(f"images must be 3-D or 4-D, got shape {images.shape}")
    x = images.astype(np.float64)
    if images.dtype.kind == "u" and images.dtype.itemsize == 1:
        x /= 255.0
    else:
        lo, hi = x.min(), x.max()
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    labels = labels.astype(np.int64)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    return Dataset(x, labels, k, split)


def make_blobs(n_classes, n_per_class, shape, spread, seed, split="train", centers_seed=None):
    """Gaussian clusters around class centers drawn in [0.25, 0.75]^d, clipped to [0, 1].

    Centers depend only on ``centers_seed`` (default ``seed``) so train and
    test splits can share them while drawing different points.
    """
    if n_classes < 1 or n_per_class < 1:
        raise ValueError("class and per-class counts must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    shape = tuple(shape)
    centers_rng = rngs.stream(seed if centers_seed is None else centers_seed, rngs.DATA, 0)
    centers = centers_rng.uniform(0.25, 0.75, size=(n_classes, *shape))
    rng = rngs.stream(seed, rngs.DATA, 1)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = centers[labels] + spread * rng.standard_normal((len(labels), *shape))
    x = np.clip(x, 0.0, 1.0)
    order = rng.permutation(len(labels))
    return Dataset(x[order], labels[order], n_classes, split)
