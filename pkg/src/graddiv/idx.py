"""IDX binary container reader/writer (the MNIST/EMNIST on-disk format).

Images: big-endian magic 0x00000803, then count/rows/cols int32 and count *
rows * cols unsigned bytes.  Labels: magic 0x00000801, count int32, count
bytes.  Pixels are scaled to [0, 1] and flattened row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import Dataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _read_header(f, path, words: int):
    raw = f.read(4 * words)
    if len(raw) != 4 * words:
        raise OSError(f"truncated IDX header in {path}")
    return struct.unpack(f">{words}i", raw)


def _read_exact(f, count: int, path) -> bytes:
    raw = f.read(count)
    if len(raw) != count:
        raise OSError(f"truncated IDX payload in {path}: expected {count} bytes, got {len(raw)}")
    return raw


def load_idx_images(path) -> np.ndarray:
    """(n, rows, cols) uint8 pixel array from an IDX3 image file."""
    path = Path(path)
    with open(path, "rb") as f:
        magic, count, rows, cols = _read_header(f, path, 4)
        if magic != IMAGES_MAGIC:
            raise FormatError(f"{path}: bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
        if count < 1 or rows < 1 or cols < 1:
            raise FormatError(f"{path}: nonpositive dimensions {count}x{rows}x{cols}")
        data = _read_exact(f, count * rows * cols, path)
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """(n,) uint8 label array from an IDX1 label file."""
    path = Path(path)
    with open(path, "rb") as f:
        magic, count = _read_header(f, path, 2)
        if magic != LABELS_MAGIC:
            raise FormatError(f"{path}: bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
        if count < 1:
            raise FormatError(f"{path}: nonpositive count {count}")
        data = _read_exact(f, count, path)
    return np.frombuffer(data, dtype=np.uint8)


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """A classification Dataset from an IDX image/label file pair.

    The two counts must match; pixels become floats in [0, 1] flattened to
    rows*cols features.  ``limit`` keeps only the first examples (subset runs).
    """
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]} "
            f"({images_path} vs {labels_path})"
        )
    if limit is not None:
        images = images[:limit]
        labels = labels[:limit]
    n = images.shape[0]
    X = images.reshape(n, -1).astype(np.float64) / 255.0
    classes = int(labels.max()) + 1
    return Dataset(X, labels.astype(np.int64), classes=classes)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write an (n, rows, cols) uint8 array as an IDX3 image file."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (n, rows, cols)")
    with open(path, "wb") as f:
        f.write(struct.pack(">4i", IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    """Write an (n,) integer array as an IDX1 label file."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    with open(path, "wb") as f:
        f.write(struct.pack(">2i", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())
