"""Readers for the IDX binary container used by MNIST-style datasets.

Big-endian headers: magic 0x00000803 for image files (count, rows, cols
follow), 0x00000801 for label files (count follows).  Plain and gzipped
files are both accepted; gzip is sniffed from the two-byte magic.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx_images(path) -> np.ndarray:
    """Load an IDX image file into a (count, rows, cols) uint8 array."""
    with _open(path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", fh.read(16))
        if magic != IMAGE_MAGIC:
            raise ValueError(f"{path}: bad image magic 0x{magic:08x}")
        data = fh.read(count * rows * cols)
    if len(data) != count * rows * cols:
        raise ValueError(f"{path}: truncated image payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Load an IDX label file into a (count,) uint8 array."""
    with _open(path) as fh:
        magic, count = struct.unpack(">II", fh.read(8))
        if magic != LABEL_MAGIC:
            raise ValueError(f"{path}: bad label magic 0x{magic:08x}")
        data = fh.read(count)
    if len(data) != count:
        raise ValueError(f"{path}: truncated label payload")
    return np.frombuffer(data, dtype=np.uint8)


def save_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols))
        fh.write(images.tobytes())


def save_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())
