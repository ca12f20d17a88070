"""File formats: matrix text files, buffer dumps, mapped-matrix bundles.

Matrix text format: first line ``rows cols``, then row-major
whitespace-separated decimals.  Values are written with ``repr`` so files
round-trip bit for bit.

Buffer dump format: CSV with a one-line header ``name,rows,cols`` followed
by the data rows; vectors are dumped with ``cols=0`` and one value per line.
"""

from __future__ import annotations

import numpy as np


def write_matrix(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError("matrix files hold 2-D data")
    with open(path, "w") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]}\n")
        for row in m:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: first line must be 'rows cols'")
        rows, cols = int(header[0]), int(header[1])
        data = fh.read().split()
    if len(data) != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {len(data)}")
    return np.array(data, dtype=np.float64).reshape(rows, cols)


def dump_buffer(path, name: str, value: np.ndarray) -> None:
    value = np.asarray(value)
    if value.ndim == 1:
        rows, cols = value.shape[0], 0
        body = value.reshape(-1, 1)
    elif value.ndim == 2:
        rows, cols = value.shape
        body = value
    else:
        raise ValueError("buffers are vectors or matrices")
    with open(path, "w", newline="") as fh:
        fh.write(f"{name},{rows},{cols}\n")
        for row in body:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def save_mapped_matrix(basepath, mm) -> None:
    """Persist a mapped matrix: one level-matrix file per plane plus a
    scheme descriptor in the key = value config format."""
    base = str(basepath)
    scheme = mm.scheme
    with open(base + ".scheme", "w") as fh:
        fh.write(f"bits_per_device = {scheme.bits_per_device}\n")
        fh.write(f"n_slices = {scheme.n_slices}\n")
        fh.write(f"signed_mode = {scheme.signed_mode}\n")
        fh.write(f"a_max = {scheme.a_max!r}\n")
        fh.write(f"scale = {scheme.scale!r}\n")
    for i, plane in enumerate(mm.level_planes):
        write_matrix(f"{base}.plane{i}.mat", plane)


def load_mapped_matrix(basepath):
    from .config import load_config
    from .mapping import MappedMatrix, QuantizationScheme

    base = str(basepath)
    cfg = load_config(base + ".scheme")
    scheme = QuantizationScheme(
        bits_per_device=cfg["bits_per_device"],
        n_slices=cfg["n_slices"],
        signed_mode=cfg["signed_mode"],
        a_max=cfg["a_max"],
        scale=cfg["scale"],
    )
    planes = tuple(
        read_matrix(f"{base}.plane{i}.mat").astype(np.int64)
        for i in range(scheme.n_planes)
    )
    return MappedMatrix(level_planes=planes, scheme=scheme, shape=planes[0].shape)


def load_buffer(path) -> tuple[str, np.ndarray]:
    with open(path) as fh:
        name, rows, cols = fh.readline().strip().split(",")
        rows, cols = int(rows), int(cols)
        data = [line.strip().split(",") for line in fh if line.strip()]
    flat = [v for row in data for v in row]
    if any("." in v or "e" in v or "inf" in v or "nan" in v for v in flat):
        arr = np.array(flat, dtype=np.float64)
    else:
        arr = np.array(flat, dtype=np.int64)
    if cols == 0:
        return name, arr.reshape(rows)
    return name, arr.reshape(rows, cols)
