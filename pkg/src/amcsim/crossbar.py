"""128x128 1T1R crosspoint array with a driver-selected active region.

The array stores one filament variable per cell.  Drivers select a
contiguous rectangular active region; cells outside it are electrically
absent from every read and every matrix-vector evaluation.  Current
accumulation follows Ohm's law and KCL with ideal drivers and virtual
grounds: rows are driven bit lines, columns collect current,

    I_j = sum_i G_ij * V_i

Each analog evaluation samples fresh multiplicative read noise per cell,
modeling the intrinsic noise of the readout path.  Wire parasitics, sneak
paths and IR drop are intentionally not modeled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import (
    STREAM_ARRAY,
    DeviceParams,
    DeviceState,
    derive_rng,
    levels_to_conductance,
    state_from_x,
)

ARRAY_ROWS = 128
ARRAY_COLS = 128


@dataclass(frozen=True)
class ActiveRegion:
    """Contiguous rectangular sub-array selected by the row/column drivers."""

    row_start: int = 0
    row_count: int = ARRAY_ROWS
    col_start: int = 0
    col_count: int = ARRAY_COLS

    def __post_init__(self):
        if self.row_count < 1 or self.col_count < 1:
            raise ValueError("active region must contain at least one cell")
        if self.row_start < 0 or self.col_start < 0:
            raise ValueError("region origin must be non-negative")
        if self.row_start + self.row_count > ARRAY_ROWS:
            raise ValueError("active region exceeds array rows")
        if self.col_start + self.col_count > ARRAY_COLS:
            raise ValueError("active region exceeds array columns")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_count, self.col_count)

    def rows(self) -> slice:
        return slice(self.row_start, self.row_start + self.row_count)

    def cols(self) -> slice:
        return slice(self.col_start, self.col_start + self.col_count)


class CrossbarArray:
    """Grid of cell states plus shared device parameters and an active region.

    The array owns a reproducible rng stream (derived from
    ``params.rng_seed`` and ``stream_key``) used by default for read noise
    and programming noise.  Callers that evaluate concurrently should pass
    private streams to the read operations instead.
    """

    def __init__(self, params: DeviceParams, stream_key: int = 0):
        self.params = params
        self.x = np.zeros((ARRAY_ROWS, ARRAY_COLS), dtype=np.float64)
        self.active = ActiveRegion()
        self.stream_key = int(stream_key)
        self.rng = derive_rng(params.rng_seed, STREAM_ARRAY, stream_key)

    # -- region handling ----------------------------------------------------

    def select_region(self, region: ActiveRegion) -> "CrossbarArray":
        """Point the drivers at ``region``; returns self for chaining."""
        if not isinstance(region, ActiveRegion):
            region = ActiveRegion(*region)
        self.active = region
        return self

    def _active_x(self) -> np.ndarray:
        return self.x[self.active.rows(), self.active.cols()]

    # -- cell access ---------------------------------------------------------

    def get_cell(self, row: int, col: int) -> DeviceState:
        return state_from_x(self.x[row, col], self.params)

    def set_cell(self, row: int, col: int, state: DeviceState) -> None:
        self.x[row, col] = state.x

    # -- direct (ideal) programming ------------------------------------------

    def set_levels(self, levels: np.ndarray) -> None:
        """Place active-region cells exactly on the level grid (ideal programming)."""
        levels = np.asarray(levels)
        if levels.shape != self.active.shape:
            raise ValueError(f"targets {levels.shape} != active region {self.active.shape}")
        g = levels_to_conductance(levels, self.params)
        self.x[self.active.rows(), self.active.cols()] = (g - self.params.g_min) / self.params.g_span

    def set_conductances(self, g: np.ndarray) -> None:
        """Force exact (unquantized) conductances onto the active region."""
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.active.shape:
            raise ValueError(f"matrix {g.shape} != active region {self.active.shape}")
        if g.size and (g.min() < self.params.g_min - 1e-18 or g.max() > self.params.g_max + 1e-18):
            raise ValueError("conductances outside device range")
        self.x[self.active.rows(), self.active.cols()] = (g - self.params.g_min) / self.params.g_span

    # -- analog reads ----------------------------------------------------------

    def conductances(self) -> np.ndarray:
        """Noise-free conductance matrix of the active region."""
        return self.params.g_min + self._active_x() * self.params.g_span

    def read_conductance_matrix(self, rng: np.random.Generator | None = None) -> np.ndarray:
        """One noisy read of the active region, noise sampled per cell."""
        g = self.conductances()
        if self.params.sigma_read == 0.0:
            return g
        if rng is None:
            rng = self.rng
        noisy = g * (1.0 + rng.normal(0.0, self.params.sigma_read, size=g.shape))
        return np.clip(noisy, self.params.g_min, self.params.g_max)

    def mvm_currents(self, v_in: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """Column currents for driven row voltages: I = G_read^T @ v_in.

        ``v_in`` may be a vector (row_count,) or a batch (row_count, k);
        a batched call is one analog evaluation and shares a single
        conductance realization.
        """
        v_in = np.asarray(v_in, dtype=np.float64)
        if v_in.shape[0] != self.active.row_count:
            raise ValueError(
                f"input length {v_in.shape[0]} != active row count {self.active.row_count}"
            )
        g = self.read_conductance_matrix(rng)
        return g.T @ v_in


def select_region(array: CrossbarArray, region: ActiveRegion) -> CrossbarArray:
    return array.select_region(region)


def read_conductance_matrix(array: CrossbarArray, rng: np.random.Generator | None = None) -> np.ndarray:
    return array.read_conductance_matrix(rng)


def mvm_currents(array: CrossbarArray, v_in: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    return array.mvm_currents(v_in, rng)
