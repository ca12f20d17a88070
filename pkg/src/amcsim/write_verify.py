"""Write-verify programming of cells to target conductance levels.

Each cell runs the same loop: verify-read, compare to the target band,
then issue a SET pulse (read below band) or a RESET pulse (read above
band), ramping the corresponding voltage schedule one step per pulse.
Whenever the pulse direction flips, the newly entered schedule restarts
from its start so a correction ramp always begins gently; this prevents
overdrive oscillation around the band.  The loop stops on an in-band
read (success) or when the pulse budget is exhausted (reported failure,
never an exception).

Cells are independent, so the whole active region is programmed by one
vectorized loop; ``program_cell`` is the same kernel applied to a 1x1
grid.  The default tolerance is 60% of half the level spacing, which
keeps the acceptance bands of adjacent levels disjoint and so preserves
all 4 bits of information.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .crossbar import CrossbarArray
from .device import (
    STREAM_PROGRAM,
    DeviceParams,
    DeviceState,
    derive_rng,
    levels_to_conductance,
    state_from_x,
)

_SET, _RESET = 1, 2


@dataclass(frozen=True)
class WriteVerifyConfig:
    """Pulse schedules, tolerance band and budget for the verify loop.

    ``tol=None`` resolves to ``0.5 * level_spacing * tol_fraction`` for the
    device the loop runs against.
    """

    tol: float | None = None
    tol_fraction: float = 0.6
    max_pulses: int = 200
    vg_start: float = 0.9
    vg_step: float = 0.05
    vg_max: float = 2.2
    vsl_start: float = 0.9
    vsl_step: float = 0.05
    vsl_max: float = 2.2

    def __post_init__(self):
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.tol_fraction <= 0:
            raise ValueError("tol_fraction must be positive")
        if self.max_pulses < 1:
            raise ValueError("max_pulses must be >= 1")
        if self.vg_step <= 0 or self.vsl_step <= 0:
            raise ValueError("schedule steps must be positive")
        if self.vg_start > self.vg_max or self.vsl_start > self.vsl_max:
            raise ValueError("schedule start must not exceed its max")

    def effective_tol(self, params: DeviceParams) -> float:
        if self.tol is not None:
            return self.tol
        return 0.5 * params.level_spacing * self.tol_fraction


@dataclass(frozen=True)
class ProgramReport:
    """Outcome of programming one cell."""

    pulses_used: int
    final_g: float
    target_g: float
    success: bool


@dataclass
class ArrayProgramReport:
    """Per-cell programming outcomes for a whole region, as matrices."""

    pulses_used: np.ndarray
    final_g: np.ndarray
    target_g: np.ndarray
    success: np.ndarray

    @property
    def success_rate(self) -> float:
        return float(self.success.mean())

    def cell(self, row: int, col: int) -> ProgramReport:
        return ProgramReport(
            pulses_used=int(self.pulses_used[row, col]),
            final_g=float(self.final_g[row, col]),
            target_g=float(self.target_g[row, col]),
            success=bool(self.success[row, col]),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "target_g", "final_g", "pulses_used", "success"])
            rows, cols = self.success.shape
            for i in range(rows):
                for j in range(cols):
                    writer.writerow([
                        i, j,
                        repr(float(self.target_g[i, j])),
                        repr(float(self.final_g[i, j])),
                        int(self.pulses_used[i, j]),
                        int(self.success[i, j]),
                    ])


def _program_kernel(
    x: np.ndarray,
    target_g: np.ndarray,
    cfg: WriteVerifyConfig,
    params: DeviceParams,
    rng: np.random.Generator,
):
    """Vectorized verify/pulse loop over a grid of independent cells.

    Returns (x_final, pulses_used, final_g, success).  The verify read at
    the top of each iteration decides termination, so ``final_g`` is always
    the last read value and ``pulses_used`` never exceeds the budget.
    """
    shape = x.shape
    tol = cfg.effective_tol(params)
    x = x.copy()
    vg = np.full(shape, cfg.vg_start)
    vsl = np.full(shape, cfg.vsl_start)
    last_dir = np.zeros(shape, dtype=np.int8)
    pulses = np.zeros(shape, dtype=np.int64)
    done = np.zeros(shape, dtype=bool)
    success = np.zeros(shape, dtype=bool)
    final_g = np.zeros(shape)

    for _ in range(cfg.max_pulses + 1):
        g = params.g_min + x * params.g_span
        if params.sigma_read > 0.0:
            g_read = g * (1.0 + rng.normal(0.0, params.sigma_read, size=shape))
            g_read = np.clip(g_read, params.g_min, params.g_max)
        else:
            g_read = g
        final_g = np.where(done, final_g, g_read)

        low = ~done & (g_read < target_g - tol)
        high = ~done & (g_read > target_g + tol)
        in_band = ~done & ~low & ~high
        success |= in_band
        done |= in_band

        exhausted = (low | high) & (pulses >= cfg.max_pulses)
        done |= exhausted
        low &= ~exhausted
        high &= ~exhausted
        if not (low.any() or high.any()):
            if done.all():
                break
            continue

        # entering a direction restarts its ramp
        vg = np.where(low & (last_dir != _SET), cfg.vg_start, vg)
        vsl = np.where(high & (last_dir != _RESET), cfg.vsl_start, vsl)

        if params.sigma_write > 0.0:
            noise = np.exp(rng.normal(0.0, params.sigma_write, size=shape))
        else:
            noise = 1.0
        over_set = np.maximum(0.0, np.exp(params.beta_set * (vg - params.v_th_set)) - 1.0)
        over_rst = np.maximum(0.0, np.exp(params.beta_reset * (vsl - params.v_th_reset)) - 1.0)
        delta_set = params.alpha_set * over_set * (1.0 - x) * noise
        delta_rst = params.alpha_reset * over_rst * x * noise

        x = np.where(low, np.clip(x + delta_set, 0.0, 1.0), x)
        x = np.where(high, np.clip(x - delta_rst, 0.0, 1.0), x)
        pulses += low | high
        vg = np.where(low, np.minimum(vg + cfg.vg_step, cfg.vg_max), vg)
        vsl = np.where(high, np.minimum(vsl + cfg.vsl_step, cfg.vsl_max), vsl)
        last_dir = np.where(low, _SET, np.where(high, _RESET, last_dir))

    return x, pulses, final_g, success


def program_cell(
    state: DeviceState,
    target: int,
    cfg: WriteVerifyConfig,
    params: DeviceParams,
    rng: np.random.Generator | None = None,
) -> tuple[DeviceState, ProgramReport]:
    """Program a single cell to a level code; failure is a report, not an error."""
    target_g = levels_to_conductance(np.array([[target]]), params)
    if rng is None:
        rng = derive_rng(params.rng_seed, STREAM_PROGRAM)
    x0 = np.array([[state.x]])
    x1, pulses, final_g, success = _program_kernel(x0, target_g, cfg, params, rng)
    report = ProgramReport(
        pulses_used=int(pulses[0, 0]),
        final_g=float(final_g[0, 0]),
        target_g=float(target_g[0, 0]),
        success=bool(success[0, 0]),
    )
    return state_from_x(float(x1[0, 0]), params), report


def program_array(
    array: CrossbarArray,
    targets: np.ndarray,
    cfg: WriteVerifyConfig,
    rng: np.random.Generator | None = None,
) -> tuple[CrossbarArray, ArrayProgramReport]:
    """Program every active-region cell to its target level, in place.

    Cells are independent; the rng stream defaults to the array's own so a
    given seed reproduces the whole programming session bit for bit.
    """
    targets = np.asarray(targets)
    if targets.shape != array.active.shape:
        raise ValueError(f"targets {targets.shape} != active region {array.active.shape}")
    params = array.params
    target_g = levels_to_conductance(targets, params)
    if rng is None:
        rng = array.rng
    x0 = array._active_x()
    x1, pulses, final_g, success = _program_kernel(x0, target_g, cfg, params, rng)
    array.x[array.active.rows(), array.active.cols()] = x1
    report = ArrayProgramReport(
        pulses_used=pulses, final_g=final_g, target_g=target_g, success=success
    )
    return array, report
