"""Behavioral compact model of a single 1T1R RRAM cell.

The cell is reduced to one internal state variable ``x`` in [0, 1], a proxy
for the size of the conductive filament.  Conductance follows the affine map

    g = g_min + x * (g_max - g_min)

SET pulses (gate voltage ramp, source line grounded) grow the filament,
RESET pulses (source-line voltage ramp) shrink it.  Both use a saturating
exponential rate law: the increment is exponential in the overdrive voltage
above threshold and proportional to the remaining headroom, so switching is
gradual, self-limiting at the range ends, and a stepped voltage schedule
produces the familiar multi-level programming staircase.

Rate constants below are calibrated so that a full-range SET sweep under the
default gate schedule completes in a few tens of pulses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

N_LEVELS = 16

# Stream-labeling constants for derive_rng; keep values stable, they pin
# reproducibility of every seeded artifact in the repo.
STREAM_DEVICE = 1
STREAM_ARRAY = 2
STREAM_PROGRAM = 3
STREAM_MACRO = 4
STREAM_EXPERIMENT = 5


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Derive an independent, reproducible generator from a seed and key path."""
    return np.random.default_rng((int(seed),) + tuple(int(k) for k in keys))


@dataclass(frozen=True)
class DeviceParams:
    """Device constants shared by every cell of an array.

    Conductance range and pulse width are physical; the rate constants
    (alpha/beta/thresholds) belong to the behavioral switching surrogate.
    Setting both sigmas to zero makes the device fully deterministic.
    """

    g_min: float = 1e-6          # S, level-0 conductance
    g_max: float = 100e-6        # S, level-15 conductance
    pulse_width: float = 30e-9   # s, SET/RESET pulse width
    v_set: float = 2.0           # V, fixed bit-line bias during SET
    v_th_set: float = 0.7        # V, gate threshold below which SET is a no-op
    v_th_reset: float = 0.7      # V, source-line threshold for RESET
    alpha_set: float = 0.004     # rate constant, fraction of headroom per pulse
    alpha_reset: float = 0.004
    beta_set: float = 3.0        # 1/V, exponential overdrive sensitivity
    beta_reset: float = 3.0
    sigma_write: float = 0.05    # lognormal std-dev of multiplicative write noise
    sigma_read: float = 0.005    # gaussian std-dev of multiplicative read noise
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.g_min < self.g_max):
            raise ValueError(f"require 0 < g_min < g_max, got {self.g_min}, {self.g_max}")
        if self.sigma_write < 0 or self.sigma_read < 0:
            raise ValueError("noise sigmas must be >= 0")

    @property
    def g_span(self) -> float:
        return self.g_max - self.g_min

    @property
    def level_spacing(self) -> float:
        """Conductance distance between adjacent codes of the 16-level grid."""
        return self.g_span / (N_LEVELS - 1)


@dataclass(frozen=True)
class DeviceState:
    """Analog state of one cell: filament variable and its conductance.

    ``x`` and ``g`` are kept mutually consistent through the affine map;
    construct states with :func:`state_from_x` or :func:`state_from_g`.
    """

    x: float
    g: float


def state_from_x(x: float, params: DeviceParams) -> DeviceState:
    x = float(min(max(x, 0.0), 1.0))
    return DeviceState(x=x, g=params.g_min + x * params.g_span)


def state_from_g(g: float, params: DeviceParams) -> DeviceState:
    if not (params.g_min <= g <= params.g_max):
        raise ValueError(f"conductance {g} outside [{params.g_min}, {params.g_max}]")
    return DeviceState(x=(g - params.g_min) / params.g_span, g=float(g))


def fresh_state(params: DeviceParams) -> DeviceState:
    """A cell in its fully-RESET (level 0) condition."""
    return state_from_x(0.0, params)


def _write_noise(sigma: float, rng: np.random.Generator | None, seed: int) -> float:
    if sigma == 0.0:
        return 1.0
    if rng is None:
        rng = derive_rng(seed, STREAM_DEVICE)
    return float(np.exp(rng.normal(0.0, sigma)))


def set_increment(x: float, v_g: float, params: DeviceParams) -> float:
    """Noise-free filament growth for one SET pulse at gate voltage ``v_g``."""
    over = max(0.0, np.exp(params.beta_set * (v_g - params.v_th_set)) - 1.0)
    return params.alpha_set * over * (1.0 - x)


def reset_decrement(x: float, v_sl: float, params: DeviceParams) -> float:
    """Noise-free filament shrinkage for one RESET pulse at source voltage ``v_sl``."""
    over = max(0.0, np.exp(params.beta_reset * (v_sl - params.v_th_reset)) - 1.0)
    return params.alpha_reset * over * x


def apply_set_pulse(
    state: DeviceState,
    v_g: float,
    params: DeviceParams,
    rng: np.random.Generator | None = None,
) -> DeviceState:
    """One SET pulse. Sub-threshold gate voltages leave the state untouched.

    With ``sigma_write == 0`` the update is deterministic and monotone
    non-decreasing.  Callers running pulse sequences should pass their own
    ``rng`` stream; with ``rng=None`` a fresh stream is derived from
    ``params.rng_seed`` on every call.
    """
    if v_g < 0:
        raise ValueError("gate voltage must be >= 0")
    if v_g <= params.v_th_set:
        return state
    delta = set_increment(state.x, v_g, params)
    delta *= _write_noise(params.sigma_write, rng, params.rng_seed)
    return state_from_x(state.x + delta, params)


def apply_reset_pulse(
    state: DeviceState,
    v_sl: float,
    params: DeviceParams,
    rng: np.random.Generator | None = None,
) -> DeviceState:
    """One RESET pulse, the mirror of :func:`apply_set_pulse`."""
    if v_sl < 0:
        raise ValueError("source-line voltage must be >= 0")
    if v_sl <= params.v_th_reset:
        return state
    delta = reset_decrement(state.x, v_sl, params)
    delta *= _write_noise(params.sigma_write, rng, params.rng_seed)
    return state_from_x(state.x - delta, params)


def read_conductance(
    state: DeviceState,
    params: DeviceParams,
    rng: np.random.Generator | None = None,
) -> float:
    """Read the cell conductance with multiplicative gaussian noise, clamped to range."""
    if params.sigma_read == 0.0:
        return state.g
    if rng is None:
        rng = derive_rng(params.rng_seed, STREAM_DEVICE)
    g = state.g * (1.0 + rng.normal(0.0, params.sigma_read))
    return float(min(max(g, params.g_min), params.g_max))


def level_to_conductance(level: int, params: DeviceParams) -> float:
    """Target conductance of one of the 16 codes, linearly spaced over the range."""
    if not 0 <= level < N_LEVELS:
        raise ValueError(f"level {level} outside [0, {N_LEVELS - 1}]")
    return params.g_min + level * params.level_spacing


def conductance_to_level(g: float, params: DeviceParams) -> int:
    """Nearest level code for a conductance; ties break toward the lower level."""
    if not (params.g_min <= g <= params.g_max):
        raise ValueError(f"conductance {g} outside [{params.g_min}, {params.g_max}]")
    t = (g - params.g_min) / params.level_spacing
    level = int(np.ceil(t - 0.5))
    return min(max(level, 0), N_LEVELS - 1)


def levels_to_conductance(levels: np.ndarray, params: DeviceParams) -> np.ndarray:
    """Vectorized level-to-conductance map with range validation."""
    levels = np.asarray(levels)
    if levels.size and (levels.min() < 0 or levels.max() >= N_LEVELS):
        raise ValueError("level codes outside [0, 15]")
    return params.g_min + levels.astype(np.float64) * params.level_spacing


def with_seed(params: DeviceParams, seed: int) -> DeviceParams:
    return replace(params, rng_seed=int(seed))
