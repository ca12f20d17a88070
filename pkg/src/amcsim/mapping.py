"""Mapping between real-valued matrices and conductance level codes.

Signed values use a differential pair of non-negative planes (positive
part and negative part) that the analog inverter path subtracts; an
offset-free non-negative mode maps directly.  Eight-bit precision comes
from bit slicing: the integer code in [0, 255] is split as
``code = 16 * msb + lsb`` and the two 4-bit halves live on separate
arrays whose outputs recombine digitally with a weight of 16.

Plane order in a :class:`MappedMatrix` is fixed:

    nonnegative, 1 slice   [mag]
    nonnegative, 2 slices  [msb, lsb]
    differential, 1 slice  [pos, neg]
    differential, 2 slices [pos_msb, pos_lsb, neg_msb, neg_lsb]

The level-0 conductance floor g_min plays the role of code zero; its
constant contribution to column currents is subtracted digitally by the
composite pipeline, so the effective stored matrix is faithful to the
codes.  Rounding is round-to-nearest-even throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import N_LEVELS, DeviceParams

DIFFERENTIAL = "differential"
NONNEGATIVE = "offset-free-nonnegative"

SLICE_WEIGHT = N_LEVELS  # contribution weight of the msb plane


@dataclass(frozen=True)
class QuantizationScheme:
    """How problem values map onto device codes.

    ``a_max`` is the problem-unit magnitude assigned to the full-scale
    code; ``scale`` converts siemens (above the g_min floor) back to
    problem units and is derived by :func:`make_scheme`.
    """

    bits_per_device: int = 4
    n_slices: int = 1
    signed_mode: str = DIFFERENTIAL
    a_max: float = 1.0
    scale: float = 0.0

    def __post_init__(self):
        if self.bits_per_device != 4:
            raise ValueError("devices store 4-bit codes")
        if self.bits_per_device * self.n_slices not in (4, 8):
            raise ValueError("total precision must be 4 or 8 bits")
        if self.signed_mode not in (DIFFERENTIAL, NONNEGATIVE):
            raise ValueError(f"unknown signed_mode {self.signed_mode!r}")
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")

    @property
    def total_bits(self) -> int:
        return self.bits_per_device * self.n_slices

    @property
    def code_levels(self) -> int:
        """Largest integer code: 15 for one slice, 255 for two."""
        return 2 ** self.total_bits - 1

    @property
    def quantum(self) -> float:
        """Problem-unit value of one code step."""
        return self.a_max / self.code_levels

    @property
    def n_planes(self) -> int:
        per_sign = self.n_slices
        return 2 * per_sign if self.signed_mode == DIFFERENTIAL else per_sign


def make_scheme(
    params: DeviceParams,
    a_max: float,
    n_slices: int = 1,
    signed_mode: str = DIFFERENTIAL,
) -> QuantizationScheme:
    """Build a scheme with the siemens-to-problem-units factor resolved."""
    q = 2 ** (4 * n_slices) - 1
    scale = a_max / (q * params.level_spacing)
    return QuantizationScheme(
        bits_per_device=4,
        n_slices=n_slices,
        signed_mode=signed_mode,
        a_max=a_max,
        scale=scale,
    )


@dataclass(frozen=True)
class MappedMatrix:
    """Level planes realizing one real matrix under a scheme."""

    level_planes: tuple
    scheme: QuantizationScheme
    shape: tuple[int, int]

    def __post_init__(self):
        if len(self.level_planes) != self.scheme.n_planes:
            raise ValueError("plane count does not match scheme")
        for plane in self.level_planes:
            if plane.shape != self.shape:
                raise ValueError("plane shapes must all equal the matrix shape")
            if plane.min() < 0 or plane.max() >= N_LEVELS:
                raise ValueError("plane levels outside [0, 15]")

    def sign_codes(self, sign: str) -> np.ndarray:
        """Combined integer codes of one sign ('pos' or 'neg')."""
        planes = list(self.level_planes)
        if self.scheme.signed_mode == NONNEGATIVE:
            if sign == "neg":
                return np.zeros(self.shape, dtype=np.int64)
            sel = planes
        else:
            half = len(planes) // 2
            sel = planes[:half] if sign == "pos" else planes[half:]
        if self.scheme.n_slices == 1:
            return sel[0].astype(np.int64)
        return SLICE_WEIGHT * sel[0].astype(np.int64) + sel[1].astype(np.int64)

    def signed_codes(self) -> np.ndarray:
        return self.sign_codes("pos") - self.sign_codes("neg")


def _to_codes(mag: np.ndarray, scheme: QuantizationScheme) -> np.ndarray:
    q = scheme.code_levels
    return np.rint(mag * (q / scheme.a_max)).astype(np.int64)


def _split_slices(codes: np.ndarray, scheme: QuantizationScheme) -> list[np.ndarray]:
    if scheme.n_slices == 1:
        return [codes]
    return [codes // SLICE_WEIGHT, codes % SLICE_WEIGHT]


def quantize_matrix(a: np.ndarray, scheme: QuantizationScheme) -> MappedMatrix:
    """Clamp, quantize and slice a real matrix into level planes."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite")

    if scheme.signed_mode == DIFFERENTIAL:
        clamped = np.clip(a, -scheme.a_max, scheme.a_max)
        pos = _to_codes(np.maximum(clamped, 0.0), scheme)
        neg = _to_codes(np.maximum(-clamped, 0.0), scheme)
        planes = _split_slices(pos, scheme) + _split_slices(neg, scheme)
    else:
        clamped = np.clip(a, 0.0, scheme.a_max)
        planes = _split_slices(_to_codes(clamped, scheme), scheme)

    return MappedMatrix(level_planes=tuple(planes), scheme=scheme, shape=a.shape)


def reconstruct_effective_matrix(mm: MappedMatrix) -> np.ndarray:
    """Digital twin of the stored matrix: codes recombined and scaled back."""
    codes = mm.signed_codes()
    return (codes * mm.scheme.a_max) / mm.scheme.code_levels


def combine_slices(v_msb: np.ndarray, v_lsb: np.ndarray, scheme: QuantizationScheme) -> np.ndarray:
    """Recombine msb/lsb slice outputs in code space: 16 * msb + lsb.

    Unit conversion back to problem values is a separate per-scheme factor
    (``scheme.quantum``) applied once by the composite pipeline.
    """
    if scheme.n_slices != 2:
        raise ValueError("combine_slices requires a 2-slice scheme")
    v_msb = np.asarray(v_msb)
    v_lsb = np.asarray(v_lsb)
    if v_msb.shape != v_lsb.shape:
        raise ValueError("slice outputs must have equal shapes")
    return SLICE_WEIGHT * v_msb + v_lsb


def signed_output_combine(v_pos: np.ndarray, v_neg: np.ndarray) -> np.ndarray:
    """Differential output combination realized by the analog inverter path."""
    v_pos = np.asarray(v_pos)
    v_neg = np.asarray(v_neg)
    if v_pos.shape != v_neg.shape:
        raise ValueError("plane outputs must have equal shapes")
    return v_pos - v_neg


def clamp_bound(scheme: QuantizationScheme) -> float:
    """Worst-case |reconstruct(quantize(A)) - clamp(A)| by the rounding rule."""
    return 0.5 * scheme.quantum
