"""Composite analog computation in problem units.

Bridges the gap between real-valued matrix problems and the conductance
domain: quantize a matrix onto level planes, program one crossbar per
plane, then evaluate with the appropriate topology and undo the scaling
digitally.  The steps every path shares:

* inputs normalize to the converter range and pass through the DAC model;
* the g_min code-zero floor is cancelled digitally (differential planes
  cancel it by subtraction, non-negative mappings subtract the constant);
* slice outputs recombine with weight 16, differential planes subtract;
* results rescale by the scheme quantum and the recorded input scale.

MVM runs per plane on the physical arrays.  The feedback topologies (INV,
PINV, EGV) need the signed effective matrix inside a single solve, so they
combine one noisy read per plane at the conductance level and solve on the
result; a digitally chosen loop transconductance scales the injected
current so the predicted solution fits the rails while the rhs keeps full
DAC resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crossbar import ActiveRegion, CrossbarArray
from .device import DeviceParams
from .mapping import (
    DIFFERENTIAL,
    MappedMatrix,
    QuantizationScheme,
    combine_slices,
    quantize_matrix,
    reconstruct_effective_matrix,
    signed_output_combine,
)
from .solvers import (
    TopologyConfig,
    TopologyKind,
    eigenvector_steady_state,
    solve_linear_system,
    solve_mvm,
)
from .system import ConverterSpec, adc, adc_value, dac, to_dac_codes
from .write_verify import ArrayProgramReport, WriteVerifyConfig, program_array

#: Fraction of the rail budget granted to the MVM gain fit; the headroom
#: absorbs read noise and write-verify band error on top of the
#: calibration read.
MVM_GAIN_SAFETY = 0.85

#: Fraction of the rail targeted by feedback-topology input auto-ranging.
RANGE_SAFETY = 0.5


@dataclass
class ProgrammedMatrix:
    """One real matrix realized as programmed crossbar planes."""

    planes: tuple[CrossbarArray, ...]
    mapped: MappedMatrix
    reports: tuple[ArrayProgramReport, ...] | None

    @property
    def scheme(self) -> QuantizationScheme:
        return self.mapped.scheme

    @property
    def params(self) -> DeviceParams:
        return self.planes[0].params

    @property
    def shape(self) -> tuple[int, int]:
        return self.mapped.shape

    def reconstructed(self) -> np.ndarray:
        """Digital reconstruction of the stored matrix in problem units."""
        return reconstruct_effective_matrix(self.mapped)


def program_matrix(
    a: np.ndarray,
    scheme: QuantizationScheme,
    params: DeviceParams,
    wv: WriteVerifyConfig | None = None,
    stream_base: int = 0,
    ideal: bool = False,
) -> ProgrammedMatrix:
    """Quantize ``a`` and program one crossbar per level plane.

    ``ideal=True`` bypasses write-verify and places cells exactly on the
    level grid (used by oracle-equivalence tests); the default path runs
    the full verify loop per plane.  Matrices larger than one array are
    rejected: tiling across macros is out of scope.
    """
    mapped = quantize_matrix(a, scheme)
    rows, cols = mapped.shape
    region = ActiveRegion(0, rows, 0, cols)
    arrays, reports = [], []
    for k, plane in enumerate(mapped.level_planes):
        arr = CrossbarArray(params, stream_key=stream_base + k)
        arr.select_region(region)
        if ideal:
            arr.set_levels(plane)
        else:
            _, report = program_array(arr, plane, wv if wv is not None else WriteVerifyConfig())
            reports.append(report)
        arrays.append(arr)
    return ProgrammedMatrix(
        planes=tuple(arrays),
        mapped=mapped,
        reports=tuple(reports) if reports else None,
    )


def effective_conductance(pm: ProgrammedMatrix, noisy: bool = True) -> np.ndarray:
    """Signed effective matrix in siemens above the code-zero floor.

    One read per plane (noisy unless disabled), slices recombined with
    weight 16 and differential planes subtracted.  Equals
    ``level_spacing * signed_codes`` plus programming and read errors.
    """
    params = pm.params
    reads = [
        (arr.read_conductance_matrix() if noisy else arr.conductances()) - params.g_min
        for arr in pm.planes
    ]

    def one_sign(sub):
        if len(sub) == 1:
            return sub[0]
        return combine_slices(sub[0], sub[1], pm.scheme)

    if pm.scheme.signed_mode == DIFFERENTIAL:
        half = len(reads) // 2
        return signed_output_combine(one_sign(reads[:half]), one_sign(reads[half:]))
    return one_sign(reads)


@dataclass
class PipelineResult:
    """Problem-unit outcome of a composite analog evaluation."""

    value: np.ndarray
    saturated: bool
    input_scale: float
    auto_range: float
    condition_estimate: float


def _normalize_input(x: np.ndarray) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=np.float64)
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    return x, (scale if scale > 0 else 1.0)


def _through_dac(norm: np.ndarray, converters: ConverterSpec | None) -> tuple[np.ndarray, float]:
    """Map normalized values in [-1, 1] onto physical volts, through the DAC if present."""
    if converters is None:
        return norm, 1.0
    volts = dac(to_dac_codes(norm * converters.v_ref, converters), converters)
    return volts, converters.v_ref


def _through_adc(v: np.ndarray, converters: ConverterSpec | None) -> np.ndarray:
    if converters is None:
        return v
    return adc_value(adc(v, converters), converters)


def analog_matvec(
    pm: ProgrammedMatrix,
    v: np.ndarray,
    converters: ConverterSpec | None = None,
    v_rail: float = 1.0,
    gain_safety: float = MVM_GAIN_SAFETY,
) -> PipelineResult:
    """Full multiply pipeline: the problem-unit product A v, via the planes.

    ``v`` may be a vector (n,) or a batch (n, k); a batch shares one
    conductance realization per plane.  Per plane the TIA gain is fitted
    from a noise-free calibration read so outputs sit inside the rails.
    """
    v, v_scale = _normalize_input(v)
    if v.shape[0] != pm.shape[0]:
        raise ValueError(f"input length {v.shape[0]} != matrix rows {pm.shape[0]}")
    v_volts, v_ref = _through_dac(v / v_scale, converters)
    sum_v = v_volts.sum(axis=0)
    params = pm.params

    plane_out = []
    saturated = False
    for arr in pm.planes:
        # output-range calibration: predict the peak current for this input
        # from a noise-free read, so the ADC sees a well-filled range; the
        # worst-case column-sum bound only backstops degenerate inputs
        g0 = arr.conductances()
        peak = float(np.abs(g0.T @ v_volts).max())
        if peak == 0.0:
            peak = float(g0.sum(axis=0).max()) * v_ref
        gain = gain_safety * v_rail / peak
        topo = TopologyConfig(TopologyKind.MVM, tia_gain=gain, v_rail=v_rail)
        res = solve_mvm(arr, v_volts, topo)
        saturated |= bool(res.saturated.any())
        v_out = _through_adc(res.v_out, converters)
        currents = -v_out / gain
        plane_out.append((currents - params.g_min * sum_v) / params.level_spacing)

    def one_sign(sub):
        if len(sub) == 1:
            return sub[0]
        return combine_slices(sub[0], sub[1], pm.scheme)

    if pm.scheme.signed_mode == DIFFERENTIAL:
        half = len(plane_out) // 2
        y_code = signed_output_combine(one_sign(plane_out[:half]), one_sign(plane_out[half:]))
    else:
        y_code = one_sign(plane_out)

    y = y_code * pm.scheme.quantum * (v_scale / v_ref)
    return PipelineResult(
        value=y,
        saturated=saturated,
        input_scale=v_scale,
        auto_range=1.0,
        condition_estimate=float("nan"),
    )


def analog_solve(
    pm: ProgrammedMatrix,
    b: np.ndarray,
    converters: ConverterSpec | None = None,
    v_rail: float = 1.0,
    range_safety: float = RANGE_SAFETY,
) -> PipelineResult:
    """Linear-system pipeline: solves A x = b on the effective signed matrix.

    The rhs always enters the DAC at full scale; range calibration instead
    picks the input transconductance k (the resistor ratio injecting
    ``i = k * b_volts``) from a noise-free prediction so the solution
    voltages land near ``range_safety * v_rail``.
    """
    rows, cols = pm.shape
    if rows != cols:
        raise ValueError("solve requires a square matrix")
    b, b_scale = _normalize_input(b)
    if b.shape[0] != rows:
        raise ValueError(f"rhs length {b.shape[0]} != matrix size {rows}")
    v_ref = converters.v_ref if converters is not None else 1.0

    eff0 = effective_conductance(pm, noisy=False)
    x_pred = solve_linear_system(eff0, -(b / b_scale) * v_ref)
    peak = float(np.max(np.abs(x_pred)))
    k = range_safety * v_rail / peak if peak > 0 else 1.0

    b_volts, v_ref = _through_dac(b / b_scale, converters)
    eff = effective_conductance(pm, noisy=True)
    x_v = solve_linear_system(eff, -b_volts * k)
    saturated = bool((np.abs(x_v) > v_rail).any())
    x_v = np.clip(x_v, -v_rail, v_rail)
    x_v = _through_adc(x_v, converters)

    x = -x_v * b_scale / (pm.scheme.scale * k * v_ref)
    return PipelineResult(
        value=x,
        saturated=saturated,
        input_scale=b_scale,
        auto_range=k,
        condition_estimate=float(np.linalg.cond(eff, 1)),
    )


def analog_least_squares(
    pm_a: ProgrammedMatrix,
    pm_at: ProgrammedMatrix,
    b: np.ndarray,
    converters: ConverterSpec | None = None,
    v_rail: float = 1.0,
    range_safety: float = RANGE_SAFETY,
) -> PipelineResult:
    """Least-squares pipeline on two programmed matrices holding A and A^T."""
    m, n = pm_a.shape
    if m < n:
        raise ValueError("least squares requires a tall design matrix")
    if pm_at.shape != (n, m):
        raise ValueError(f"transpose matrix shape {pm_at.shape} must be {(n, m)}")
    b, b_scale = _normalize_input(b)
    if b.shape[0] != m:
        raise ValueError(f"rhs length {b.shape[0]} != design rows {m}")
    v_ref = converters.v_ref if converters is not None else 1.0

    effa0 = effective_conductance(pm_a, noisy=False)
    effat0 = effective_conductance(pm_at, noisy=False)
    x_pred = solve_linear_system(effat0 @ effa0, effat0 @ (b / b_scale) * v_ref)
    peak = float(np.max(np.abs(x_pred)))
    k = range_safety * v_rail / peak if peak > 0 else 1.0

    b_volts, v_ref = _through_dac(b / b_scale, converters)
    effa = effective_conductance(pm_a, noisy=True)
    effat = effective_conductance(pm_at, noisy=True)
    normal = effat @ effa
    x_v = solve_linear_system(normal, effat @ b_volts * k)
    saturated = bool((np.abs(x_v) > v_rail).any())
    x_v = np.clip(x_v, -v_rail, v_rail)
    x_v = _through_adc(x_v, converters)

    x = x_v * b_scale / (pm_a.scheme.scale * k * v_ref)
    return PipelineResult(
        value=x,
        saturated=saturated,
        input_scale=b_scale,
        auto_range=k,
        condition_estimate=float(np.linalg.cond(normal, 1)),
    )


def analog_eigenvector(
    pm: ProgrammedMatrix,
    lam: float,
    converters: ConverterSpec | None = None,
    v_rail: float = 1.0,
) -> PipelineResult:
    """Eigenvector pipeline; ``lam`` is given in problem units."""
    rows, cols = pm.shape
    if rows != cols:
        raise ValueError("eigenvector computation requires a square matrix")
    eff = effective_conductance(pm, noisy=True)
    lam_cond = lam / pm.scheme.scale
    v, smin = eigenvector_steady_state(eff, lam_cond)
    saturated = bool((np.abs(v) > v_rail).any())
    v = np.clip(v, -v_rail, v_rail)
    v = _through_adc(v, converters)
    return PipelineResult(
        value=v,
        saturated=saturated,
        input_scale=1.0,
        auto_range=1.0,
        condition_estimate=smin,
    )
