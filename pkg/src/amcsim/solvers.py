"""One-step emulation of the four analog circuit topologies.

A register-array bit pattern selects how the amplifiers wrap the crossbar:

* MVM  - TIAs convert column currents:             v_out = -R_f * G^T v_in
* INV  - feedback TIAs enforce a linear system:    G v_out = -i_in
* PINV - two-array cascade enforcing the normal equations of least squares
* EGV  - eigenvector circuit whose steady state satisfies (G - lam I) v = 0

Steady states are computed algebraically (dense solves and SVD) because the
architecture is evaluated on solution accuracy, not transient behavior.
Every solve performs exactly one noisy conductance read, modeling a single
physical realization of the array during the solution transient.  Outputs
clip at symmetric supply rails with per-component saturation flags.
"""

from __future__ import annotations

import csv
import enum
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .crossbar import CrossbarArray
from .device import DeviceParams
from .errors import NotAnEigenvalueError, RegisterDecodeError, SingularMatrixError

#: Default feedback resistance: one level step at one volt produces one volt
#: of TIA output, i.e. outputs are read directly in code units.
DEFAULT_TIA_GAIN = 1.0 / DeviceParams().level_spacing

DEFAULT_V_RAIL = 1.0

#: LU pivot ratio below which a read matrix is reported as singular.
PIVOT_RTOL = 1e-12

#: Relative distance of the smallest singular value of (G - lam I) beyond
#: which the supplied lam is rejected as not an eigenvalue.
EIGENVALUE_RTOL = 0.05

#: Condition estimate above which feasibility diagnostics raise a flag.
CONDITION_FLAG = 1e6

REGISTER_BITS = 8 + 3 * 64  # header byte + three float64 payloads


class TopologyKind(enum.Enum):
    MVM = "MVM"
    INV = "INV"
    PINV = "PINV"
    EGV = "EGV"


_KIND_ORDER = (TopologyKind.MVM, TopologyKind.INV, TopologyKind.PINV, TopologyKind.EGV)


@dataclass(frozen=True)
class TopologyConfig:
    """Connection selection plus the analog constants a solve needs.

    ``lam`` (siemens) is meaningful only for EGV.  ``register_bits`` is the
    transmission-gate encoding of the whole configuration.
    """

    kind: TopologyKind
    tia_gain: float = DEFAULT_TIA_GAIN
    v_rail: float = DEFAULT_V_RAIL
    lam: float | None = None

    def __post_init__(self):
        if self.tia_gain <= 0:
            raise ValueError("tia_gain must be positive")
        if self.v_rail <= 0:
            raise ValueError("v_rail must be positive")
        if self.kind is TopologyKind.EGV:
            if self.lam is None:
                raise ValueError("EGV requires lam")
        elif self.lam is not None:
            raise ValueError(f"lam is only meaningful for EGV, not {self.kind.value}")

    @property
    def register_bits(self) -> np.ndarray:
        return encode_topology(self)


def _float_bits(value: float) -> np.ndarray:
    return np.unpackbits(np.frombuffer(struct.pack("<d", value), dtype=np.uint8))


def _bits_float(bits: np.ndarray) -> float:
    return struct.unpack("<d", np.packbits(bits.astype(np.uint8)).tobytes())[0]


def encode_topology(cfg: TopologyConfig) -> np.ndarray:
    """Register-array bit vector: one-hot kind header, then gain/rail/lam payloads."""
    bits = np.zeros(REGISTER_BITS, dtype=np.uint8)
    bits[_KIND_ORDER.index(cfg.kind)] = 1
    bits[8:72] = _float_bits(cfg.tia_gain)
    bits[72:136] = _float_bits(cfg.v_rail)
    bits[136:200] = _float_bits(cfg.lam if cfg.lam is not None else 0.0)
    return bits


def decode_topology(bits: np.ndarray) -> TopologyConfig:
    """Inverse of :func:`encode_topology`; unknown patterns raise RegisterDecodeError."""
    bits = np.asarray(bits)
    if bits.shape != (REGISTER_BITS,):
        raise RegisterDecodeError(f"register vector must have {REGISTER_BITS} bits")
    if not np.isin(bits, (0, 1)).all():
        raise RegisterDecodeError("register vector entries must be 0 or 1")
    header = bits[:8]
    if header[4:].any() or header[:4].sum() != 1:
        raise RegisterDecodeError(f"invalid topology header {header.tolist()}")
    kind = _KIND_ORDER[int(np.argmax(header[:4]))]
    tia_gain = _bits_float(bits[8:72])
    v_rail = _bits_float(bits[72:136])
    lam = _bits_float(bits[136:200])
    if kind is not TopologyKind.EGV:
        if bits[136:200].any():
            raise RegisterDecodeError("lam payload must be zero outside EGV")
        lam = None
    try:
        return TopologyConfig(kind=kind, tia_gain=tia_gain, v_rail=v_rail, lam=lam)
    except ValueError as exc:
        raise RegisterDecodeError(str(exc)) from exc


@dataclass
class AnalogResult:
    """Solver output: clipped voltages, saturation flags and a conditioning figure."""

    v_out: np.ndarray
    saturated: np.ndarray
    condition_estimate: float
    noise_sampled: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# condition_estimate = {self.condition_estimate!r}\n")
            fh.write(f"# noise_sampled = {int(self.noise_sampled)}\n")
            writer = csv.writer(fh)
            writer.writerow(["index", "v_out", "saturated"])
            flat_v = np.atleast_1d(self.v_out).reshape(-1)
            flat_s = np.atleast_1d(self.saturated).reshape(-1)
            for i, (v, s) in enumerate(zip(flat_v, flat_s)):
                writer.writerow([i, repr(float(v)), int(s)])


def _apply_rails(raw: np.ndarray, v_rail: float) -> tuple[np.ndarray, np.ndarray]:
    saturated = np.abs(raw) > v_rail
    return np.clip(raw, -v_rail, v_rail), saturated


def solve_linear_system(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense LU solve of ``g x = rhs`` with a singularity check on the pivots."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("system matrix must be square")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(g, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.max() == 0.0 or pivots.min() < PIVOT_RTOL * pivots.max():
        raise SingularMatrixError("matrix is singular or numerically singular")
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def smallest_singular_vector(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Right-singular vector of the smallest singular value, sign-normalized.

    The vector is scaled so its largest-magnitude component is exactly +1.
    """
    _, s, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    v = vt[-1]
    v = v / v[np.argmax(np.abs(v))]
    return v, float(s[-1])


def solve_mvm(
    array: CrossbarArray,
    v_in: np.ndarray,
    cfg: TopologyConfig,
    rng: np.random.Generator | None = None,
) -> AnalogResult:
    """Feedforward multiply: v_out = clip(-tia_gain * G_read^T v_in)."""
    if cfg.kind is not TopologyKind.MVM:
        raise ValueError(f"topology configured as {cfg.kind.value}, not MVM")
    currents = array.mvm_currents(v_in, rng)
    v_out, saturated = _apply_rails(-cfg.tia_gain * currents, cfg.v_rail)
    return AnalogResult(
        v_out=v_out,
        saturated=saturated,
        condition_estimate=float("nan"),
        noise_sampled=array.params.sigma_read > 0.0,
    )


def solve_inv(
    array: CrossbarArray,
    b: np.ndarray,
    cfg: TopologyConfig,
    rng: np.random.Generator | None = None,
) -> AnalogResult:
    """Linear-system topology: solves G_read v = -i with i = b / tia_gain.

    The input resistors reuse the feedback resistance, so ``b`` (volts)
    injects ``b / tia_gain`` amperes into the column virtual grounds.
    """
    if cfg.kind is not TopologyKind.INV:
        raise ValueError(f"topology configured as {cfg.kind.value}, not INV")
    if array.active.row_count != array.active.col_count:
        raise ValueError("INV requires a square active region")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != array.active.row_count:
        raise ValueError(f"rhs length {b.shape[0]} != region size {array.active.row_count}")
    g = array.read_conductance_matrix(rng)
    x = solve_linear_system(g, -b / cfg.tia_gain)
    v_out, saturated = _apply_rails(x, cfg.v_rail)
    return AnalogResult(
        v_out=v_out,
        saturated=saturated,
        condition_estimate=float(np.linalg.cond(g, 1)),
        noise_sampled=array.params.sigma_read > 0.0,
    )


def solve_pinv(
    array_a: CrossbarArray,
    array_at: CrossbarArray,
    b: np.ndarray,
    cfg: TopologyConfig,
    rng_a: np.random.Generator | None = None,
    rng_at: np.random.Generator | None = None,
) -> AnalogResult:
    """Least-squares topology over two arrays holding A and A^T.

    The cascade's steady state enforces the normal equations
    ``(At_read A_read) x = At_read b``; the two arrays are programmed and
    read independently, so their non-idealities do not cancel.
    """
    if cfg.kind is not TopologyKind.PINV:
        raise ValueError(f"topology configured as {cfg.kind.value}, not PINV")
    m, n = array_a.active.shape
    if m < n:
        raise ValueError("PINV requires a tall (m >= n) design matrix")
    if array_at.active.shape != (n, m):
        raise ValueError(
            f"transpose array region {array_at.active.shape} must be {(n, m)}"
        )
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != m:
        raise ValueError(f"rhs length {b.shape[0]} != row count {m}")
    ga = array_a.read_conductance_matrix(rng_a)
    gat = array_at.read_conductance_matrix(rng_at)
    normal = gat @ ga
    try:
        x = solve_linear_system(normal, gat @ b)
    except SingularMatrixError:
        raise SingularMatrixError("A^T A is rank deficient") from None
    v_out, saturated = _apply_rails(x, cfg.v_rail)
    return AnalogResult(
        v_out=v_out,
        saturated=saturated,
        condition_estimate=float(np.linalg.cond(normal, 1)),
        noise_sampled=array_a.params.sigma_read > 0.0,
    )


def eigenvector_steady_state(g: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Shared EGV math on an explicit matrix: nullspace direction of (g - lam I).

    Returns the normalized vector and the smallest singular value; raises
    :class:`NotAnEigenvalueError` when lam is too far from the spectrum.
    """
    g = np.asarray(g, dtype=np.float64)
    shifted = g - lam * np.eye(g.shape[0])
    v, smin = smallest_singular_vector(shifted)
    spectral = float(np.linalg.norm(g, 2))
    if smin > EIGENVALUE_RTOL * spectral:
        raise NotAnEigenvalueError(
            f"residual {smin:.3e} exceeds {EIGENVALUE_RTOL} * ||G|| = "
            f"{EIGENVALUE_RTOL * spectral:.3e}"
        )
    return v, smin


def solve_egv(
    array: CrossbarArray,
    cfg: TopologyConfig,
    rng: np.random.Generator | None = None,
) -> AnalogResult:
    """Eigenvector topology: steady state of (G_read - lam I) v = 0.

    ``cfg.lam`` is expressed in siemens (callers converting a problem-unit
    eigenvalue divide by the scheme's units-per-siemens factor first).  The
    reported condition estimate is the smallest singular value of the
    shifted matrix, which bounds the residual ||(G - lam I) v|| / ||v||.
    """
    if cfg.kind is not TopologyKind.EGV:
        raise ValueError(f"topology configured as {cfg.kind.value}, not EGV")
    if array.active.row_count != array.active.col_count:
        raise ValueError("EGV requires a square active region")
    g = array.read_conductance_matrix(rng)
    v, smin = eigenvector_steady_state(g, cfg.lam)
    v_out, saturated = _apply_rails(v, cfg.v_rail)
    return AnalogResult(
        v_out=v_out,
        saturated=saturated,
        condition_estimate=smin,
        noise_sampled=array.params.sigma_read > 0.0,
    )


@dataclass(frozen=True)
class FeasibilityReport:
    """Pre-flight screen: conditioning, output range prediction, stability advisory."""

    condition: float
    predicted_peak: float
    saturation_risk: bool
    ill_conditioned: bool
    non_positive_definite: bool | None  # INV only, else None


def check_feasibility(array: CrossbarArray, cfg: TopologyConfig) -> FeasibilityReport:
    """Diagnose the active region against a topology before committing a solve.

    Uses a noise-free calibration read so the diagnosis is reproducible.
    The peak prediction assumes unit-magnitude inputs.
    """
    g = array.conductances()
    s = np.linalg.svd(g, compute_uv=False)
    condition = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")

    if cfg.kind is TopologyKind.MVM:
        predicted_peak = float(cfg.tia_gain * g.sum(axis=0).max())
    elif cfg.kind is TopologyKind.INV:
        if condition == float("inf"):
            predicted_peak = float("inf")
        else:
            predicted_peak = float(
                np.abs(np.linalg.inv(g)).sum(axis=1).max() / cfg.tia_gain
            )
    elif cfg.kind is TopologyKind.PINV:
        predicted_peak = float(np.abs(np.linalg.pinv(g)).sum(axis=1).max())
    else:  # EGV output is normalized to unit peak
        predicted_peak = 1.0

    non_pd = None
    if cfg.kind is TopologyKind.INV:
        sym = 0.5 * (g + g.T)
        non_pd = bool(np.linalg.eigvalsh(sym).min() <= 0.0)

    return FeasibilityReport(
        condition=condition,
        predicted_peak=predicted_peak,
        saturation_risk=predicted_peak > cfg.v_rail,
        ill_conditioned=condition > CONDITION_FLAG,
        non_positive_definite=non_pd,
    )
