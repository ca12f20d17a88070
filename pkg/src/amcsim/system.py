"""System-level model: converters, instruction set, machine state, digital units.

The machine couples a digital control path to a group of 16 analog macros
(crossbar array + topology + rng stream).  Programs drive two data paths:

* write-verify path: ``WRV`` programs a macro from level targets held in the
  global buffer, with comparison units checking conductance bands;
* solution path: ``CFG`` writes the register array, ``EXE`` runs the
  configured solve on DAC-converted inputs, ``RDO`` converts the analog
  result through the ADC into the output buffer.

``MOV``, ``POOL``, ``ACT`` and ``CMP`` are the digital functional units used
between analog layers.  The nine-opcode ISA is the smallest set that
exercises both paths end to end; the text form is one instruction per line,
``OPCODE key=value ...`` with ``#`` comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crossbar import ActiveRegion, CrossbarArray
from .device import DeviceParams
from .errors import ConfigurationError, InstructionDecodeError
from .solvers import (
    DEFAULT_TIA_GAIN,
    DEFAULT_V_RAIL,
    AnalogResult,
    TopologyConfig,
    TopologyKind,
    decode_topology,
    encode_topology,
    solve_egv,
    solve_inv,
    solve_mvm,
    solve_pinv,
)
from .write_verify import ArrayProgramReport, WriteVerifyConfig, program_array

N_MACROS = 16


# ---------------------------------------------------------------------------
# DA/AD interfaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConverterSpec:
    """Bit widths and full-scale voltage of the DA/AD interfaces."""

    dac_bits: int = 8
    adc_bits: int = 8
    v_ref: float = 1.0

    def __post_init__(self):
        if self.dac_bits < 1 or self.adc_bits < 1:
            raise ValueError("converter bit widths must be >= 1")
        if self.v_ref <= 0:
            raise ValueError("v_ref must be positive")


def dac(code, spec: ConverterSpec):
    """Offset-binary DAC: code 0 -> -v_ref, full code -> +v_ref - 1 LSB.

    The mid code maps exactly to 0 V.  Accepts scalars or integer arrays.
    """
    codes = np.asarray(code)
    if codes.size and not np.issubdtype(codes.dtype, np.integer):
        raise ValueError("DAC codes must be integers")
    top = 2 ** spec.dac_bits - 1
    if codes.size and (codes.min() < 0 or codes.max() > top):
        raise ValueError(f"DAC code outside [0, {top}]")
    lsb = 2.0 * spec.v_ref / 2 ** spec.dac_bits
    out = -spec.v_ref + codes * lsb
    return float(out) if np.isscalar(code) else out


def adc(v, spec: ConverterSpec):
    """Inverse converter with clamping at full scale; adc(dac(c)) == c."""
    lsb = 2.0 * spec.v_ref / 2 ** spec.adc_bits
    codes = np.rint((np.asarray(v, dtype=np.float64) + spec.v_ref) / lsb).astype(np.int64)
    codes = np.clip(codes, 0, 2 ** spec.adc_bits - 1)
    return int(codes) if np.isscalar(v) else codes


def to_dac_codes(values, spec: ConverterSpec):
    """Quantize normalized values in [-v_ref, v_ref] onto the DAC code grid."""
    lsb = 2.0 * spec.v_ref / 2 ** spec.dac_bits
    codes = np.rint((np.asarray(values, dtype=np.float64) + spec.v_ref) / lsb)
    return np.clip(codes, 0, 2 ** spec.dac_bits - 1).astype(np.int64)


def adc_value(codes, spec: ConverterSpec):
    """Digital voltage represented by ADC codes (offset-binary, adc_bits wide)."""
    lsb = 2.0 * spec.v_ref / 2 ** spec.adc_bits
    return -spec.v_ref + np.asarray(codes, dtype=np.float64) * lsb


# ---------------------------------------------------------------------------
# Digital functional units
# ---------------------------------------------------------------------------

def comparison_unit(readout: np.ndarray, ideal: np.ndarray, tol: float) -> np.ndarray:
    """Per-entry band check |readout - ideal| <= tol (closed interval)."""
    readout = np.asarray(readout)
    ideal = np.asarray(ideal)
    if readout.shape != ideal.shape:
        raise ValueError(f"shape mismatch {readout.shape} vs {ideal.shape}")
    return np.abs(readout - ideal) <= tol


def max_pool_2x2(feature_map: np.ndarray) -> np.ndarray:
    """2x2 stride-2 max pooling over the trailing two axes."""
    fm = np.asarray(feature_map)
    if fm.ndim < 2:
        raise ValueError("pooling needs at least two spatial dimensions")
    h, w = fm.shape[-2], fm.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"spatial dimensions must be even, got {h}x{w}")
    pooled = fm.reshape(fm.shape[:-2] + (h // 2, 2, w // 2, 2))
    return pooled.max(axis=(-3, -1))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x), 0)


@dataclass(frozen=True)
class PowerIterationResult:
    eigenvalue: float
    iterations: int
    converged: bool


def power_iteration(matrix: np.ndarray, iters: int = 1000, tol: float = 1e-10) -> PowerIterationResult:
    """Dominant-eigenvalue Rayleigh quotient by plain power iteration.

    Deterministic start vector (normalized ones).  Stops when the quotient
    is stable to ``tol`` relative or the iteration budget runs out.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("power iteration needs a square matrix")
    n = m.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = float(v @ (m @ v))
    for k in range(1, iters + 1):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return PowerIterationResult(0.0, k, True)
        v = w / norm
        new_lam = float(v @ (m @ v))
        if abs(new_lam - lam) <= tol * abs(new_lam):
            return PowerIterationResult(new_lam, k, True)
        lam = new_lam
    return PowerIterationResult(lam, iters, False)


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------

_INT_KEYS = {"macro", "aux", "row0", "col0", "rows", "cols"}
_FLOAT_KEYS = {"gain", "rail", "lam", "tol"}
_STR_KEYS = {"src", "dst", "a", "b", "kind", "from", "to", "abank", "bbank"}

#: opcode -> (required keys, optional keys)
OPCODE_SCHEMA = {
    "WRV": ({"macro", "src"}, {"row0", "col0"}),
    "CFG": ({"macro", "kind"}, {"gain", "rail", "lam"}),
    "EXE": ({"macro"}, {"src", "aux"}),
    "RDO": ({"macro", "dst"}, set()),
    "MOV": ({"src", "dst"}, {"from", "to", "rows", "cols"}),
    "POOL": ({"src", "dst"}, set()),
    "ACT": ({"src", "dst"}, set()),
    "CMP": ({"a", "b", "dst", "tol"}, {"abank", "bbank"}),
    "HALT": (set(), set()),
}


@dataclass(frozen=True)
class Instruction:
    opcode: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.opcode not in OPCODE_SCHEMA:
            raise InstructionDecodeError(f"unknown opcode {self.opcode!r}")
        required, optional = OPCODE_SCHEMA[self.opcode]
        keys = set(self.args)
        missing = required - keys
        unknown = keys - required - optional
        if missing:
            raise InstructionDecodeError(f"{self.opcode}: missing operands {sorted(missing)}")
        if unknown:
            raise InstructionDecodeError(f"{self.opcode}: unknown operands {sorted(unknown)}")
        macro = self.args.get("macro")
        if macro is not None and not 0 <= macro < N_MACROS:
            raise InstructionDecodeError(f"macro id {macro} outside [0, {N_MACROS - 1}]")
        aux = self.args.get("aux")
        if aux is not None and not 0 <= aux < N_MACROS:
            raise InstructionDecodeError(f"aux macro id {aux} outside [0, {N_MACROS - 1}]")

    def text(self) -> str:
        parts = [self.opcode]
        parts += [f"{k}={self.args[k]}" for k in self.args]
        return " ".join(parts)


def _parse_value(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _STR_KEYS:
            return raw
    except ValueError:
        raise InstructionDecodeError(f"bad value {raw!r} for operand {key!r}") from None
    raise InstructionDecodeError(f"unknown operand {key!r}")


def decode(instr_word: str) -> Instruction:
    """Decode one instruction word (a program text line) into an Instruction."""
    tokens = instr_word.split()
    if not tokens:
        raise InstructionDecodeError("empty instruction")
    opcode, args = tokens[0], {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise InstructionDecodeError(f"operand {tok!r} is not key=value")
        key, raw = tok.split("=", 1)
        if key in args:
            raise InstructionDecodeError(f"duplicate operand {key!r}")
        args[key] = _parse_value(key, raw)
    return Instruction(opcode=opcode, args=args)


def parse_program(text: str) -> list[Instruction]:
    """Parse program text, skipping blank lines and '#' comments."""
    program = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        try:
            program.append(decode(stripped))
        except InstructionDecodeError as exc:
            raise InstructionDecodeError(f"line {lineno}: {exc}") from None
    return program


# ---------------------------------------------------------------------------
# Machine
# ---------------------------------------------------------------------------

@dataclass
class Macro:
    """One analog macro: crossbar, current topology, latest analog result."""

    array: CrossbarArray
    topology: TopologyConfig | None = None
    last_result: AnalogResult | None = None
    last_report: ArrayProgramReport | None = None


class MachineState:
    """Instruction stack, 16 macros, register array and the two buffer stores.

    All randomness derives from ``params.rng_seed``; macro ``m`` owns the
    stream keyed by its index, so a program run is a pure function of
    (initial state, program, seed).
    """

    def __init__(
        self,
        params: DeviceParams | None = None,
        write_verify: WriteVerifyConfig | None = None,
        converters: ConverterSpec | None = None,
    ):
        self.params = params if params is not None else DeviceParams()
        self.write_verify = write_verify if write_verify is not None else WriteVerifyConfig()
        self.converters = converters if converters is not None else ConverterSpec()
        self.macros = [Macro(CrossbarArray(self.params, stream_key=m)) for m in range(N_MACROS)]
        self.register_array: list[np.ndarray | None] = [None] * N_MACROS
        self.global_buffer: dict[str, np.ndarray] = {}
        self.output_buffer: dict[str, np.ndarray] = {}
        self.program: list[Instruction] = []
        self.pc = 0
        self.halted = False

    # -- buffer plumbing ----------------------------------------------------

    def _bank(self, name: str) -> dict:
        if name == "global":
            return self.global_buffer
        if name == "output":
            return self.output_buffer
        raise ValueError(f"unknown buffer bank {name!r}")

    def _fetch(self, bank: str, key: str) -> np.ndarray:
        store = self._bank(bank)
        if key not in store:
            raise ValueError(f"no buffer {key!r} in {bank} store")
        return store[key]

    # -- instruction semantics -----------------------------------------------

    def _exec_wrv(self, args):
        macro = self.macros[args["macro"]]
        targets = self._fetch("global", args["src"])
        if targets.ndim != 2:
            raise ValueError("WRV targets must be a level matrix")
        if not np.issubdtype(targets.dtype, np.integer):
            raise ValueError("WRV targets must be integer level codes")
        region = ActiveRegion(
            args.get("row0", 0), targets.shape[0], args.get("col0", 0), targets.shape[1]
        )
        macro.array.select_region(region)
        _, report = program_array(macro.array, targets, self.write_verify)
        macro.last_report = report

    def _exec_cfg(self, args):
        idx = args["macro"]
        try:
            kind = TopologyKind(args["kind"])
        except ValueError:
            raise InstructionDecodeError(f"unknown topology kind {args['kind']!r}") from None
        cfg = TopologyConfig(
            kind=kind,
            tia_gain=args.get("gain", DEFAULT_TIA_GAIN),
            v_rail=args.get("rail", DEFAULT_V_RAIL),
            lam=args.get("lam"),
        )
        bits = encode_topology(cfg)
        self.register_array[idx] = bits
        self.macros[idx].topology = decode_topology(bits)

    def _exec_exe(self, args):
        macro = self.macros[args["macro"]]
        topo = macro.topology
        if topo is None:
            raise ConfigurationError(f"EXE at pc {self.pc}: macro {args['macro']} not configured")
        if topo.kind is TopologyKind.EGV:
            macro.last_result = solve_egv(macro.array, topo)
            return
        if "src" not in args:
            raise ValueError(f"EXE with {topo.kind.value} needs an input buffer")
        codes = self._fetch("global", args["src"])
        if not np.issubdtype(codes.dtype, np.integer):
            raise ValueError("EXE input buffer must hold DAC codes")
        v_in = dac(codes, self.converters)
        if topo.kind is TopologyKind.MVM:
            macro.last_result = solve_mvm(macro.array, v_in, topo)
        elif topo.kind is TopologyKind.INV:
            macro.last_result = solve_inv(macro.array, v_in, topo)
        else:  # PINV
            if "aux" not in args:
                raise ValueError("EXE with PINV needs aux=<macro holding the transpose>")
            aux = self.macros[args["aux"]]
            macro.last_result = solve_pinv(macro.array, aux.array, v_in, topo)

    def _exec_rdo(self, args):
        macro = self.macros[args["macro"]]
        if macro.last_result is None:
            raise ConfigurationError(f"RDO at pc {self.pc}: macro has no result to read out")
        self.output_buffer[args["dst"]] = adc(macro.last_result.v_out, self.converters)

    def _exec_mov(self, args):
        value = self._fetch(args.get("from", "global"), args["src"])
        if "rows" in args or "cols" in args:
            if not ("rows" in args and "cols" in args):
                raise ValueError("MOV reshape needs both rows and cols")
            try:
                value = value.reshape(args["rows"], args["cols"])
            except ValueError:
                raise ValueError(
                    f"cannot reshape buffer of size {value.size} to "
                    f"{args['rows']}x{args['cols']}"
                ) from None
        self._bank(args.get("to", "global"))[args["dst"]] = value.copy()

    def _exec_pool(self, args):
        fm = self._fetch("global", args["src"])
        if fm.ndim != 2:
            raise ValueError("POOL operates on a matrix buffer")
        self.global_buffer[args["dst"]] = max_pool_2x2(fm)

    def _exec_act(self, args):
        self.global_buffer[args["dst"]] = relu(self._fetch("global", args["src"]))

    def _exec_cmp(self, args):
        a = self._fetch(args.get("abank", "global"), args["a"])
        b = self._fetch(args.get("bbank", "global"), args["b"])
        self.global_buffer[args["dst"]] = comparison_unit(a, b, args["tol"])


def step(state: MachineState) -> MachineState:
    """Execute exactly one instruction of the loaded program."""
    if state.halted:
        raise ConfigurationError("machine is halted")
    if not 0 <= state.pc < len(state.program):
        raise ConfigurationError(f"pc {state.pc} outside program of {len(state.program)}")
    instr = state.program[state.pc]
    if instr.opcode == "HALT":
        state.halted = True
    else:
        getattr(state, f"_exec_{instr.opcode.lower()}")(instr.args)
    state.pc += 1
    return state


def run_program(state: MachineState, program) -> MachineState:
    """Load a HALT-terminated program into the instruction stack and run it."""
    if isinstance(program, str):
        program = parse_program(program)
    if not program or program[-1].opcode != "HALT":
        raise InstructionDecodeError("program must be terminated by HALT")
    state.program = list(program)
    state.pc = 0
    state.halted = False
    while not state.halted:
        step(state)
    return state
