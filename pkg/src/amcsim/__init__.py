"""Behavioral simulator of a reconfigurable RRAM-crossbar analog matrix computer.

Layers of the model, bottom up:

* :mod:`amcsim.device` - pulse-programmable multi-level RRAM cell
* :mod:`amcsim.crossbar` - 128x128 1T1R array with active-region selection
* :mod:`amcsim.write_verify` - verify-loop programming to level targets
* :mod:`amcsim.solvers` - the four reconfigurable circuit topologies
  (MVM, INV, PINV, EGV) emulated as one-step algebraic solvers
* :mod:`amcsim.mapping` - signed differential mapping, 4/8-bit quantization
  and bit slicing between problem values and conductance codes
* :mod:`amcsim.system` - converters, instruction set and machine state
* :mod:`amcsim.pipeline` / :mod:`amcsim.nn` / :mod:`amcsim.experiments` -
  composite problem-unit pipelines, CNN inference and the experiment harness
"""

from .crossbar import ARRAY_COLS, ARRAY_ROWS, ActiveRegion, CrossbarArray
from .device import (
    DeviceParams,
    DeviceState,
    N_LEVELS,
    apply_reset_pulse,
    apply_set_pulse,
    conductance_to_level,
    derive_rng,
    fresh_state,
    level_to_conductance,
    read_conductance,
    state_from_g,
    state_from_x,
    with_seed,
)
from .errors import (
    ConfigurationError,
    InstructionDecodeError,
    NotAnEigenvalueError,
    RegisterDecodeError,
    SimulationError,
    SingularMatrixError,
)
from .mapping import (
    DIFFERENTIAL,
    NONNEGATIVE,
    MappedMatrix,
    QuantizationScheme,
    combine_slices,
    make_scheme,
    quantize_matrix,
    reconstruct_effective_matrix,
    signed_output_combine,
)
from .solvers import (
    AnalogResult,
    FeasibilityReport,
    TopologyConfig,
    TopologyKind,
    check_feasibility,
    decode_topology,
    encode_topology,
    solve_egv,
    solve_inv,
    solve_mvm,
    solve_pinv,
)
from .system import (
    ConverterSpec,
    Instruction,
    MachineState,
    adc,
    comparison_unit,
    dac,
    decode,
    max_pool_2x2,
    parse_program,
    power_iteration,
    relu,
    run_program,
    step,
)
from .write_verify import ProgramReport, WriteVerifyConfig, program_array, program_cell

__version__ = "0.1.0"
