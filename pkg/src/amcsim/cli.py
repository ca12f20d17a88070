"""Command-line front end.

Exit codes: 0 success, 1 input error (bad files, flags, or configs),
2 numerical failure (singular matrix, eigenvalue rejection).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .config import converters_from, device_params_from, load_config, validate_keys, write_verify_from
from .device import DeviceParams, with_seed
from .errors import InstructionDecodeError, NotAnEigenvalueError, SimulationError, SingularMatrixError
from .experiments import ExperimentConfig, nn_infer, program_demo, run_validation
from .generators import generate_matrix
from .matrix_io import dump_buffer, read_matrix, write_matrix
from .system import ConverterSpec, MachineState, parse_program, run_program
from .write_verify import WriteVerifyConfig


def _add_common(parser):
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--seed", type=int, default=None, help="rng seed (required with noise on)")
    parser.add_argument("--out", help="report output path")
    parser.add_argument("--noise", choices=["on", "off"], default="on")
    parser.add_argument("--bits", type=int, choices=[4, 8], default=4)
    parser.add_argument("--ideal", action="store_true",
                        help="ideal programming instead of write-verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amcsim",
        description="Behavioral simulator of an RRAM-crossbar analog matrix computer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a test matrix file")
    p_gen.add_argument("--kind", required=True, choices=["wishart", "gram", "regression"])
    p_gen.add_argument("--dims", required=True, help="N or MxN")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)

    p_solve = sub.add_parser("solve", help="run a validation experiment")
    p_solve.add_argument("kind", choices=["mvm", "inv", "pinv", "egv"])
    p_solve.add_argument("--matrix", help="matrix text file")
    p_solve.add_argument("--generate", help="generator spec, e.g. wishart:128")
    p_solve.add_argument("--trials", type=int, default=1)
    _add_common(p_solve)

    p_nn = sub.add_parser("nn", help="neural-network commands")
    nn_sub = p_nn.add_subparsers(dest="nn_command", required=True)
    p_infer = nn_sub.add_parser("infer", help="analog CNN inference")
    p_infer.add_argument("--weights", help="weights binary (default: committed fixture)")
    p_infer.add_argument("--images", help="IDX image file (default: committed fixture)")
    p_infer.add_argument("--labels", help="IDX label file (default: committed fixture)")
    p_infer.add_argument("--limit", type=int, default=1000, help="image count (0 = all)")
    _add_common(p_infer)

    p_demo = sub.add_parser("program-demo", help="16-level write-verify demonstration")
    _add_common(p_demo)

    p_run = sub.add_parser("run", help="execute an instruction program")
    p_run.add_argument("program", help="program text file")
    p_run.add_argument("--buffer", action="append", default=[],
                       metavar="NAME=FILE", help="preload a global buffer from a matrix file")
    p_run.add_argument("--dump-dir", help="directory for output-buffer dumps")
    _add_common(p_run)

    return parser


def _settings(args) -> tuple[DeviceParams, WriteVerifyConfig, ConverterSpec]:
    params, wv, conv = DeviceParams(), WriteVerifyConfig(), ConverterSpec()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        validate_keys(cfg)
        params = device_params_from(cfg, params)
        wv = write_verify_from(cfg, wv)
        conv = converters_from(cfg, conv)
    return params, wv, conv


def _experiment_config(args, experiment: str) -> ExperimentConfig:
    params, wv, conv = _settings(args)
    return ExperimentConfig(
        experiment=experiment,
        matrix_path=getattr(args, "matrix", None),
        generator=getattr(args, "generate", None),
        n_slices=1 if args.bits == 4 else 2,
        noise=args.noise == "on",
        seed=args.seed,
        trials=getattr(args, "trials", 1),
        out=args.out,
        program_mode="ideal" if args.ideal else "write-verify",
        limit=getattr(args, "limit", 1000),
        weights_path=getattr(args, "weights", None),
        images_path=getattr(args, "images", None),
        labels_path=getattr(args, "labels", None),
        params=params,
        write_verify=wv,
        converters=conv,
    )


def _cmd_gen(args) -> int:
    dims = tuple(int(p) for p in args.dims.split("x"))
    matrix = generate_matrix(args.kind, dims, args.seed)
    write_matrix(args.out, matrix)
    print(f"wrote {matrix.shape[0]}x{matrix.shape[1]} {args.kind} matrix to {args.out}")
    return 0


def _cmd_solve(args) -> int:
    if not args.matrix and not args.generate:
        raise ValueError("solve needs --matrix or --generate")
    cfg = _experiment_config(args, args.kind)
    report = run_validation(cfg)
    if report["trials_completed"] == 0 and report["failures"]:
        name, msg = report["failures"][0][1], report["failures"][0][2]
        print(f"numerical failure: {name}: {msg}", file=sys.stderr)
        return 2
    print(f"{args.kind}: trials={report['trials_completed']} "
          f"median_rel={report['median_rel']:.4f} "
          f"median_span_rel={report['median_span_rel']:.4f}")
    for trial, name, msg in report["failures"]:
        print(f"  trial {trial} failed: {name}: {msg}", file=sys.stderr)
    return 0


def _cmd_nn_infer(args) -> int:
    cfg = _experiment_config(args, "nn-infer")
    report = nn_infer(cfg)
    print(f"images={report['images']} bits={report['bits']} "
          f"analog={report['accuracy_analog']:.4f} float={report['accuracy_float']:.4f}")
    return 0


def _cmd_program_demo(args) -> int:
    cfg = _experiment_config(args, "program-demo")
    report = program_demo(cfg)
    print(f"16-level demo: success_rate={report['success_rate']:.4f} "
          f"max_pulses={report['max_pulses']}")
    return 0


def _cmd_run(args) -> int:
    params, wv, conv = _settings(args)
    if args.noise == "on" and args.seed is None:
        raise ValueError("a seed is mandatory for any noisy run")
    if args.noise == "off":
        params = replace(params, sigma_write=0.0, sigma_read=0.0)
    if args.seed is not None:
        params = with_seed(params, args.seed)
    state = MachineState(params=params, write_verify=wv, converters=conv)
    for spec in args.buffer:
        if "=" not in spec:
            raise ValueError(f"--buffer needs NAME=FILE, got {spec!r}")
        name, path = spec.split("=", 1)
        matrix = read_matrix(path)
        if np.all(matrix == np.rint(matrix)):
            matrix = matrix.astype(np.int64)
        state.global_buffer[name] = matrix
    with open(args.program) as fh:
        program = parse_program(fh.read())
    run_program(state, program)
    print(f"ran {len(program)} instructions; output buffers: {sorted(state.output_buffer)}")
    if args.dump_dir:
        os.makedirs(args.dump_dir, exist_ok=True)
        for name, value in sorted(state.output_buffer.items()):
            dump_buffer(os.path.join(args.dump_dir, f"{name}.csv"), name, value)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "nn":
            return _cmd_nn_infer(args)
        if args.command == "program-demo":
            return _cmd_program_demo(args)
        if args.command == "run":
            return _cmd_run(args)
        raise ValueError(f"unknown command {args.command!r}")
    except (SingularMatrixError, NotAnEigenvalueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, InstructionDecodeError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
