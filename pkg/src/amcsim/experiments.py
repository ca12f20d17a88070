"""Experiment harness: validation runs, CNN inference, programming demo.

Every run resolves its configuration fully (defaults materialized), and the
emitted CSV embeds that resolved configuration plus the seed as leading
comment lines, so a report is reproducible bit for bit from its own header.

Error metric: per-component relative error |analog - reference| / |reference|,
restricted to components with |reference| >= 1% of max |reference|; the
summary carries median and mean of that metric, and also the span-normalized
variant |analog - reference| / max |reference| over the same components.
The per-component median is the primary acceptance statistic.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace

import numpy as np

from .device import DeviceParams, STREAM_EXPERIMENT, derive_rng, with_seed
from .errors import NotAnEigenvalueError, SingularMatrixError
from .generators import gram, regression_problem, wishart
from .mapping import DIFFERENTIAL, make_scheme
from .matrix_io import read_matrix
from .mnist import load_idx_images, load_idx_labels
from .nn import AnalogNet, float_forward, load_weights
from .pipeline import (
    analog_eigenvector,
    analog_least_squares,
    analog_matvec,
    analog_solve,
    program_matrix,
)
from .system import ConverterSpec, MachineState, power_iteration
from .write_verify import WriteVerifyConfig, program_array
from .crossbar import ActiveRegion, CrossbarArray

#: default regression observation-noise level (problem SNR near one)
REGRESSION_NOISE = 1.0

SOLVE_KINDS = ("mvm", "inv", "pinv", "egv")


@dataclass
class ExperimentConfig:
    """Resolved description of one harness invocation."""

    experiment: str
    matrix_path: str | None = None
    generator: str | None = None        # e.g. "wishart:128", "regression:128x6"
    n_slices: int = 1                   # 1 -> 4-bit, 2 -> 8-bit
    signed_mode: str = DIFFERENTIAL
    a_max: float | None = None          # None -> max |A| of the instance
    noise: bool = True
    seed: int | None = None
    trials: int = 1
    out: str | None = None
    program_mode: str = "write-verify"  # or "ideal"
    limit: int = 1000                   # image count for inference
    weights_path: str | None = None
    images_path: str | None = None
    labels_path: str | None = None
    params: DeviceParams = field(default_factory=DeviceParams)
    write_verify: WriteVerifyConfig = field(default_factory=WriteVerifyConfig)
    converters: ConverterSpec = field(default_factory=ConverterSpec)

    def __post_init__(self):
        if self.experiment not in SOLVE_KINDS + ("nn-infer", "program-demo", "run"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.n_slices not in (1, 2):
            raise ValueError("n_slices must be 1 or 2")
        if self.program_mode not in ("write-verify", "ideal"):
            raise ValueError("program_mode must be write-verify or ideal")
        if self.noise and self.seed is None:
            raise ValueError("a seed is mandatory for any noisy run")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def effective_params(self) -> DeviceParams:
        params = self.params
        if not self.noise:
            params = replace(params, sigma_write=0.0, sigma_read=0.0)
        if self.seed is not None:
            params = with_seed(params, self.seed)
        return params


def error_stats(reference: np.ndarray, analog: np.ndarray, floor_frac: float = 0.01) -> dict:
    """Error summary over components with |reference| above the floor."""
    ref = np.asarray(reference, dtype=np.float64).ravel()
    out = np.asarray(analog, dtype=np.float64).ravel()
    span = float(np.abs(ref).max()) if ref.size else 0.0
    if span == 0.0:
        return {"components": 0, "median_rel": 0.0, "mean_rel": 0.0,
                "median_span_rel": 0.0, "mean_span_rel": 0.0}
    mask = np.abs(ref) >= floor_frac * span
    err = np.abs(out - ref)[mask]
    rel = err / np.abs(ref)[mask]
    span_rel = err / span
    return {
        "components": int(mask.sum()),
        "median_rel": float(np.median(rel)),
        "mean_rel": float(np.mean(rel)),
        "median_span_rel": float(np.median(span_rel)),
        "mean_span_rel": float(np.mean(span_rel)),
    }


def _parse_generator(spec: str) -> tuple[str, tuple[int, ...]]:
    if ":" not in spec:
        raise ValueError(f"generator spec {spec!r} must look like kind:dims")
    kind, dims = spec.split(":", 1)
    parts = tuple(int(p) for p in dims.split("x"))
    if kind not in ("wishart", "gram", "regression"):
        raise ValueError(f"unknown generator {kind!r}")
    if any(p < 1 for p in parts):
        raise ValueError("generator dimensions must be >= 1")
    if kind == "regression" and len(parts) != 2:
        raise ValueError("regression generator needs MxN dimensions")
    if kind in ("wishart", "gram") and len(parts) != 1:
        raise ValueError(f"{kind} generator needs one dimension")
    return kind, parts


def _resolved_config_lines(cfg: ExperimentConfig, extra: dict) -> list[str]:
    params = cfg.effective_params()
    values = {
        "experiment": cfg.experiment,
        "generator": cfg.generator,
        "matrix_path": cfg.matrix_path,
        "n_slices": cfg.n_slices,
        "signed_mode": cfg.signed_mode,
        "a_max": cfg.a_max,
        "noise": cfg.noise,
        "seed": cfg.seed,
        "trials": cfg.trials,
        "program_mode": cfg.program_mode,
    }
    for name, obj in (("device", params), ("wv", cfg.write_verify), ("conv", cfg.converters)):
        for fname, value in vars(obj).items():
            values[f"{name}.{fname}"] = value
    values.update(extra)
    return [f"# {k} = {values[k]}" for k in sorted(values)]


def _trial_problem(cfg: ExperimentConfig, trial: int):
    """Instance (matrix, rhs) for one trial, deterministic in (seed, trial)."""
    seed = cfg.seed if cfg.seed is not None else 0
    rng = derive_rng(seed, STREAM_EXPERIMENT, trial, 0)
    if cfg.matrix_path is not None:
        a = read_matrix(cfg.matrix_path)
    else:
        kind, dims = _parse_generator(cfg.generator or "wishart:128")
        if kind == "wishart":
            a = wishart(dims[0], rng)
        elif kind == "gram":
            a = gram(dims[0], rng)
        else:
            a, obs, _ = regression_problem(dims[0], dims[1], rng, noise=REGRESSION_NOISE)
            return a, obs
    in_rng = derive_rng(seed, STREAM_EXPERIMENT, trial, 1)
    return a, in_rng.standard_normal(a.shape[0])


def run_validation(cfg: ExperimentConfig) -> dict:
    """One of the four solve experiments; writes the report CSV if cfg.out is set.

    Pipeline per trial: generate (or load), quantize, program by write-verify,
    configure the topology, solve, convert through the ADC, rescale to problem
    units, and compare against the float oracle on the generated problem.
    """
    if cfg.experiment not in SOLVE_KINDS:
        raise ValueError(f"run_validation cannot run {cfg.experiment!r}")
    params = cfg.effective_params()
    ideal = cfg.program_mode == "ideal"
    wv = cfg.write_verify
    conv = cfg.converters

    rows = []
    summaries = []
    failures = []
    for trial in range(cfg.trials):
        a, b = _trial_problem(cfg, trial)
        a_max = cfg.a_max if cfg.a_max is not None else float(np.abs(a).max())
        scheme = make_scheme(params, a_max=a_max, n_slices=cfg.n_slices,
                             signed_mode=cfg.signed_mode)
        base = trial * 64
        try:
            if cfg.experiment == "mvm":
                pm = program_matrix(a, scheme, params, wv, stream_base=base, ideal=ideal)
                result = analog_matvec(pm, b, converters=conv)
                reference = a @ b
            elif cfg.experiment == "inv":
                pm = program_matrix(a, scheme, params, wv, stream_base=base, ideal=ideal)
                result = analog_solve(pm, b, converters=conv)
                reference = np.linalg.solve(a, b)
            elif cfg.experiment == "pinv":
                pm_a = program_matrix(a, scheme, params, wv, stream_base=base, ideal=ideal)
                pm_at = program_matrix(
                    a.T, scheme, params, wv, stream_base=base + 32, ideal=ideal)
                result = analog_least_squares(pm_a, pm_at, b, converters=conv)
                reference = np.linalg.lstsq(a, b, rcond=None)[0]
            else:  # egv
                pm = program_matrix(a, scheme, params, wv, stream_base=base, ideal=ideal)
                lam = power_iteration(pm.reconstructed()).eigenvalue
                result = analog_eigenvector(pm, lam, converters=conv)
                w, vecs = np.linalg.eigh(0.5 * (a + a.T))
                reference = vecs[:, -1] / vecs[np.argmax(np.abs(vecs[:, -1])), -1]
        except (SingularMatrixError, NotAnEigenvalueError) as exc:
            failures.append((trial, type(exc).__name__, str(exc)))
            continue
        except np.linalg.LinAlgError as exc:
            # the float oracle can reject a problem (e.g. an exactly
            # singular input) even when the perturbed analog solve ran
            failures.append((trial, "SingularMatrixError", f"oracle: {exc}"))
            continue

        stats = error_stats(reference, result.value)
        stats["trial"] = trial
        stats["saturated"] = result.saturated
        if cfg.experiment == "egv":
            cos = float(abs(reference @ result.value)
                        / (np.linalg.norm(reference) * np.linalg.norm(result.value)))
            stats["cosine_similarity"] = cos
        summaries.append(stats)
        for i, (r, o) in enumerate(zip(np.ravel(reference), np.ravel(result.value))):
            rows.append((trial, i, r, o))

    pooled = _pooled_stats(rows)
    report = {
        "experiment": cfg.experiment,
        "trials_completed": len(summaries),
        "failures": failures,
        "per_trial": summaries,
        **pooled,
    }
    if cfg.experiment == "egv" and summaries:
        report["cosine_similarity"] = summaries[-1]["cosine_similarity"]
    if cfg.out:
        _write_validation_csv(cfg, report, rows)
    return report


def _pooled_stats(rows) -> dict:
    """Primary statistics over all (reference, analog) pairs pooled across trials."""
    if not rows:
        return {"median_rel": float("nan"), "mean_rel": float("nan"),
                "median_span_rel": float("nan"), "mean_span_rel": float("nan")}
    ref = np.array([r[2] for r in rows])
    out = np.array([r[3] for r in rows])
    stats = error_stats(ref, out)
    return {k: stats[k] for k in ("median_rel", "mean_rel", "median_span_rel", "mean_span_rel")}


def _write_validation_csv(cfg: ExperimentConfig, report: dict, rows) -> None:
    lines = _resolved_config_lines(cfg, {})
    for key in ("median_rel", "mean_rel", "median_span_rel", "mean_span_rel"):
        lines.append(f"# summary.{key} = {report[key]!r}")
    lines.append(f"# summary.trials_completed = {report['trials_completed']}")
    for trial, name, msg in report["failures"]:
        lines.append(f"# failure.trial{trial} = {name}: {msg}")
    for stats in report["per_trial"]:
        t = stats["trial"]
        lines.append(f"# trial{t}.median_rel = {stats['median_rel']!r}")
        lines.append(f"# trial{t}.median_span_rel = {stats['median_span_rel']!r}")
        lines.append(f"# trial{t}.saturated = {stats['saturated']}")
        if "cosine_similarity" in stats:
            lines.append(f"# trial{t}.cosine_similarity = {stats['cosine_similarity']!r}")
    with open(cfg.out, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write("trial,component,numerical,analog\n")
        for trial, i, r, o in rows:
            fh.write(f"{trial},{i},{float(r)!r},{float(o)!r}\n")


# ---------------------------------------------------------------------------
# CNN inference
# ---------------------------------------------------------------------------

def default_asset(name: str) -> str:
    """Path of a committed fixture asset (weights, demo image set)."""
    return str(importlib.resources.files("amcsim").joinpath("assets", name))


def nn_infer(cfg: ExperimentConfig) -> dict:
    """Analog CNN inference over an image set, with the float oracle alongside."""
    if cfg.experiment != "nn-infer":
        raise ValueError("nn_infer expects an nn-infer config")
    weights = cfg.weights_path or default_asset("digits_cnn.weights")
    images_path = cfg.images_path or default_asset("digits_test_images.idx.gz")
    labels_path = cfg.labels_path or default_asset("digits_test_labels.idx.gz")

    layers = load_weights(weights)
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}")
    if cfg.limit:
        images = images[: cfg.limit]
        labels = labels[: cfg.limit]
    pixels = images.astype(np.float64) / 255.0

    params = cfg.effective_params()
    machine = MachineState(params=params, write_verify=cfg.write_verify,
                           converters=cfg.converters)
    net = AnalogNet(layers, machine, n_slices=cfg.n_slices,
                    ideal=cfg.program_mode == "ideal")
    logits_analog = net.forward(pixels)
    logits_float = float_forward(layers, pixels)

    pred_analog = logits_analog.argmax(axis=1)
    pred_float = logits_float.argmax(axis=1)
    report = {
        "images": int(labels.shape[0]),
        "bits": 4 * cfg.n_slices,
        "accuracy_analog": float((pred_analog == labels).mean()),
        "accuracy_float": float((pred_float == labels).mean()),
    }
    if cfg.out:
        lines = _resolved_config_lines(cfg, {
            "weights_path": weights, "images_path": images_path,
            "labels_path": labels_path, "limit": cfg.limit,
        })
        for key in ("images", "bits", "accuracy_analog", "accuracy_float"):
            lines.append(f"# summary.{key} = {report[key]!r}")
        with open(cfg.out, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
            fh.write("index,label,pred_float,pred_analog\n")
            for i, (lab, pf, pa) in enumerate(zip(labels, pred_float, pred_analog)):
                fh.write(f"{i},{int(lab)},{int(pf)},{int(pa)}\n")
    return report


# ---------------------------------------------------------------------------
# Write-verify demo
# ---------------------------------------------------------------------------

def program_demo(cfg: ExperimentConfig, cells_per_level: int = 128) -> dict:
    """Program all 16 levels into a block of cells and summarize the outcome."""
    params = cfg.effective_params()
    n_levels = 16
    cols = cells_per_level
    array = CrossbarArray(params, stream_key=0)
    array.select_region(ActiveRegion(0, n_levels, 0, cols))
    targets = np.repeat(np.arange(n_levels)[:, None], cols, axis=1)
    _, report = program_array(array, targets, cfg.write_verify)
    readback = array.conductances()

    per_level = []
    for level in range(n_levels):
        per_level.append({
            "level": level,
            "success_rate": float(report.success[level].mean()),
            "mean_pulses": float(report.pulses_used[level].mean()),
            "mean_g": float(readback[level].mean()),
            "std_g": float(readback[level].std()),
        })
    result = {
        "success_rate": report.success_rate,
        "max_pulses": int(report.pulses_used.max()),
        "per_level": per_level,
    }
    if cfg.out:
        lines = _resolved_config_lines(cfg, {"cells_per_level": cells_per_level})
        lines.append(f"# summary.success_rate = {result['success_rate']!r}")
        lines.append(f"# summary.max_pulses = {result['max_pulses']}")
        with open(cfg.out, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
            fh.write("level,success_rate,mean_pulses,mean_g,std_g\n")
            for entry in per_level:
                fh.write(f"{entry['level']},{entry['success_rate']!r},"
                         f"{entry['mean_pulses']!r},{entry['mean_g']!r},{entry['std_g']!r}\n")
    return result
