"""Command-line interface.

Four subcommands cover the pipeline:

* ``synth``     generate synthetic models/datasets (custom or the
                ``benchmark4`` preset suite),
* ``calibrate`` run the calibration stage on a dataset,
* ``monitor``   run sparse monitoring against a calibration result,
* ``assess``    turn a calibration/monitoring pair into damage
                probability curves and a report.

Exit codes: 0 success, 1 input or validation problem, 2 numerical or
convergence failure. Every run writes a ``manifest.json`` recording the
command, the effective configuration, input file hashes and outputs; all
randomness flows from the explicit ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .assessment import build_report, damage_curve, write_curves_csv, write_report
from .errors import ConvergenceError, FormatError, NumericalError
from .modal import load_dataset, save_dataset, dataset_to_dict
from .solver import (
    SolverConfig,
    TraceRecord,
    calibration_from_dict,
    calibration_to_dict,
    monitoring_from_dict,
    monitoring_to_dict,
    run_calibration,
    run_monitoring,
)
from .structural import load_model, model_to_dict, save_model
from .synth import (
    DamageScenario,
    NoiseSpec,
    benchmark_spec,
    generate_dataset,
    make_benchmark_suite,
    model_discrepancy,
)


def _str2bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TraceRecord.FIELDS)
        for record in trace:
            writer.writerow(record.row())


class _Manifest:
    def __init__(self, command: str, args: argparse.Namespace):
        self.doc = {
            "tool": f"sparsemodal {__version__}",
            "command": command,
            "argv": sys.argv[1:],
            "config": {},
            "inputs": {},
            "outputs": [],
            "warnings": [],
        }
        self._t0 = time.monotonic()
        self.out_dir = Path(args.out)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def add_input(self, path) -> None:
        self.doc["inputs"][str(path)] = _sha256(path)

    def add_output(self, path) -> None:
        self.doc["outputs"].append(str(path))

    def write(self) -> None:
        self.doc["elapsed_seconds"] = round(time.monotonic() - self._t0, 3)
        _write_json(self.doc, self.out_dir / "manifest.json")


def _solver_config(args) -> SolverConfig:
    """Defaults, overridden by --config file values, overridden by flags."""
    values = {}
    if args.config:
        with open(args.config) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError("<config>", f"malformed JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise FormatError("<config>", "config file must hold a JSON object")
        known = set(SolverConfig.__dataclass_fields__)
        unknown = set(loaded) - known
        if unknown:
            raise FormatError("<config>", f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for flag, key in (
        ("b0", "b0"),
        ("alpha_min", "alpha_min"),
        ("tol_theta", "tol_theta"),
        ("tol_log_alpha", "tol_log_alpha"),
        ("max_iters", "max_iters"),
        ("no_increase_constraint", "enforce_no_increase"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return SolverConfig(**values)


def _add_common_solver_flags(parser) -> None:
    parser.add_argument("--config", help="JSON file with solver configuration")
    parser.add_argument("--b0", type=float, default=None, help="prior scale for the equation-error precision")
    parser.add_argument("--alpha-min", type=float, default=None, dest="alpha_min")
    parser.add_argument("--tol-theta", type=float, default=None, dest="tol_theta")
    parser.add_argument("--tol-log-alpha", type=float, default=None, dest="tol_log_alpha")
    parser.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    parser.add_argument("--out", required=True, help="output directory")


def cmd_calibrate(args) -> int:
    manifest = _Manifest("calibrate", args)
    basis = load_model(args.model)
    dataset = load_dataset(args.dataset)
    manifest.add_input(args.model)
    manifest.add_input(args.dataset)
    config = _solver_config(args)
    manifest.doc["config"] = {
        k: getattr(config, k) for k in SolverConfig.__dataclass_fields__
    }
    try:
        result = run_calibration(basis, dataset, config=config)
    except ConvergenceError as exc:
        trace_path = manifest.out_dir / "trace.csv"
        _write_trace_csv(exc.trace or (), trace_path)
        manifest.add_output(trace_path)
        manifest.doc["warnings"].append(str(exc))
        manifest.write()
        print(f"error: {exc} (trace written to {trace_path})", file=sys.stderr)
        return 2

    doc = calibration_to_dict(result)
    doc["labels"] = list(basis.labels)
    out = manifest.out_dir / "calibration.json"
    _write_json(doc, out)
    trace_path = manifest.out_dir / "trace.csv"
    _write_trace_csv(result.trace, trace_path)
    for path in (out, trace_path):
        manifest.add_output(path)
    manifest.write()
    print(f"calibration converged in {result.n_iters} iterations -> {out}")
    return 0


def cmd_monitor(args) -> int:
    manifest = _Manifest("monitor", args)
    basis = load_model(args.model)
    dataset = load_dataset(args.dataset)
    with open(args.calibration) as fh:
        try:
            calibration_doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError("<calibration>", f"malformed JSON: {exc}") from None
    calibration = calibration_from_dict(calibration_doc)
    for path in (args.model, args.dataset, args.calibration):
        manifest.add_input(path)
    config = _solver_config(args)
    manifest.doc["config"] = {
        k: getattr(config, k) for k in SolverConfig.__dataclass_fields__
    }
    try:
        result = run_monitoring(basis, dataset, calibration, config)
    except ConvergenceError as exc:
        trace_path = manifest.out_dir / "trace.csv"
        _write_trace_csv(exc.trace or (), trace_path)
        manifest.add_output(trace_path)
        manifest.doc["warnings"].append(str(exc))
        manifest.write()
        print(f"error: {exc} (trace written to {trace_path})", file=sys.stderr)
        return 2

    doc = monitoring_to_dict(result)
    doc["labels"] = list(basis.labels)
    out = manifest.out_dir / "monitoring.json"
    _write_json(doc, out)
    trace_path = manifest.out_dir / "trace.csv"
    _write_trace_csv(result.trace, trace_path)
    report = build_report(calibration, result, labels=basis.labels)
    report_path = manifest.out_dir / "report.txt"
    with open(report_path, "w") as fh:
        from .assessment import render_report_text

        fh.write(render_report_text(report))
    for path in (out, trace_path, report_path):
        manifest.add_output(path)
    manifest.doc["warnings"].extend(result.warnings)
    manifest.write()
    flagged = report.flagged()
    print(
        f"monitoring converged in {result.n_iters} iterations; "
        f"{len(result.pruned)} pruned, flagged: {list(flagged) or 'none'} -> {out}"
    )
    return 0


def cmd_assess(args) -> int:
    manifest = _Manifest("assess", args)
    with open(args.calibration) as fh:
        calibration_doc = json.load(fh)
    with open(args.monitoring) as fh:
        monitoring_doc = json.load(fh)
    calibration = calibration_from_dict(calibration_doc)
    monitoring = monitoring_from_dict(monitoring_doc)
    for path in (args.calibration, args.monitoring):
        manifest.add_input(path)
    n = calibration.theta_u_hat.shape[0]
    if monitoring.theta_d.shape[0] != n:
        print(
            f"error: calibration has {n} substructures but monitoring has "
            f"{monitoring.theta_d.shape[0]}",
            file=sys.stderr,
        )
        return 1
    labels = monitoring_doc.get("labels") or calibration_doc.get("labels")
    if labels is None:
        labels = [str(j + 1) for j in range(n)]

    grid = np.arange(0.0, args.f_max + args.f_step / 2, args.f_step)
    sd_u = np.sqrt(np.diag(calibration.sigma_u))
    sd_d = np.sqrt(np.diag(monitoring.sigma_d))
    curves = tuple(
        damage_curve(
            calibration.theta_u_hat[j],
            sd_u[j],
            monitoring.theta_d[j],
            sd_d[j],
            f_grid=grid,
            substructure=labels[j],
            swap_variances=args.eq44_as_printed,
        )
        for j in range(n)
    )
    report = build_report(
        calibration,
        monitoring,
        curves=curves,
        labels=labels,
        metadata={"swap_variances": args.eq44_as_printed},
    )
    curves_path = manifest.out_dir / "damage_curves.csv"
    write_curves_csv(curves, curves_path)
    report_json = manifest.out_dir / "report.json"
    report_txt = manifest.out_dir / "report.txt"
    write_report(report, report_json, report_txt)
    manifest.doc["config"] = {
        "f_max": args.f_max,
        "f_step": args.f_step,
        "eq44_as_printed": args.eq44_as_printed,
    }
    for path in (curves_path, report_json, report_txt):
        manifest.add_output(path)
    manifest.write()
    print(f"assessment written to {manifest.out_dir}")
    return 0


def _parse_reductions(items) -> dict:
    reductions = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"--reduce expects LABEL=FRACTION, got {item!r}")
        label, _, frac = item.partition("=")
        reductions[label.strip()] = float(frac)
    return reductions


def cmd_synth(args) -> int:
    manifest = _Manifest("synth", args)
    out_dir = manifest.out_dir
    noise_kwargs = {}
    if args.freq_cov is not None:
        noise_kwargs["freq_cov"] = args.freq_cov
    if args.shape_sigma is not None:
        noise_kwargs["shape_sigma"] = args.shape_sigma

    if args.preset:
        if args.preset != "benchmark4":
            print(f"error: unknown preset {args.preset!r}", file=sys.stderr)
            return 1
        noise = NoiseSpec(seed=0, **noise_kwargs)
        suite = make_benchmark_suite(seed=args.seed, noise=noise)
        save_model(suite["basis"], out_dir / "model.json")
        save_model(suite["as_built"], out_dir / "as_built_model.json")
        manifest.add_output(out_dir / "model.json")
        manifest.add_output(out_dir / "as_built_model.json")

        jobs = []
        for sensors, (dataset, truth) in suite["calibration"].items():
            jobs.append((f"{sensors}_calibration", dataset, truth))
        for (sensors, scenario), (dataset, truth) in suite["monitoring"].items():
            jobs.append((f"{sensors}_{scenario}", dataset, truth))

        def emit(job):
            stem, dataset, truth = job
            data_path = out_dir / f"{stem}_data.json"
            truth_path = out_dir / f"{stem}_truth.json"
            save_dataset(dataset, data_path)
            _write_json(truth, truth_path)
            return data_path, truth_path

        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            for data_path, truth_path in pool.map(emit, jobs):
                manifest.add_output(data_path)
                manifest.add_output(truth_path)
        manifest.doc["config"] = {
            "preset": "benchmark4",
            "seed": args.seed,
            "noise": {
                "freq_cov": noise.freq_cov,
                "shape_sigma": noise.shape_sigma,
            },
        }
        manifest.write()
        print(f"benchmark suite written to {out_dir}")
        return 0

    if args.spec_file:
        basis = load_model(args.spec_file)
        manifest.add_input(args.spec_file)
    else:
        basis = None
    if basis is None:
        from .structural import build_shear_building

        basis = build_shear_building(benchmark_spec())
    try:
        scenario = DamageScenario(
            name=args.scenario_name, reductions=_parse_reductions(args.reduce)
        )
        theta = scenario.theta(basis)  # validates the labels early
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    generator = basis
    if args.model_discrepancy:
        generator = model_discrepancy(basis, args.model_discrepancy, seed=args.seed)
    observed = _parse_observed(args.observe, basis.n_dof)
    noise = NoiseSpec(seed=args.seed, **noise_kwargs)
    dataset, truth = generate_dataset(
        generator, scenario, observed, args.n_modes, args.n_segments, noise
    )
    save_model(basis, out_dir / "model.json")
    save_dataset(dataset, out_dir / "dataset.json")
    _write_json(truth, out_dir / "ground_truth.json")
    for name in ("model.json", "dataset.json", "ground_truth.json"):
        manifest.add_output(out_dir / name)
    manifest.doc["config"] = {
        "scenario": scenario.name,
        "reductions": dict(scenario.reductions),
        "seed": args.seed,
        "n_modes": args.n_modes,
        "n_segments": args.n_segments,
        "model_discrepancy": args.model_discrepancy,
        "noise": {"freq_cov": noise.freq_cov, "shape_sigma": noise.shape_sigma},
    }
    manifest.write()
    print(f"dataset written to {out_dir}")
    return 0


def _parse_observed(value: str, n_dof: int):
    if value == "all":
        return tuple(range(n_dof))
    try:
        return tuple(int(v) for v in value.split(","))
    except ValueError:
        raise ValueError(f"--observe expects 'all' or a DOF list, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsemodal",
        description="Sparse Bayesian inference of substructure stiffness loss "
        "from identified modal data.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="run the calibration stage")
    p_cal.add_argument("--model", required=True)
    p_cal.add_argument("--dataset", required=True)
    _add_common_solver_flags(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_mon = sub.add_parser("monitor", help="run sparse monitoring")
    p_mon.add_argument("--model", required=True)
    p_mon.add_argument("--dataset", required=True)
    p_mon.add_argument("--calibration", required=True, help="calibration.json path")
    p_mon.add_argument(
        "--no-increase-constraint",
        type=_str2bool,
        default=None,
        dest="no_increase_constraint",
        help="enable/disable pruning of stiffness increases (default true)",
    )
    _add_common_solver_flags(p_mon)
    p_mon.set_defaults(func=cmd_monitor)

    p_ass = sub.add_parser("assess", help="damage curves and report")
    p_ass.add_argument("--calibration", required=True)
    p_ass.add_argument("--monitoring", required=True)
    p_ass.add_argument("--f-max", type=float, default=0.9, dest="f_max")
    p_ass.add_argument("--f-step", type=float, default=0.005, dest="f_step")
    p_ass.add_argument(
        "--eq44-as-printed",
        action="store_true",
        dest="eq44_as_printed",
        help="swap the variance pairing in the damage probability "
        "(comparison mode; the default pairing is the integral-consistent one)",
    )
    p_ass.add_argument("--out", required=True)
    p_ass.set_defaults(func=cmd_assess)

    p_syn = sub.add_parser("synth", help="generate synthetic data")
    p_syn.add_argument("--preset", help="'benchmark4' for the built-in suite")
    p_syn.add_argument("--spec-file", dest="spec_file", help="model JSON to generate from")
    p_syn.add_argument("--scenario-name", default="custom", dest="scenario_name")
    p_syn.add_argument(
        "--reduce",
        action="append",
        help="substructure reduction LABEL=FRACTION (repeatable), "
        "e.g. --reduce '1,+y=0.113'",
    )
    p_syn.add_argument("--observe", default="all", help="'all' or comma-separated DOFs")
    p_syn.add_argument("--n-modes", type=int, default=12, dest="n_modes")
    p_syn.add_argument("--n-segments", type=int, default=10, dest="n_segments")
    p_syn.add_argument("--freq-cov", type=float, default=None, dest="freq_cov")
    p_syn.add_argument("--shape-sigma", type=float, default=None, dest="shape_sigma")
    p_syn.add_argument(
        "--model-discrepancy",
        type=float,
        default=0.0,
        dest="model_discrepancy",
        help="relative size of a seeded symmetric perturbation of the "
        "generating model (0 generates from the exact model class)",
    )
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--jobs", type=int, default=1)
    p_syn.add_argument("--out", required=True)
    p_syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
