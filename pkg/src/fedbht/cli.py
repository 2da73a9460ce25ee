"""Command line front end.

Subcommands:

    run        execute a scenario, write snapshots, probes and a manifest
    verify     rerun a scenario against the assembled-matrix reference
               solver and gate the error metrics
    stability  print the estimated spectral bound and critical time step
    bench      element-kernel and mesh-scaling benchmarks
    make-mesh  generate the bundled block scenario (mesh, sets, ramp, JSON)
    metrics    compare two snapshot CSV files

Exit codes: 0 success, 2 configuration or stability refusal, 3 the
transient diverged, 4 verification metrics exceeded tolerance.

Relative paths inside a scenario file resolve against the scenario file's
directory, including its output_dir; the --out flag resolves against the
working directory and wins.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, bench, metrics, oracle, output, stability
from .blockmesh import BlockSceneParams, write_desk_scenario
from .config import ScenarioConfig, load_scenario
from .errors import DivergenceError, FedbhtError, StabilityError
from .integrator import build_thermal_state, run
from .kernels import ConductionOperator, Variant
from .mesh import precompute

log = logging.getLogger("fedbht")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_TOLERANCE = 4


def _resolve_out_dir(cfg: ScenarioConfig, scenario_path: str, override) -> str:
    if override:
        return override
    if os.path.isabs(cfg.output_dir):
        return cfg.output_dir
    return os.path.join(os.path.dirname(os.path.abspath(scenario_path)), cfg.output_dir)


def _run_production(cfg: ScenarioConfig, threads, dt_override: bool):
    pre = precompute(cfg.mesh)
    return run(
        cfg.mesh, pre, cfg.material, cfg.perfusion, cfg.boundary,
        cfg.deformation, cfg.schedule, cfg.variant,
        initial_temperature=cfg.initial_temperature,
        probes=cfg.probes,
        update_thermal_mass=cfg.update_thermal_mass,
        dt_override=dt_override or cfg.dt_override,
        threads=threads,
    )


def _write_outputs(out_dir, cfg: ScenarioConfig, record) -> list:
    names = output.write_record_outputs(out_dir, cfg.mesh, record)
    output.write_manifest(
        os.path.join(out_dir, "manifest.json"), cfg.raw, record, names
    )
    return names


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    out_dir = _resolve_out_dir(cfg, args.scenario, args.out)
    try:
        record = _run_production(cfg, args.threads, args.dt_override)
    except DivergenceError as err:
        names = _write_outputs(out_dir, cfg, err.record)
        print(f"diverged at step {err.step_index} (t = {err.time:g} s); "
              f"partial outputs in {out_dir} ({len(names)} snapshots)")
        return EXIT_DIVERGED
    names = _write_outputs(out_dir, cfg, record)
    print(f"completed {record.n_steps} steps of {record.dt:g} s")
    if record.dt_critical is not None:
        print(f"critical step estimate: {record.dt_critical:.6g} s "
              f"(lambda_max = {record.lambda_max:.6g} 1/s)")
    print(f"wrote {len(names)} snapshots and manifest.json to {out_dir}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    cfg = load_scenario(args.scenario)
    record = _run_production(cfg, args.threads, dt_override=False)
    reference = oracle.reference_transient(
        cfg.mesh, cfg.material, cfg.perfusion, cfg.boundary,
        cfg.deformation, cfg.schedule,
        scheme=args.scheme,
        initial_temperature=cfg.initial_temperature,
        update_thermal_mass=cfg.update_thermal_mass,
    )
    if record.snapshot_times:
        times = record.snapshot_times
        candidate = record.snapshots
        ref_snaps = reference.snapshots
    else:
        times = [cfg.schedule.total_time]
        candidate = [record.final_temps]
        ref_snaps = [reference.final_temps]
    report = metrics.compare_snapshots(times, candidate, ref_snaps)
    for comp in report.comparisons:
        print(f"t = {comp.time:8g} s  max normalized {comp.max_normalized:.3e}  "
              f"mean {comp.mean_normalized:.3e}  total relative {comp.total_relative:.3e}")
    ok = report.within(args.node_tol, args.total_tol)
    print(f"worst normalized {report.worst_normalized:.3e} (tol {args.node_tol:g}), "
          f"worst total {report.worst_total:.3e} (tol {args.total_tol:g}): "
          f"{'OK' if ok else 'EXCEEDED'}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        metrics.write_error_histogram(
            os.path.join(args.out, "error_histogram.csv"),
            times, candidate, ref_snaps,
        )
    return EXIT_OK if ok else EXIT_TOLERANCE


def _cmd_stability(args) -> int:
    cfg = load_scenario(args.scenario)
    pre = precompute(cfg.mesh)
    state = build_thermal_state(
        cfg.mesh, pre, cfg.material, cfg.perfusion, cfg.boundary,
        cfg.initial_temperature,
    )
    operator = ConductionOperator(
        cfg.mesh, pre, cfg.material, cfg.variant,
        reference_temperature=cfg.initial_temperature, threads=args.threads,
    )
    sample_times = [0.0]
    if cfg.variant.uses_deformation and getattr(cfg.deformation, "time_varying", False):
        sample_times.append(cfg.schedule.total_time)
    worst = None
    for t in sample_times:
        deformation = None
        if cfg.variant.uses_deformation:
            deformation = cfg.deformation.displacements_at(t, cfg.mesh)
        est = stability.estimate_critical_dt(
            operator, state.lumped_mass, state.perfusion_diag,
            dirichlet_mask=state.dirichlet_mask,
            deformation=deformation,
            operating_temps=state.T,
        )
        print(f"t = {t:8g} s  lambda_max = {est.lambda_max:.6g} 1/s  "
              f"dt_critical = {est.dt_critical:.6g} s  "
              f"({est.iterations} iterations)")
        if worst is None or est.dt_critical < worst:
            worst = est.dt_critical
    verdict = "within" if cfg.schedule.dt <= worst else "EXCEEDS"
    print(f"schedule dt = {cfg.schedule.dt:g} s {verdict} the critical step")
    return EXIT_OK


def _cmd_bench(args) -> int:
    run_kernels = args.kernels or not args.simulation
    run_simulation = args.simulation or not args.kernels
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    if run_kernels:
        timings = bench.bench_element_kernels(reps=args.reps, batch=args.batch)
        print(bench.kernel_report(timings))
        if args.out:
            bench.write_kernel_csv(os.path.join(args.out, "kernels.csv"), timings)
    if run_simulation:
        scaling = bench.bench_simulation(
            densities=tuple(args.densities), steps=args.steps,
            variant=Variant.from_string(args.variant), threads=args.threads,
        )
        print(bench.scaling_report(scaling))
        if args.out:
            bench.write_scaling_csv(os.path.join(args.out, "scaling.csv"), scaling)
    return EXIT_OK


def _cmd_make_mesh(args) -> int:
    params = BlockSceneParams()
    if args.cells:
        params.nx = params.ny = params.nz = args.cells
    if args.dt:
        params.dt = args.dt
    if args.total_time:
        params.total_time = args.total_time
    path = write_desk_scenario(args.out_dir, params)
    print(f"wrote scenario {path}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    _, candidate = output.read_snapshot_csv(args.candidate)
    _, reference = output.read_snapshot_csv(args.reference)
    if candidate.shape != reference.shape:
        print(f"snapshot sizes differ: {candidate.size} vs {reference.size}",
              file=sys.stderr)
        return EXIT_CONFIG
    norm = metrics.normalized_error(candidate, reference)
    total = metrics.total_relative_error(candidate, reference)
    print(f"max normalized {float(np.max(norm)):.6e}")
    print(f"mean normalized {float(np.mean(norm)):.6e}")
    print(f"total relative {total:.6e}")
    ok = True
    if args.node_tol is not None and float(np.max(norm)) > args.node_tol:
        ok = False
    if args.total_tol is not None and total > args.total_tol:
        ok = False
    return EXIT_OK if ok else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedbht",
        description="explicit bio-heat transient solver on deforming meshes",
    )
    parser.add_argument("--version", action="version", version=f"fedbht {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log at debug level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", help="output directory (default from the scenario)")
    p_run.add_argument("--threads", type=int, default=None,
                       help="element chunks processed in parallel (0 = serial)")
    p_run.add_argument("--dt-override", action="store_true",
                       help="run even when dt exceeds the stability estimate")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser(
        "verify", help="compare against the assembled-matrix reference"
    )
    p_verify.add_argument("scenario")
    p_verify.add_argument("--scheme", choices=("backward", "forward"),
                          default="backward")
    p_verify.add_argument("--node-tol", type=float, default=1e-3,
                          help="largest allowed range-normalized node error")
    p_verify.add_argument("--total-tol", type=float, default=5e-4,
                          help="largest allowed field-wide relative error")
    p_verify.add_argument("--out", help="directory for the error histogram")
    p_verify.add_argument("--threads", type=int, default=None)
    p_verify.set_defaults(func=_cmd_verify)

    p_stab = sub.add_parser("stability", help="estimate the critical time step")
    p_stab.add_argument("scenario")
    p_stab.add_argument("--threads", type=int, default=None)
    p_stab.set_defaults(func=_cmd_stability)

    p_bench = sub.add_parser("bench", help="run microbenchmarks")
    p_bench.add_argument("--kernels", action="store_true",
                         help="only the element-kernel timings")
    p_bench.add_argument("--simulation", action="store_true",
                         help="only the mesh-scaling benchmark")
    p_bench.add_argument("--reps", type=int, default=bench.DEFAULT_REPS)
    p_bench.add_argument("--batch", type=int, default=bench.DEFAULT_BATCH)
    p_bench.add_argument("--steps", type=int, default=40)
    p_bench.add_argument("--densities", type=int, nargs="+",
                         default=[6, 8, 10, 12],
                         help="cells per axis of each scaling mesh")
    p_bench.add_argument("--variant", default="i",
                         help="formulation for the scaling benchmark (i..v)")
    p_bench.add_argument("--threads", type=int, default=None)
    p_bench.add_argument("--out", help="directory for CSV results")
    p_bench.set_defaults(func=_cmd_bench)

    p_mesh = sub.add_parser("make-mesh", help="write the bundled block scenario")
    p_mesh.add_argument("out_dir")
    p_mesh.add_argument("--cells", type=int, default=None,
                        help="cells per axis (default 13)")
    p_mesh.add_argument("--dt", type=float, default=None)
    p_mesh.add_argument("--total-time", type=float, default=None)
    p_mesh.set_defaults(func=_cmd_make_mesh)

    p_metrics = sub.add_parser("metrics", help="compare two snapshot CSV files")
    p_metrics.add_argument("candidate")
    p_metrics.add_argument("reference")
    p_metrics.add_argument("--node-tol", type=float, default=None)
    p_metrics.add_argument("--total-tol", type=float, default=None)
    p_metrics.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StabilityError as err:
        print(f"refusing to run: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FedbhtError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
