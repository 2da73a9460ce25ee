"""Microbenchmarks for the element kernels and whole-simulation scaling.

Kernel timings run each formulation variant sequentially (never
interleaved) over a single representative tetrahedron, with a warmup
phase and batched wall-clock sampling so a mean and standard error can
be reported per call. Variants are executed cheapest-first so a slow
monotone drift of the machine can only widen, never flip, the expected
cost ordering. Every call's first load component is folded into a
checksum to make sure the work is real.

The scaling benchmark runs short transient simulations over a ladder of
block-mesh densities and fits thermal-phase seconds per step against
element count with a straight line.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import stability
from .blockmesh import BlockSceneParams, make_block_mesh, ramp_trajectory
from .integrator import BoundaryConditions, Schedule, run
from .kernels import ConductionOperator, Variant, element_loads_tet_deformed
from .material import (
    MaterialModel,
    PerfusionParams,
    PropertyTable,
    TensorPropertyTable,
)
from .mesh import Mesh, precompute

DEFAULT_REPS = 100_000
DEFAULT_BATCH = 1000
DEFAULT_WARMUP = 2000

# measured on the machine the cost model was calibrated on
REFERENCE_CLASSICAL_TO_DEFORMED_RATIO = 0.89

_RUN_ORDER = (
    Variant.CLASSICAL_ANISO_TEMP_INDEP,
    Variant.CLASSICAL_ISO_TEMP_INDEP,
    Variant.CLASSICAL_ISO_TEMP_DEP,
    Variant.CLASSICAL_ANISO_TEMP_DEP,
    Variant.DEFORMED_ANISO_TEMP_DEP,
)

_REPORT_ORDER = (
    Variant.DEFORMED_ANISO_TEMP_DEP,
    Variant.CLASSICAL_ANISO_TEMP_DEP,
    Variant.CLASSICAL_ANISO_TEMP_INDEP,
    Variant.CLASSICAL_ISO_TEMP_DEP,
    Variant.CLASSICAL_ISO_TEMP_INDEP,
)


@dataclass
class KernelTiming:
    variant: Variant
    reps: int
    batch: int
    mean_seconds: float
    stderr_seconds: float
    checksum: float


@dataclass
class SimulationScaling:
    densities: tuple
    element_counts: tuple
    per_step_seconds: tuple
    slope: float
    intercept: float
    r_squared: float


def _bench_fixture(seed: int):
    """One mildly deformed 5 mm tetrahedron plus material tables."""
    scale = 0.005
    coords = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    ) * scale
    mesh = Mesh(nodes=coords, tets=np.array([[0, 1, 2, 3]], dtype=np.intp),
                hexes=np.zeros((0, 8), dtype=np.intp))
    pre = precompute(mesh)
    grads = pre.tet_shape_derivs[0]
    volume = float(pre.tet_volumes[0])

    rng = np.random.default_rng(seed)
    disp = rng.uniform(-0.1, 0.1, size=(4, 3)) * scale
    temps = np.array([37.2, 38.5, 41.0, 39.3])

    tensor = TensorPropertyTable({
        "xx": [[37.0, 0.53], [65.0, 0.57]],
        "yy": [[37.0, 0.50], [65.0, 0.55]],
        "zz": [[37.0, 0.55], [65.0, 0.60]],
        "xy": [[37.0, 0.02]],
        "xz": [[37.0, 0.01]],
        "yz": [[37.0, 0.015]],
    })
    scalar = PropertyTable([[37.0, 0.53], [65.0, 0.57]])
    return grads, volume, disp, temps, tensor, scalar


def _build_closures(seed: int) -> dict:
    grads, volume, disp, temps, tensor, scalar = _bench_fixture(seed)
    identity = np.eye(3)
    d0 = tensor.evaluate(37.0)
    k0 = float(scalar.evaluate(37.0))
    vbt = volume * grads.T
    geo = volume * (grads.T @ grads)
    k_aniso = vbt @ d0 @ grads
    k_iso = k0 * geo

    def deformed_aniso_temp_dep():
        tbar = float(temps.mean())
        d = tensor.evaluate(tbar)
        f = identity + (grads @ disp).T
        loads = element_loads_tet_deformed(temps, f, d, grads, volume)
        return loads[0]

    def classical_aniso_temp_dep():
        tbar = float(temps.mean())
        d = tensor.evaluate(tbar)
        loads = vbt @ (d @ (grads @ temps))
        return loads[0]

    def classical_aniso_temp_indep():
        loads = k_aniso @ temps
        return loads[0]

    def classical_iso_temp_dep():
        tbar = float(temps.mean())
        k = float(scalar.evaluate(tbar))
        loads = k * (geo @ temps)
        return loads[0]

    def classical_iso_temp_indep():
        loads = k_iso @ temps
        return loads[0]

    return {
        Variant.DEFORMED_ANISO_TEMP_DEP: deformed_aniso_temp_dep,
        Variant.CLASSICAL_ANISO_TEMP_DEP: classical_aniso_temp_dep,
        Variant.CLASSICAL_ANISO_TEMP_INDEP: classical_aniso_temp_indep,
        Variant.CLASSICAL_ISO_TEMP_DEP: classical_iso_temp_dep,
        Variant.CLASSICAL_ISO_TEMP_INDEP: classical_iso_temp_indep,
    }


def _time_closure(call, reps: int, batch: int, warmup: int):
    for _ in range(warmup):
        call()
    n_batches = max(1, reps // batch)
    samples = np.empty(n_batches)
    checksum = 0.0
    for bi in range(n_batches):
        start = time.perf_counter()
        for _ in range(batch):
            checksum += call()
        samples[bi] = time.perf_counter() - start
    per_call = samples / batch
    mean = float(per_call.mean())
    stderr = float(per_call.std(ddof=1) / np.sqrt(n_batches)) if n_batches > 1 else 0.0
    return mean, stderr, checksum


def bench_element_kernels(
    reps: int = DEFAULT_REPS,
    batch: int = DEFAULT_BATCH,
    warmup: int = DEFAULT_WARMUP,
    seed: int = 7,
) -> list[KernelTiming]:
    """Time one element-load evaluation per variant; returns timings in
    report order (deformed variant first)."""
    if reps < 1 or batch < 1:
        raise ValueError("reps and batch must be positive")
    closures = _build_closures(seed)
    results = {}
    for variant in _RUN_ORDER:
        mean, stderr, checksum = _time_closure(closures[variant], reps, batch, warmup)
        results[variant] = KernelTiming(
            variant=variant, reps=reps, batch=batch,
            mean_seconds=mean, stderr_seconds=stderr, checksum=checksum,
        )
    return [results[v] for v in _REPORT_ORDER]


def timings_by_variant(timings) -> dict:
    return {t.variant: t for t in timings}


def kernel_report(timings) -> str:
    by = timings_by_variant(timings)
    lines = ["element kernel timings (per call)"]
    for variant in _REPORT_ORDER:
        t = by[variant]
        lines.append(
            f"  {variant.roman:>3}  {variant.name.lower():<27}"
            f" {t.mean_seconds * 1e6:9.3f} us"
            f"  +/- {t.stderr_seconds * 1e6:.3f}"
        )
    ratio = (
        by[Variant.CLASSICAL_ANISO_TEMP_DEP].mean_seconds
        / by[Variant.DEFORMED_ANISO_TEMP_DEP].mean_seconds
    )
    lines.append(
        f"  cached-classical to deformed ratio: {ratio:.3f}"
        f" (reference hardware: {REFERENCE_CLASSICAL_TO_DEFORMED_RATIO:.2f})"
    )
    return "\n".join(lines)


def write_kernel_csv(path, timings):
    """Per-variant timings; ratio is relative to the deformed variant."""
    base = timings_by_variant(timings)[Variant.DEFORMED_ANISO_TEMP_DEP].mean_seconds
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,mean_ms,stderr_ms,ratio,reps,batch,checksum\n")
        for t in timings:
            fh.write(
                f"{t.variant.roman},{t.mean_seconds * 1e3:.9e},"
                f"{t.stderr_seconds * 1e3:.9e},{t.mean_seconds / base:.6f},"
                f"{t.reps},{t.batch},{t.checksum:.9e}\n"
            )


def bench_simulation(
    densities=(6, 8, 10, 12),
    steps: int = 40,
    variant: Variant = Variant.DEFORMED_ANISO_TEMP_DEP,
    threads=None,
) -> SimulationScaling:
    """Per-step thermal cost over a ladder of block meshes, with an
    affine fit against element count."""
    if len(densities) < 2:
        raise ValueError("need at least two mesh densities to fit a line")
    material = MaterialModel(
        density=PropertyTable.constant(1060.0),
        specific_heat=PropertyTable.constant(3600.0),
        conductivity=PropertyTable.constant(0.53),
    )
    perfusion = PerfusionParams(w_b=0.0, c_b=3617.0, T_a=37.0, Q_met=0.0)
    bc = BoundaryConditions(dirichlet=(), fluxes=(), films=())

    counts = []
    per_step = []
    for n in densities:
        params = BlockSceneParams(nx=n, ny=n, nz=n)
        mesh = make_block_mesh(n, n, n, params.lengths)
        pre = precompute(mesh)
        provider = ramp_trajectory(mesh, params)
        operator = ConductionOperator(mesh, pre, material, variant, threads=threads)
        estimate = stability.estimate_critical_dt(
            operator,
            lumped_mass=_uniform_mass(mesh, pre, material),
            perfusion_diag=np.zeros(mesh.n_nodes),
        )
        dt = 0.4 * estimate.dt_critical
        schedule = Schedule(dt=dt, total_time=steps * dt, snapshot_times=(), events=())
        record = run(
            mesh, pre, material, perfusion, bc, provider, schedule, variant,
            update_thermal_mass=False,
            dt_critical=estimate.dt_critical,
            lambda_max=estimate.lambda_max,
            threads=threads,
        )
        counts.append(mesh.n_elements)
        per_step.append(record.timings["thermal"] / record.n_steps)

    counts_arr = np.asarray(counts, dtype=float)
    per_step_arr = np.asarray(per_step)
    slope, intercept = np.polyfit(counts_arr, per_step_arr, 1)
    predicted = slope * counts_arr + intercept
    ss_res = float(np.sum((per_step_arr - predicted) ** 2))
    ss_tot = float(np.sum((per_step_arr - per_step_arr.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SimulationScaling(
        densities=tuple(int(n) for n in densities),
        element_counts=tuple(int(c) for c in counts),
        per_step_seconds=tuple(float(v) for v in per_step),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
    )


def _uniform_mass(mesh, pre, material):
    from .integrator import lumped_thermal_mass

    return lumped_thermal_mass(mesh, pre, material, np.full(mesh.n_nodes, 37.0))


def scaling_report(scaling: SimulationScaling) -> str:
    lines = ["simulation scaling (thermal phase)"]
    for n, count, sec in zip(
        scaling.densities, scaling.element_counts, scaling.per_step_seconds
    ):
        lines.append(f"  {n:>3}^3 cells  {count:>8} elements  {sec * 1e3:9.4f} ms/step")
    lines.append(
        f"  affine fit: {scaling.slope * 1e6:.4f} us/element"
        f" + {scaling.intercept * 1e3:.4f} ms, R^2 = {scaling.r_squared:.5f}"
    )
    return "\n".join(lines)


def write_scaling_csv(path, scaling: SimulationScaling):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("density,elements,seconds_per_step\n")
        for n, count, sec in zip(
            scaling.densities, scaling.element_counts, scaling.per_step_seconds
        ):
            fh.write(f"{n},{count},{sec:.9e}\n")
        fh.write(f"# slope={scaling.slope:.9e} intercept={scaling.intercept:.9e}"
                 f" r_squared={scaling.r_squared:.6f}\n")
