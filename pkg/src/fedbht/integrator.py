"""Explicit transient integration of the bio-heat equation.

The semi-discrete balance at node i is

    C_i dT_i/dt = -Fhat_i - Kb_i T_i + Gb_i + Q_i + H_i

with C the lumped thermal mass, Fhat the conduction loads from
:mod:`fedbht.kernels`, Kb/Gb the perfusion and film exchange terms, Q the
metabolic sources and H the external heating. Forward Euler advances the
field; Dirichlet nodes are reset to their prescribed values after every
update, which takes priority over any exchange term on the same node.

Lumping distributes each element's rho*c*V equally to its nodes (row-sum
lumping, exact for linear tets). Perfusion uses the same equal split of
w_b*c_b*V; concentrated film conditions add coefficient*area directly to
the node they sit on.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .deformation import DeformationState, IdentityDeformation
from .errors import ConflictError, DivergenceError, StabilityError, TopologyError
from .kernels import ConductionOperator, Variant
from .material import MaterialModel, PerfusionParams
from .mesh import ElementPrecomp, Mesh

log = logging.getLogger(__name__)

# Fire events/snapshots whose time is within this of the current step time.
TIME_EPS = 1e-12


@dataclass
class DirichletBC:
    nodes: np.ndarray
    temperature: float


@dataclass
class FluxBC:
    """Concentrated nodal heating in watts per node.

    schedulable entries respond to source_on/source_off schedule events;
    non-schedulable entries stay on for the whole run (metabolic-type
    loads).
    """

    nodes: np.ndarray
    watts_per_node: float
    schedulable: bool = True


@dataclass
class FilmBC:
    """Concentrated exchange q_i = coefficient * area * (sink - T_i)."""

    nodes: np.ndarray
    coefficient: float
    sink_temperature: float
    area_per_node: float = 1.0


@dataclass
class BoundaryConditions:
    dirichlet: list[DirichletBC] = field(default_factory=list)
    fluxes: list[FluxBC] = field(default_factory=list)
    films: list[FilmBC] = field(default_factory=list)


@dataclass
class Schedule:
    """Time stepping plan. Events are (time, action) with action one of
    source_on / source_off."""

    dt: float
    total_time: float
    snapshot_times: tuple = ()
    events: tuple = ()
    initial_source_on: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.total_time < self.dt:
            raise ValueError("total_time must cover at least one step")
        self.snapshot_times = tuple(sorted(float(t) for t in self.snapshot_times))
        self.events = tuple(sorted((float(t), str(a)) for t, a in self.events))
        for _, action in self.events:
            if action not in ("source_on", "source_off"):
                raise ValueError(f"unknown schedule action {action!r}")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.total_time / self.dt - TIME_EPS))


@dataclass
class ThermalState:
    """Per-node vectors of the discrete balance plus Dirichlet bookkeeping."""

    T: np.ndarray
    lumped_mass: np.ndarray
    perfusion_diag: np.ndarray
    perfusion_source: np.ndarray
    metabolic: np.ndarray
    external_heat: np.ndarray
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray  # full length; meaningful where mask is set


@dataclass
class SimulationRecord:
    """Everything a run produced, in memory."""

    dt: float
    n_steps: int
    snapshot_times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    probe_indices: tuple = ()
    probe_times: np.ndarray | None = None
    probe_values: np.ndarray | None = None
    timings: dict = field(default_factory=dict)
    final_temps: np.ndarray | None = None
    diverged: bool = False
    divergence_step: int | None = None
    dt_critical: float | None = None
    lambda_max: float | None = None
    n_elements: int = 0


def node_volumes(mesh: Mesh, precomp: ElementPrecomp) -> np.ndarray:
    """Equal-split nodal volumes; tet V/4 per node, hex 8 det(J0)/8."""
    vol = np.zeros(mesh.n_nodes)
    if mesh.tets.size:
        share = np.repeat(precomp.tet_volumes / 4.0, 4)
        vol += np.bincount(mesh.tets.ravel(), weights=share, minlength=mesh.n_nodes)
    if mesh.hexes.size:
        share = np.repeat(precomp.hex_jacobian_dets, 8)  # 8 det / 8 nodes
        vol += np.bincount(mesh.hexes.ravel(), weights=share, minlength=mesh.n_nodes)
    return vol


def lumped_thermal_mass(
    mesh: Mesh, precomp: ElementPrecomp, material: MaterialModel, temps
) -> np.ndarray:
    """Row-sum lumped rho(T) c(T) V, element properties at the element mean
    temperature."""
    temps = np.asarray(temps, dtype=np.float64)
    mass = np.zeros(mesh.n_nodes)
    for conn, weights, share in (
        (mesh.tets, precomp.tet_volumes, 4),
        (mesh.hexes, 8.0 * precomp.hex_jacobian_dets, 8),
    ):
        if not conn.size:
            continue
        tmean = temps[conn].mean(axis=1)
        rho_c = material.density.evaluate(tmean) * material.specific_heat.evaluate(tmean)
        elem_mass = rho_c * weights / share
        mass += np.bincount(conn.ravel(), weights=np.repeat(elem_mass, share), minlength=mesh.n_nodes)
    return mass


def build_thermal_state(
    mesh: Mesh,
    precomp: ElementPrecomp,
    material: MaterialModel,
    perfusion: PerfusionParams,
    bc: BoundaryConditions,
    initial_temperature: float = 37.0,
) -> ThermalState:
    """Assemble the per-node vectors of the discrete balance.

    Raises ConflictError when a node is both Dirichlet and flux-loaded, and
    TopologyError when a node has zero thermal mass (referenced by no
    element).
    """
    n = mesh.n_nodes
    temps = np.full(n, float(initial_temperature))

    mass = lumped_thermal_mass(mesh, precomp, material, temps)
    if np.any(mass <= 0.0):
        node = int(np.argmax(mass <= 0.0))
        raise TopologyError(
            f"node {node} has zero thermal mass (not referenced by any element)"
        )

    vols = node_volumes(mesh, precomp)
    diag = perfusion.w_b * perfusion.c_b * vols
    source = diag * perfusion.T_a
    metabolic = perfusion.Q_met * vols
    external = np.zeros(n)

    dirichlet_mask = np.zeros(n, dtype=bool)
    dirichlet_values = np.zeros(n)
    for entry in bc.dirichlet:
        idx = np.asarray(entry.nodes, dtype=np.intp)
        clash = dirichlet_mask[idx] & (dirichlet_values[idx] != entry.temperature)
        if np.any(clash):
            node = int(idx[np.argmax(clash)])
            raise ConflictError(
                f"node {node} prescribed two different Dirichlet temperatures"
            )
        dirichlet_mask[idx] = True
        dirichlet_values[idx] = entry.temperature

    flux_nodes = np.zeros(n, dtype=bool)
    for entry in bc.fluxes:
        idx = np.asarray(entry.nodes, dtype=np.intp)
        flux_nodes[idx] = True
        if entry.schedulable:
            external[idx] += entry.watts_per_node
        else:
            metabolic[idx] += entry.watts_per_node

    overlap = dirichlet_mask & flux_nodes
    if np.any(overlap):
        node = int(np.argmax(overlap))
        raise ConflictError(f"node {node} is both Dirichlet and flux-loaded")

    for entry in bc.films:
        idx = np.asarray(entry.nodes, dtype=np.intp)
        exchange = entry.coefficient * entry.area_per_node
        diag[idx] += exchange
        source[idx] += exchange * entry.sink_temperature

    temps[dirichlet_mask] = dirichlet_values[dirichlet_mask]

    return ThermalState(
        T=temps,
        lumped_mass=mass,
        perfusion_diag=diag,
        perfusion_source=source,
        metabolic=metabolic,
        external_heat=external,
        dirichlet_mask=dirichlet_mask,
        dirichlet_values=dirichlet_values,
    )


def step(state: ThermalState, loads: np.ndarray, dt: float,
         step_index: int = 0, time: float | None = None) -> np.ndarray:
    """One forward-Euler update; returns the new temperature vector.

    The conduction loads enter with a minus sign (dissipative). Dirichlet
    nodes are reset after the update and therefore win over any exchange
    term. Raises DivergenceError on non-finite output.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        rhs = (
            state.perfusion_source
            + state.metabolic
            + state.external_heat
            - loads
            - state.perfusion_diag * state.T
        )
        t_new = state.T + (dt / state.lumped_mass) * rhs
    if state.dirichlet_mask.any():
        t_new[state.dirichlet_mask] = state.dirichlet_values[state.dirichlet_mask]
    if not np.all(np.isfinite(t_new)):
        raise DivergenceError(step_index, time)
    return t_new


def run(
    mesh: Mesh,
    precomp: ElementPrecomp,
    material: MaterialModel,
    perfusion: PerfusionParams,
    bc: BoundaryConditions,
    provider,
    schedule: Schedule,
    variant: Variant,
    initial_temperature: float = 37.0,
    probes=(),
    update_thermal_mass: bool | None = None,
    dt_critical: float | None = None,
    lambda_max: float | None = None,
    dt_override: bool = False,
    threads: int | None = None,
) -> SimulationRecord:
    """Drive the explicit transient and collect snapshots and probes.

    Unless dt_override is set, the time step is checked against the
    power-iteration critical step (computed here when not supplied) and a
    StabilityError is raised when dt exceeds it. On divergence the error
    re-raised to the caller carries the partial record (``err.record``)
    with the last finite field appended as a snapshot.
    """
    state = build_thermal_state(mesh, precomp, material, perfusion, bc, initial_temperature)
    operator = ConductionOperator(
        mesh, precomp, material, variant,
        reference_temperature=initial_temperature, threads=threads,
    )
    if provider is None:
        provider = IdentityDeformation()

    deformation0 = None
    if variant.uses_deformation:
        deformation0 = provider.displacements_at(0.0, mesh)

    if not dt_override and dt_critical is None:
        from .stability import estimate_critical_dt

        est = estimate_critical_dt(
            operator,
            state.lumped_mass,
            state.perfusion_diag,
            dirichlet_mask=state.dirichlet_mask,
            deformation=deformation0,
            operating_temps=state.T,
        )
        dt_critical = est.dt_critical
        lambda_max = est.lambda_max
    if dt_critical is not None:
        if schedule.dt > dt_critical and not dt_override:
            raise StabilityError(
                f"dt = {schedule.dt:g} s exceeds estimated critical step "
                f"{dt_critical:g} s; shrink dt or override explicitly"
            )
        if schedule.dt > 0.9 * dt_critical:
            log.warning(
                "dt = %g s is above 90%% of the critical step %g s",
                schedule.dt, dt_critical,
            )

    if update_thermal_mass is None:
        update_thermal_mass = not (
            material.density.is_constant and material.specific_heat.is_constant
        )

    probes = tuple(int(p) for p in probes)
    n_steps = schedule.n_steps
    record = SimulationRecord(
        dt=schedule.dt,
        n_steps=n_steps,
        probe_indices=probes,
        dt_critical=dt_critical,
        lambda_max=lambda_max,
        n_elements=mesh.n_elements,
    )
    timings = {"deformation": 0.0, "thermal": 0.0, "mass_update": 0.0, "bookkeeping": 0.0}

    base_external = state.external_heat
    source_on = schedule.initial_source_on
    zeros_external = np.zeros_like(base_external)
    state.external_heat = base_external if source_on else zeros_external

    pending_snaps = list(schedule.snapshot_times)
    pending_events = list(schedule.events)
    probe_rows = []

    track_deformation = variant.uses_deformation
    moving = track_deformation and provider.time_varying
    deformation = deformation0

    def capture_probes():
        if probes:
            probe_rows.append(state.T[list(probes)].copy())

    capture_probes()

    try:
        for n in range(n_steps):
            t_now = n * schedule.dt

            t0 = _time.perf_counter()
            while pending_events and t_now >= pending_events[0][0] - TIME_EPS:
                _, action = pending_events.pop(0)
                source_on = action == "source_on"
                state.external_heat = base_external if source_on else zeros_external
            while pending_snaps and t_now >= pending_snaps[0] - TIME_EPS:
                pending_snaps.pop(0)
                record.snapshot_times.append(t_now)
                record.snapshots.append(state.T.copy())
            timings["bookkeeping"] += _time.perf_counter() - t0

            if moving:
                t0 = _time.perf_counter()
                deformation = provider.displacements_at(t_now, mesh)
                timings["deformation"] += _time.perf_counter() - t0

            if update_thermal_mass:
                t0 = _time.perf_counter()
                state.lumped_mass = lumped_thermal_mass(mesh, precomp, material, state.T)
                timings["mass_update"] += _time.perf_counter() - t0

            t0 = _time.perf_counter()
            loads = operator.apply(state.T, deformation=deformation)
            state.T = step(state, loads, schedule.dt, step_index=n, time=t_now)
            timings["thermal"] += _time.perf_counter() - t0

            capture_probes()
    except DivergenceError as err:
        record.diverged = True
        record.divergence_step = err.step_index
        record.snapshot_times.append(err.step_index * schedule.dt)
        record.snapshots.append(state.T.copy())  # last finite field
        record.final_temps = state.T.copy()
        record.timings = timings
        _finish_probes(record, probe_rows, schedule.dt)
        err.record = record
        raise

    t_final = n_steps * schedule.dt
    while pending_snaps and t_final >= pending_snaps[0] - TIME_EPS:
        pending_snaps.pop(0)
        record.snapshot_times.append(t_final)
        record.snapshots.append(state.T.copy())

    record.final_temps = state.T.copy()
    record.timings = timings
    _finish_probes(record, probe_rows, schedule.dt)
    return record


def _finish_probes(record: SimulationRecord, probe_rows: list, dt: float):
    if record.probe_indices:
        record.probe_values = np.array(probe_rows)
        record.probe_times = np.arange(len(probe_rows)) * dt
