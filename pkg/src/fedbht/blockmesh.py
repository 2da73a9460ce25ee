"""Synthetic vascularized tissue block: the bundled desk-scale scenario.

A rectangular block is meshed with a structured grid (six tets per cell or
one hex per cell). Node sets mark a cylindrical vessel wall (held at body
temperature), a spherical heated region next to it, the perfused bulk, the
displaced top surface and the mechanically fixed vessel. A two-keyframe
trajectory applies a smooth vertical compression ramp, standing in for a
mechanical solve: the top surface moves down by the full amplitude while
the bottom stays put, with a mild lateral taper so the deformation
gradient varies from element to element.

The default parameters give roughly 3000 nodes on a 6 cm cube with
liver-like material tables; generate it with the make-mesh CLI subcommand
or build the objects in memory via :func:`desk_scenario_objects`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .deformation import TrajectoryDeformation
from .mesh import Mesh, precompute, write_mesh, write_node_set

# even permutations of (0, 1, 2) keep the Kuhn tets positively oriented;
# odd ones need two nodes swapped
_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
_PERM_PARITY = (0, 1, 1, 0, 0, 1)


def make_block_mesh(
    nx: int,
    ny: int,
    nz: int,
    lengths=(1.0, 1.0, 1.0),
    element: str = "tet4",
    jitter: float = 0.0,
    seed: int = 0,
) -> Mesh:
    """Structured block mesh on [0, Lx] x [0, Ly] x [0, Lz].

    nx/ny/nz count cells per axis. ``jitter`` displaces interior nodes by
    a uniform fraction of the local spacing (boundary nodes stay put so
    the box shape survives); keep it below ~0.25 to preserve positive
    volumes with the six-tet cell split.
    """
    if element not in ("tet4", "hex8"):
        raise ValueError(f"element must be tet4 or hex8, got {element!r}")
    lx, ly, lz = (float(v) for v in lengths)
    hx, hy, hz = lx / nx, ly / ny, lz / nz

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        interior = (
            (nodes[:, 0] > hx / 2) & (nodes[:, 0] < lx - hx / 2)
            & (nodes[:, 1] > hy / 2) & (nodes[:, 1] < ly - hy / 2)
            & (nodes[:, 2] > hz / 2) & (nodes[:, 2] < lz - hz / 2)
        )
        shift = rng.uniform(-jitter, jitter, size=(int(interior.sum()), 3))
        nodes[interior] += shift * np.array([hx, hy, hz])

    def node_id(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    hexes = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = {}
                for bx in (0, 1):
                    for by in (0, 1):
                        for bz in (0, 1):
                            corner[(bx, by, bz)] = node_id(i + bx, j + by, k + bz)
                if element == "hex8":
                    hexes.append([
                        corner[(0, 0, 0)], corner[(1, 0, 0)],
                        corner[(1, 1, 0)], corner[(0, 1, 0)],
                        corner[(0, 0, 1)], corner[(1, 0, 1)],
                        corner[(1, 1, 1)], corner[(0, 1, 1)],
                    ])
                    continue
                for perm, parity in zip(_PERMS, _PERM_PARITY):
                    path = [(0, 0, 0)]
                    current = [0, 0, 0]
                    for axis in perm:
                        current = list(current)
                        current[axis] = 1
                        path.append(tuple(current))
                    tet = [corner[p] for p in path]
                    if parity:
                        tet[1], tet[2] = tet[2], tet[1]
                    tets.append(tet)

    mesh = Mesh(
        nodes=nodes,
        tets=np.array(tets, dtype=np.intp) if tets else np.zeros((0, 4), dtype=np.intp),
        hexes=np.array(hexes, dtype=np.intp) if hexes else np.zeros((0, 8), dtype=np.intp),
    )
    precompute(mesh)  # fail fast if the jitter inverted anything
    return mesh


@dataclass
class BlockSceneParams:
    """Geometry knobs of the bundled scenario."""

    nx: int = 13
    ny: int = 13
    nz: int = 13
    lengths: tuple = (0.06, 0.06, 0.06)
    element: str = "tet4"
    vessel_center_xz: tuple = (0.024, 0.030)
    vessel_radius: float = 0.005
    source_center: tuple = (0.038, 0.030, 0.030)
    source_radius: float = 0.0055
    ramp_amplitude: float = -0.01
    ramp_time: float = 10.0
    dt: float = 0.01
    total_time: float = 20.0
    snapshot_times: tuple = (5.0, 10.0, 15.0, 20.0)
    source_off_time: float = 5.0
    heater_watts: float = 0.2
    metabolic_watts: float = 0.001263
    film_coefficient: float = 0.003595
    body_temperature: float = 37.0
    material: dict = field(default_factory=lambda: {
        "density": [[37.0, 1060.0]],
        "specific_heat": [[37.0, 3600.0], [65.0, 3800.0]],
        "conductivity": [[37.0, 0.53], [65.0, 0.57]],
    })


def block_node_sets(mesh: Mesh, params: BlockSceneParams) -> dict[str, np.ndarray]:
    """Geometric node sets: vessel_wall, heat_source, perfused, displaced,
    fixed."""
    nodes = mesh.nodes
    cx, cz = params.vessel_center_xz
    vessel = np.flatnonzero(
        (nodes[:, 0] - cx) ** 2 + (nodes[:, 2] - cz) ** 2 <= params.vessel_radius ** 2
    )
    sx, sy, sz = params.source_center
    source = np.flatnonzero(
        (nodes[:, 0] - sx) ** 2 + (nodes[:, 1] - sy) ** 2 + (nodes[:, 2] - sz) ** 2
        <= params.source_radius ** 2
    )
    lz = params.lengths[2]
    hz = lz / params.nz
    displaced = np.flatnonzero(nodes[:, 2] >= lz - hz / 4)
    in_vessel = np.zeros(mesh.n_nodes, dtype=bool)
    in_vessel[vessel] = True
    perfused = np.flatnonzero(~in_vessel)
    overlap = in_vessel[source]
    if np.any(overlap):
        source = source[~overlap]  # heater may not touch the Dirichlet wall
    if source.size == 0:
        raise ValueError("heat source sphere captured no nodes; enlarge it")
    if vessel.size == 0:
        raise ValueError("vessel cylinder captured no nodes; enlarge it")
    return {
        "vessel_wall": vessel.astype(np.intp),
        "heat_source": source.astype(np.intp),
        "perfused": perfused.astype(np.intp),
        "displaced": displaced.astype(np.intp),
        "fixed": vessel.astype(np.intp).copy(),
    }


def ramp_trajectory(mesh: Mesh, params: BlockSceneParams) -> TrajectoryDeformation:
    """Two-keyframe vertical compression: zero at t=0, full field at
    t=ramp_time, clamped afterwards (held deformation)."""
    times, frames = ramp_keyframes(mesh, params)
    return TrajectoryDeformation(times, frames)


def ramp_keyframes(mesh: Mesh, params: BlockSceneParams):
    lx = params.lengths[0]
    lz = params.lengths[2]
    full = np.zeros((mesh.n_nodes, 3))
    taper = 0.75 + 0.25 * mesh.nodes[:, 0] / lx
    full[:, 2] = params.ramp_amplitude * (mesh.nodes[:, 2] / lz) * taper
    times = np.array([0.0, params.ramp_time])
    frames = np.stack([np.zeros_like(full), full])
    return times, frames


def desk_scenario_objects(params: BlockSceneParams | None = None):
    """In-memory bundle: (mesh, node_sets, provider, params)."""
    params = params or BlockSceneParams()
    mesh = make_block_mesh(
        params.nx, params.ny, params.nz, params.lengths, element=params.element
    )
    sets = block_node_sets(mesh, params)
    provider = ramp_trajectory(mesh, params)
    return mesh, sets, provider, params


def scenario_config_dict(params: BlockSceneParams, probes) -> dict:
    """The scenario configuration as a plain dict (file paths relative to
    the scenario file)."""
    return {
        "mesh_path": "block.mesh",
        "node_sets": {
            name: f"sets/{name}.nodes"
            for name in ("vessel_wall", "heat_source", "perfused", "displaced", "fixed")
        },
        "material": params.material,
        "perfusion": {
            "w_b": 0.0,
            "c_b": 3617.0,
            "T_a": params.body_temperature,
            "Q_met": 0.0,
        },
        "initial_temperature": params.body_temperature,
        "boundary": {
            "vessel_wall": {"kind": "dirichlet", "temperature": params.body_temperature},
            "heat_source": {
                "kind": "flux",
                "watts_per_node": params.heater_watts,
                "schedulable": True,
            },
            "perfused": [
                {
                    "kind": "film",
                    "coefficient": params.film_coefficient,
                    "sink_temperature": params.body_temperature,
                    "area_per_node": 1.0,
                },
                {
                    "kind": "flux",
                    "watts_per_node": params.metabolic_watts,
                    "schedulable": False,
                },
            ],
        },
        "deformation": {"kind": "trajectory", "path": "ramp.traj"},
        "schedule": {
            "dt": params.dt,
            "total_time": params.total_time,
            "snapshot_times": list(params.snapshot_times),
            "events": [{"time": params.source_off_time, "action": "source_off"}],
        },
        "variant": "i",
        "probes": list(int(p) for p in probes),
        "update_thermal_mass": True,
        "dt_override": False,
    }


def write_trajectory(path, times, frames):
    with open(path, "w", encoding="utf-8") as fh:
        for t, frame in zip(times, frames):
            fh.write(f"KEYFRAME {t:.17g}\n")
            for ux, uy, uz in frame:
                fh.write(f"{ux:.17g} {uy:.17g} {uz:.17g}\n")


def write_desk_scenario(out_dir, params: BlockSceneParams | None = None) -> str:
    """Write mesh, node sets, trajectory and scenario JSON; returns the
    scenario path."""
    params = params or BlockSceneParams()
    mesh = make_block_mesh(
        params.nx, params.ny, params.nz, params.lengths, element=params.element
    )
    sets = block_node_sets(mesh, params)

    os.makedirs(os.path.join(out_dir, "sets"), exist_ok=True)
    write_mesh(os.path.join(out_dir, "block.mesh"), mesh)
    for name, indices in sets.items():
        write_node_set(os.path.join(out_dir, "sets", f"{name}.nodes"), indices)
    times, frames = ramp_keyframes(mesh, params)
    write_trajectory(os.path.join(out_dir, "ramp.traj"), times, frames)

    probes = [int(sets["heat_source"][0]), int(sets["vessel_wall"][0])]
    config = scenario_config_dict(params, probes)
    config_path = os.path.join(out_dir, "liver_like.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    return config_path
