"""Assembled-matrix reference implementations for verification.

Everything here recomputes results through classical sparse assembly so the
matrix-free production path can be checked against an independent route:

  * element stiffness is derived directly from node positions (edge-vector
    cross products for tets, centre-point Jacobian for hexes); when given
    deformed coordinates the geometry is simply re-derived from the moved
    nodes, never pulled back through a deformation gradient;
  * global K is assembled into scipy.sparse CSR;
  * reference transients advance the assembled system with forward or
    backward Euler, re-assembling every step so lagged (Picard) property
    evaluation matches the production semantics;
  * brute-force Gauss quadrature integrates single-element loads.

Thermal mass and perfusion lumping always use reference-configuration
volumes, matching the production convention (mass conservation makes
rho c V deformation-invariant).

These paths are for testing and verification; they are deliberately
slower and simpler than the production operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import DivergenceError, GeometryError
from .integrator import (
    BoundaryConditions,
    Schedule,
    SimulationRecord,
    build_thermal_state,
)
from .material import MaterialModel, PerfusionParams
from .mesh import HEX_DN_CENTER, Mesh, precompute

# --------------------------------------------------------------------------
# quadrature rules

# Keast 4-point rule, degree 2, barycentric coordinates.
_TET_A = 0.5854101966249685
_TET_B = 0.1381966011250105

_TET_RULES = {
    1: (np.full((1, 4), 0.25), np.array([1.0])),
    # symmetric two-point rule, degree 1: points average to the centroid
    2: (
        np.array([
            [0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
            [0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ]),
        np.array([0.5, 0.5]),
    ),
    4: (
        np.array([
            [_TET_A, _TET_B, _TET_B, _TET_B],
            [_TET_B, _TET_A, _TET_B, _TET_B],
            [_TET_B, _TET_B, _TET_A, _TET_B],
            [_TET_B, _TET_B, _TET_B, _TET_A],
        ]),
        np.full(4, 0.25),
    ),
}

_GAUSS_1D = {
    1: (np.array([0.0]), np.array([2.0])),
    2: (np.array([-1.0, 1.0]) / math.sqrt(3.0), np.array([1.0, 1.0])),
    3: (
        np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)]),
        np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]),
    ),
}


def hex_gauss_rule(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product Gauss rule on [-1, 1]^3 with 1, 8 or 27 points."""
    per_axis = {1: 1, 8: 2, 27: 3}.get(n_points)
    if per_axis is None:
        raise ValueError(f"hex rule must have 1, 8 or 27 points, got {n_points}")
    x, w = _GAUSS_1D[per_axis]
    pts = np.array([[a, b, c] for a in x for b in x for c in x])
    wts = np.array([wa * wb * wc for wa in w for wb in w for wc in w])
    return pts, wts


def _hex_dn(xi: np.ndarray) -> np.ndarray:
    """Trilinear shape-function derivatives at natural point xi, rows=nodes."""
    from .mesh import HEX_SIGNS

    s = HEX_SIGNS
    dn = np.empty((8, 3))
    dn[:, 0] = s[:, 0] * (1 + s[:, 1] * xi[1]) * (1 + s[:, 2] * xi[2]) / 8.0
    dn[:, 1] = (1 + s[:, 0] * xi[0]) * s[:, 1] * (1 + s[:, 2] * xi[2]) / 8.0
    dn[:, 2] = (1 + s[:, 0] * xi[0]) * (1 + s[:, 1] * xi[1]) * s[:, 2] / 8.0
    return dn


def brute_force_element_load(coords, conductivity, temps, n_points: int) -> np.ndarray:
    """Gauss-quadrature element conduction loads on the given geometry.

    coords: (4, 3) for a tet or (8, 3) for a hex.
    conductivity: (3, 3) tensor, held constant over the element.
    n_points: 1/2/4 for tets, 1/8/27 for hexes.

    For linear tets the integrand is constant so every rule is exact; hex
    rules integrate the full trilinear variation, which an 8 or 27 point
    rule captures while the production kernel's one-point rule does not on
    distorted elements.
    """
    coords = np.asarray(coords, dtype=np.float64)
    temps = np.asarray(temps, dtype=np.float64)
    d = np.asarray(conductivity, dtype=np.float64)

    if coords.shape == (4, 3):
        if n_points not in _TET_RULES:
            raise ValueError(f"tet rule must have 1, 2 or 4 points, got {n_points}")
        _, weights = _TET_RULES[n_points]
        # gradients from the [1 | x y z] matrix: rows 1..3 of its inverse
        m = np.hstack([np.ones((4, 1)), coords])
        det = np.linalg.det(m)
        if det <= 0:
            raise GeometryError(f"tet volume {det / 6.0:.3e} m^3 is not positive")
        grads = np.linalg.inv(m)[1:4, :]  # (3, 4)
        volume = det / 6.0
        kd = grads.T @ (d @ grads)
        out = np.zeros(4)
        for w in weights:
            out += (w * volume) * (kd @ temps)
        return out

    if coords.shape == (8, 3):
        pts, wts = hex_gauss_rule(n_points)
        out = np.zeros(8)
        for xi, w in zip(pts, wts):
            dn = _hex_dn(xi)  # (8, 3)
            jac = coords.T @ dn
            det = np.linalg.det(jac)
            if det <= 0:
                raise GeometryError(
                    f"hex Jacobian determinant {det:.3e} m^3 is not positive"
                )
            grads = np.linalg.solve(jac.T, dn.T)  # (3, 8)
            out += (w * det) * (grads.T @ (d @ (grads @ temps)))
        return out

    raise ValueError(f"element coordinates must be (4, 3) or (8, 3), got {coords.shape}")


def quadrature_volume(mesh: Mesh) -> float:
    """Mesh volume by 4-point (tet) / 8-point (hex) quadrature.

    Independent of the precompute path: integrates det J over each element.
    """
    total = 0.0
    if mesh.tets.size:
        coords = mesh.nodes[mesh.tets]
        m = np.concatenate([np.ones(coords.shape[:2] + (1,)), coords], axis=2)
        dets = np.linalg.det(m)
        _, weights = _TET_RULES[4]
        total += float((dets / 6.0).sum() * weights.sum())
    if mesh.hexes.size:
        pts, wts = hex_gauss_rule(8)
        coords = mesh.nodes[mesh.hexes]
        for xi, w in zip(pts, wts):
            dn = _hex_dn(xi)
            jac = np.einsum("eaj,ak->ejk", coords, dn)
            total += float(w * np.linalg.det(jac).sum())
    return total


# --------------------------------------------------------------------------
# sparse assembly


@dataclass
class AssembledSystem:
    """Classically assembled counterpart of the matrix-free operator."""

    K: scipy.sparse.csr_matrix
    C: np.ndarray
    K_b: np.ndarray
    source: np.ndarray
    external: np.ndarray
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray


class OracleAssembler:
    """Reusable sparse assembly with a fixed sparsity pattern.

    The COO-to-CSR reduction map is built once; each stiffness call only
    recomputes element matrices from the supplied coordinates and
    temperatures.
    """

    def __init__(self, mesh: Mesh, material: MaterialModel):
        self.mesh = mesh
        self.material = material
        self.n = mesh.n_nodes

        rows = []
        cols = []
        for conn in (mesh.tets, mesh.hexes):
            if not conn.size:
                continue
            k = conn.shape[1]
            rows.append(np.repeat(conn, k, axis=1).ravel())
            cols.append(np.tile(conn, (1, k)).ravel())
        if not rows:
            raise GeometryError("mesh has no elements to assemble")
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)

        key = rows.astype(np.int64) * self.n + cols.astype(np.int64)
        self._order = np.argsort(key, kind="stable")
        sorted_key = key[self._order]
        first = np.r_[True, sorted_key[1:] != sorted_key[:-1]]
        self._group_starts = np.flatnonzero(first)
        unique_key = sorted_key[self._group_starts]
        self._indices = (unique_key % self.n).astype(np.int32)
        row_of_unique = (unique_key // self.n).astype(np.intp)
        counts = np.bincount(row_of_unique, minlength=self.n)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def stiffness(self, coords: np.ndarray | None = None, temps=None) -> scipy.sparse.csr_matrix:
        """Assemble K from node positions (default: reference) and the
        temperature field used for property evaluation (default: uniform
        37 C)."""
        mesh = self.mesh
        if coords is None:
            coords = mesh.nodes
        if temps is None:
            temps = np.full(self.n, 37.0)
        temps = np.asarray(temps, dtype=np.float64)

        chunks = []
        if mesh.tets.size:
            chunks.append(self._tet_element_matrices(coords, temps).ravel())
        if mesh.hexes.size:
            chunks.append(self._hex_element_matrices(coords, temps).ravel())
        flat = np.concatenate(chunks)
        data = np.add.reduceat(flat[self._order], self._group_starts)
        return scipy.sparse.csr_matrix(
            (data, self._indices, self._indptr), shape=(self.n, self.n)
        )

    def _conductivity(self, tmean: np.ndarray) -> np.ndarray:
        if self.material.isotropic:
            k = self.material.conductivity.evaluate(tmean)
            return k[:, None, None] * np.eye(3)
        return self.material.conductivity.evaluate(tmean)

    def _tet_element_matrices(self, coords, temps) -> np.ndarray:
        conn = self.mesh.tets
        x = coords[conn]  # (e, 4, 3)
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        e3 = x[:, 3] - x[:, 0]
        c23 = np.cross(e2, e3)
        c31 = np.cross(e3, e1)
        c12 = np.cross(e1, e2)
        det = np.einsum("ei,ei->e", e1, c23)  # 6 V
        if np.any(det <= 0):
            elem = int(np.argmax(det <= 0))
            raise GeometryError(
                f"tet4 element {elem} has non-positive volume on the given coordinates"
            )
        g = np.stack([c23, c31, c12], axis=2) / det[:, None, None]  # (e, 3, 3) cols=grads 1..3
        g0 = -g.sum(axis=2, keepdims=True)
        grads = np.concatenate([g0, g], axis=2)  # (e, 3, 4)
        d = self._conductivity(temps[conn].mean(axis=1))
        return (det / 6.0)[:, None, None] * np.einsum(
            "eka,ekl,elb->eab", grads, d, grads
        )

    def _hex_element_matrices(self, coords, temps) -> np.ndarray:
        conn = self.mesh.hexes
        x = coords[conn]  # (e, 8, 3)
        jac = np.einsum("eaj,ak->ejk", x, HEX_DN_CENTER)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            elem = int(np.argmax(det <= 0))
            raise GeometryError(
                f"hex8 element {elem} has non-positive centre Jacobian on the given coordinates"
            )
        n = conn.shape[0]
        rhs = np.broadcast_to(HEX_DN_CENTER.T, (n, 3, 8))
        grads = np.linalg.solve(np.transpose(jac, (0, 2, 1)), rhs)
        d = self._conductivity(temps[conn].mean(axis=1))
        return (8.0 * det)[:, None, None] * np.einsum(
            "eka,ekl,elb->eab", grads, d, grads
        )


def assemble(
    mesh: Mesh,
    material: MaterialModel,
    temps=None,
    coords: np.ndarray | None = None,
    perfusion: PerfusionParams | None = None,
    bc: BoundaryConditions | None = None,
    initial_temperature: float = 37.0,
) -> AssembledSystem:
    """One-shot assembled system; see OracleAssembler for the reusable path."""
    assembler = OracleAssembler(mesh, material)
    if temps is None:
        temps = np.full(mesh.n_nodes, float(initial_temperature))
    temps = np.asarray(temps, dtype=np.float64)
    k = assembler.stiffness(coords=coords, temps=temps)

    perfusion = perfusion or PerfusionParams()
    bc = bc or BoundaryConditions()
    state = build_thermal_state(
        mesh, precompute(mesh), material, perfusion, bc,
        initial_temperature=initial_temperature,
    )
    return AssembledSystem(
        K=k,
        C=state.lumped_mass,
        K_b=state.perfusion_diag,
        source=state.perfusion_source + state.metabolic,
        external=state.external_heat,
        dirichlet_mask=state.dirichlet_mask,
        dirichlet_values=state.dirichlet_values,
    )


def dense_lambda_max(
    k: scipy.sparse.csr_matrix,
    lumped_mass: np.ndarray,
    perfusion_diag: np.ndarray,
    dirichlet_mask=None,
) -> float:
    """Largest eigenvalue of C^{-1}(K + K_b) by a dense generalized solve.

    Only viable for small systems; used to validate the power iteration.
    """
    a = k.toarray() + np.diag(perfusion_diag)
    b = np.diag(lumped_mass)
    if dirichlet_mask is not None and np.any(dirichlet_mask):
        free = ~np.asarray(dirichlet_mask, dtype=bool)
        a = a[np.ix_(free, free)]
        b = b[np.ix_(free, free)]
    vals = scipy.linalg.eigh(a, b, eigvals_only=True)
    return float(vals[-1])


# --------------------------------------------------------------------------
# reference transient


def reference_transient(
    mesh: Mesh,
    material: MaterialModel,
    perfusion: PerfusionParams,
    bc: BoundaryConditions,
    provider,
    schedule: Schedule,
    scheme: str = "backward",
    initial_temperature: float = 37.0,
    update_thermal_mass: bool | None = None,
    probes=(),
    solver_rtol: float = 1e-10,
) -> SimulationRecord:
    """Assembled-matrix transient with the same scheduling semantics as the
    production run loop.

    scheme "forward" replays explicit Euler through the assembled K (an
    independent path to the same scheme); "backward" solves the implicit
    system each step with lagged (Picard) property evaluation, conjugate
    gradients on the Dirichlet-reduced SPD system, relative residual below
    ``solver_rtol``.
    """
    if scheme not in ("forward", "backward"):
        raise ValueError(f"scheme must be forward or backward, got {scheme!r}")

    precomp = precompute(mesh)
    state = build_thermal_state(
        mesh, precomp, material, perfusion, bc, initial_temperature
    )
    assembler = OracleAssembler(mesh, material)
    if update_thermal_mass is None:
        update_thermal_mass = not (
            material.density.is_constant and material.specific_heat.is_constant
        )

    n = mesh.n_nodes
    free = ~state.dirichlet_mask
    fixed_vals = np.where(state.dirichlet_mask, state.dirichlet_values, 0.0)
    probes = tuple(int(p) for p in probes)
    n_steps = schedule.n_steps
    record = SimulationRecord(
        dt=schedule.dt, n_steps=n_steps, probe_indices=probes,
        n_elements=mesh.n_elements,
    )

    base_external = state.external_heat.copy()
    source_on = schedule.initial_source_on
    pending_snaps = list(schedule.snapshot_times)
    pending_events = list(schedule.events)
    probe_rows = []
    eps = 1e-12

    moving = provider is not None and provider.time_varying
    coords = mesh.nodes
    if provider is not None:
        coords = mesh.nodes + provider.displacements_at(0.0, mesh).displacements

    temps = state.T.copy()
    mass = state.lumped_mass.copy()
    dt = schedule.dt

    if probes:
        probe_rows.append(temps[list(probes)].copy())

    for step_index in range(n_steps):
        t_now = step_index * dt
        while pending_events and t_now >= pending_events[0][0] - eps:
            _, action = pending_events.pop(0)
            source_on = action == "source_on"
        while pending_snaps and t_now >= pending_snaps[0] - eps:
            pending_snaps.pop(0)
            record.snapshot_times.append(t_now)
            record.snapshots.append(temps.copy())

        external = base_external if source_on else 0.0
        load = state.perfusion_source + state.metabolic + external

        if update_thermal_mass:
            mass = _oracle_lumped_mass(mesh, material, temps)

        if moving:
            t_geom = t_now if scheme == "forward" else t_now + dt
            coords = mesh.nodes + provider.displacements_at(t_geom, mesh).displacements

        k = assembler.stiffness(coords=coords, temps=temps)

        if scheme == "forward":
            rhs = load - k @ temps - state.perfusion_diag * temps
            temps = temps + (dt / mass) * rhs
        else:
            diag = mass / dt + state.perfusion_diag
            b_full = (mass / dt) * temps + load

            def matvec(x_free):
                x = np.zeros(n)
                x[free] = x_free
                y = k @ x + diag * x
                return y[free]

            a_op = scipy.sparse.linalg.LinearOperator(
                (int(free.sum()), int(free.sum())), matvec=matvec
            )
            coupling = k @ fixed_vals + diag * fixed_vals
            b_reduced = b_full[free] - coupling[free]
            precond_diag = (k.diagonal() + diag)[free]
            m_op = scipy.sparse.linalg.LinearOperator(
                a_op.shape, matvec=lambda x: x / precond_diag
            )
            x0 = temps[free]
            solution, info = scipy.sparse.linalg.cg(
                a_op, b_reduced, x0=x0, rtol=solver_rtol, atol=0.0, M=m_op
            )
            if info != 0:
                raise RuntimeError(f"implicit solve failed to converge (info={info})")
            temps = fixed_vals.copy()
            temps[free] = solution

        temps[state.dirichlet_mask] = state.dirichlet_values[state.dirichlet_mask]
        if not np.all(np.isfinite(temps)):
            raise DivergenceError(step_index, t_now)
        if probes:
            probe_rows.append(temps[list(probes)].copy())

    t_final = n_steps * dt
    while pending_snaps and t_final >= pending_snaps[0] - eps:
        pending_snaps.pop(0)
        record.snapshot_times.append(t_final)
        record.snapshots.append(temps.copy())

    record.final_temps = temps.copy()
    if probes:
        record.probe_values = np.array(probe_rows)
        record.probe_times = np.arange(len(probe_rows)) * dt
    return record


def _oracle_lumped_mass(mesh: Mesh, material: MaterialModel, temps) -> np.ndarray:
    """Independent equal-split lumping from first principles geometry."""
    mass = np.zeros(mesh.n_nodes)
    if mesh.tets.size:
        x = mesh.nodes[mesh.tets]
        det = np.einsum(
            "ei,ei->e", x[:, 1] - x[:, 0], np.cross(x[:, 2] - x[:, 0], x[:, 3] - x[:, 0])
        )
        tmean = temps[mesh.tets].mean(axis=1)
        rho_c = material.density.evaluate(tmean) * material.specific_heat.evaluate(tmean)
        share = rho_c * (det / 6.0) / 4.0
        mass += np.bincount(mesh.tets.ravel(), weights=np.repeat(share, 4), minlength=mesh.n_nodes)
    if mesh.hexes.size:
        x = mesh.nodes[mesh.hexes]
        jac = np.einsum("eaj,ak->ejk", x, HEX_DN_CENTER)
        det = np.linalg.det(jac)
        tmean = temps[mesh.hexes].mean(axis=1)
        rho_c = material.density.evaluate(tmean) * material.specific_heat.evaluate(tmean)
        share = rho_c * det  # 8 det / 8 nodes
        mass += np.bincount(mesh.hexes.ravel(), weights=np.repeat(share, 8), minlength=mesh.n_nodes)
    return mass
