import numpy as np
import pytest

from fedbht.deformation import DeformationState, IdentityDeformation
from fedbht.integrator import (
    BoundaryConditions,
    DirichletBC,
    FluxBC,
    Schedule,
    lumped_thermal_mass,
    run,
)
from fedbht.kernels import ConductionOperator, Variant
from fedbht.material import PerfusionParams, PropertyTable
from fedbht.mesh import Mesh, precompute
from fedbht.oracle import (
    OracleAssembler,
    assemble,
    brute_force_element_load,
    hex_gauss_rule,
    quadrature_volume,
    reference_transient,
    _oracle_lumped_mass,
)

from conftest import make_material, random_tet_mesh

NO_BC = BoundaryConditions(dirichlet=(), fluxes=(), films=())


def distorted_hex(amplitude=0.3):
    cube = np.array([
        [0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0],
        [0.0, 0, 1], [1.0, 0, 1], [1.0, 1, 1], [0.0, 1, 1],
    ])
    rng = np.random.default_rng(6)
    return cube + amplitude * rng.uniform(-0.25, 0.25, size=(8, 3))


def test_quadrature_volume_matches_precompute():
    mesh = random_tet_mesh(n_cells=3, seed=3, jitter=0.2)
    np.testing.assert_allclose(quadrature_volume(mesh),
                               precompute(mesh).total_volume, rtol=1e-12)


def test_quadrature_volume_hex():
    nodes = distorted_hex(0.2)
    mesh = Mesh(nodes=nodes, tets=np.zeros((0, 4), dtype=np.intp),
                hexes=np.arange(8, dtype=np.intp).reshape(1, 8))
    v_quad = quadrature_volume(mesh)
    # centre-point volume underestimates a distorted cell; the 8-point
    # rule integrates the trilinear Jacobian exactly
    assert v_quad == pytest.approx(1.0, rel=0.25)


def test_gauss_rules_reject_unknown_counts():
    for n in (1, 8, 27):
        points, weights = hex_gauss_rule(n)
        assert points.shape == (n, 3)
        assert weights.sum() == pytest.approx(8.0, rel=1e-13)
    with pytest.raises(ValueError):
        hex_gauss_rule(5)


def test_tet_rules_agree_on_constant_gradient():
    rng = np.random.default_rng(12)
    coords = rng.random((4, 3))
    if np.linalg.det(coords[1:] - coords[0]) < 0:
        coords[[1, 2]] = coords[[2, 1]]
    temps = rng.random(4)
    d = np.diag([0.5, 0.6, 0.7])
    ref = brute_force_element_load(coords, d, temps, n_points=1)
    for n in (2, 4):
        np.testing.assert_allclose(
            brute_force_element_load(coords, d, temps, n_points=n),
            ref, rtol=1e-12)


def test_hex_rules_agree_on_affine_cell(unit_cube_hex):
    mesh, _ = unit_cube_hex
    rng = np.random.default_rng(1)
    temps = rng.random(8)
    d = 0.5 * np.eye(3)
    r8 = brute_force_element_load(mesh.nodes, d, temps, n_points=8)
    r27 = brute_force_element_load(mesh.nodes, d, temps, n_points=27)
    np.testing.assert_allclose(r8, r27, rtol=1e-12, atol=1e-15)


def test_one_point_hex_defect_shrinks_under_refinement():
    """Reduced integration differs from the full rule on a distorted cell;
    splitting the cell through its trilinear map must shrink the gap."""
    corners = distorted_hex(0.5)

    def trilinear(xi):
        s = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                      [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]])
        shapes = np.prod(1.0 + s * xi, axis=1) / 8.0
        return shapes @ corners

    def energy_gap(level):
        ticks = np.linspace(-1.0, 1.0, level + 1)
        nodes = np.array([trilinear(np.array([x, y, z]))
                          for z in ticks for y in ticks for x in ticks])
        nid = lambda i, j, k: (k * (level + 1) + j) * (level + 1) + i
        hexes = []
        for k in range(level):
            for j in range(level):
                for i in range(level):
                    hexes.append([nid(i, j, k), nid(i + 1, j, k),
                                  nid(i + 1, j + 1, k), nid(i, j + 1, k),
                                  nid(i, j, k + 1), nid(i + 1, j, k + 1),
                                  nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1)])
        mesh = Mesh(nodes=nodes, tets=np.zeros((0, 4), dtype=np.intp),
                    hexes=np.array(hexes, dtype=np.intp))
        temps = nodes[:, 0] ** 2 + 0.5 * nodes[:, 1] * nodes[:, 2]
        op = ConductionOperator(mesh, precompute(mesh), make_material(k=1.0),
                                Variant.CLASSICAL_ISO_TEMP_INDEP)
        reduced = temps @ op.apply(temps)
        full = 0.0
        d = np.eye(3)
        for conn in mesh.hexes:
            full += temps[conn] @ brute_force_element_load(
                nodes[conn], d, temps[conn], n_points=27)
        return abs(reduced - full) / abs(full)

    coarse, fine = energy_gap(1), energy_gap(2)
    assert coarse > 1e-4  # the defect is visible on the unrefined cell
    assert fine < coarse


def test_assembled_stiffness_properties():
    mesh = random_tet_mesh(n_cells=2, seed=15, jitter=0.2)
    mat = make_material(k=0.54)
    k = OracleAssembler(mesh, mat).stiffness()
    dense = k.toarray()
    np.testing.assert_allclose(dense, dense.T, atol=1e-14)
    np.testing.assert_allclose(dense.sum(axis=1), 0.0, atol=1e-13)
    eigs = np.linalg.eigvalsh(dense)
    assert eigs.min() > -1e-12


def test_assembly_matches_matrix_free_classical():
    # two independent shape-gradient derivations must produce the same operator
    mesh = random_tet_mesh(n_cells=3, seed=16, jitter=0.2)
    pre = precompute(mesh)
    mat = make_material(k=0.61)
    k = OracleAssembler(mesh, mat).stiffness()
    rng = np.random.default_rng(2)
    temps = 37.0 + rng.random(mesh.n_nodes)
    for variant in (Variant.CLASSICAL_ISO_TEMP_INDEP, Variant.CLASSICAL_ANISO_TEMP_DEP):
        op = ConductionOperator(mesh, pre, mat, variant)
        np.testing.assert_allclose(op.apply(temps), k @ temps,
                                   rtol=1e-11, atol=1e-13)


def test_assembly_on_displaced_coordinates_matches_pullback():
    mesh = random_tet_mesh(n_cells=2, seed=18, jitter=0.15)
    pre = precompute(mesh)
    mat = make_material(k=0.5)
    rng = np.random.default_rng(3)
    disp = 0.04 * rng.normal(size=(mesh.n_nodes, 3))
    temps = 37.0 + rng.random(mesh.n_nodes)
    op = ConductionOperator(mesh, pre, mat, Variant.DEFORMED_ANISO_TEMP_DEP)
    loads = op.apply(temps, deformation=DeformationState(disp))
    k = OracleAssembler(mesh, mat).stiffness(coords=mesh.nodes + disp)
    np.testing.assert_allclose(loads, k @ temps, rtol=1e-11, atol=1e-13)


def test_assemble_bundles_balance_terms():
    mesh = random_tet_mesh(n_cells=2, seed=19, jitter=0.1)
    mat = make_material()
    perf = PerfusionParams(w_b=1.0, c_b=3617.0, T_a=37.0, Q_met=100.0)
    heater = np.array([0, 1], dtype=np.intp)
    bc = BoundaryConditions(
        dirichlet=(DirichletBC(nodes=np.array([5], dtype=np.intp), temperature=37.0),),
        fluxes=(FluxBC(nodes=heater, watts_per_node=0.5),),
        films=())
    system = assemble(mesh, mat, perfusion=perf, bc=bc)
    assert system.K.shape == (mesh.n_nodes, mesh.n_nodes)
    assert system.dirichlet_mask[5]
    assert system.external[0] == pytest.approx(0.5)
    assert np.all(system.C > 0)
    assert np.all(system.K_b > 0)


def test_independent_lumped_mass_agrees(tissue_material):
    mesh = random_tet_mesh(n_cells=3, seed=21, jitter=0.2)
    pre = precompute(mesh)
    temps = np.full(mesh.n_nodes, 48.0)
    ours = lumped_thermal_mass(mesh, pre, tissue_material, temps)
    theirs = _oracle_lumped_mass(mesh, tissue_material, temps)
    np.testing.assert_allclose(ours, theirs, rtol=1e-12)


def test_forward_replay_matches_production():
    mesh = random_tet_mesh(n_cells=2, seed=22, jitter=0.1, lengths=(0.03,) * 3)
    pre = precompute(mesh)
    mat = make_material(k=0.5)
    heater = np.array([0], dtype=np.intp)
    bc = BoundaryConditions(
        dirichlet=(DirichletBC(nodes=np.array([7], dtype=np.intp), temperature=37.0),),
        fluxes=(FluxBC(nodes=heater, watts_per_node=0.01),),
        films=())
    sched = Schedule(dt=0.5, total_time=20.0, snapshot_times=(10.0, 20.0),
                     events=((10.0, "source_off"),))
    ours = run(mesh, pre, mat, PerfusionParams(), bc, IdentityDeformation(),
               sched, Variant.CLASSICAL_ISO_TEMP_INDEP, probes=(0,))
    theirs = reference_transient(mesh, mat, PerfusionParams(), bc,
                                 IdentityDeformation(), sched, scheme="forward",
                                 probes=(0,))
    np.testing.assert_allclose(ours.snapshot_times, theirs.snapshot_times, atol=1e-12)
    for a, b in zip(ours.snapshots, theirs.snapshots):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-11)
    np.testing.assert_allclose(ours.probe_values, theirs.probe_values,
                               rtol=1e-10, atol=1e-11)


def test_backward_scheme_against_hand_iteration():
    """Uniform perfusion relaxation has no conduction; the implicit update
    per node reduces to (C/dt T + K_b T_a) / (C/dt + K_b)."""
    mesh = random_tet_mesh(n_cells=1, seed=23, jitter=0.0, lengths=(0.02,) * 3)
    pre = precompute(mesh)
    mat = make_material(k=0.5)
    perf = PerfusionParams(w_b=2.0, c_b=3617.0, T_a=37.0, Q_met=0.0)
    sched = Schedule(dt=20.0, total_time=100.0)
    rec = reference_transient(mesh, mat, perf, NO_BC, IdentityDeformation(),
                              sched, scheme="backward",
                              initial_temperature=45.0, probes=(0,))
    from fedbht.integrator import build_thermal_state, node_volumes

    state = build_thermal_state(mesh, pre, mat, perf, NO_BC, 45.0)
    c0 = state.lumped_mass[0]
    kb0 = state.perfusion_diag[0]
    t = 45.0
    expected = [45.0]
    for _ in range(5):
        t = (c0 / 20.0 * t + kb0 * 37.0) / (c0 / 20.0 + kb0)
        expected.append(t)
    np.testing.assert_allclose(rec.probe_values[:, 0], expected, rtol=1e-9)


def test_backward_matches_dense_direct_solve():
    mesh = random_tet_mesh(n_cells=1, seed=25, jitter=0.1, lengths=(0.02,) * 3)
    pre = precompute(mesh)
    mat = make_material(k=0.5)
    pinned = np.array([0], dtype=np.intp)
    bc = BoundaryConditions(
        dirichlet=(DirichletBC(nodes=pinned, temperature=40.0),),
        fluxes=(), films=())
    sched = Schedule(dt=50.0, total_time=50.0)  # one implicit step
    rec = reference_transient(mesh, mat, PerfusionParams(), bc,
                              IdentityDeformation(), sched, scheme="backward")

    from fedbht.integrator import build_thermal_state

    state = build_thermal_state(mesh, pre, mat, PerfusionParams(), bc, 37.0)
    k = OracleAssembler(mesh, mat).stiffness().toarray()
    n = mesh.n_nodes
    a = k + np.diag(state.lumped_mass / 50.0)
    b = state.lumped_mass / 50.0 * state.T
    free = ~state.dirichlet_mask
    fixed_vals = np.where(state.dirichlet_mask, state.dirichlet_values, 0.0)
    rhs = b[free] - (a @ fixed_vals)[free]
    t_free = np.linalg.solve(a[np.ix_(free, free)], rhs)
    expected = fixed_vals.copy()
    expected[free] = t_free
    np.testing.assert_allclose(rec.final_temps, expected, rtol=1e-9, atol=1e-10)
