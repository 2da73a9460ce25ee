import numpy as np
import pytest

from fedbht.errors import GeometryError, MeshFormatError, TopologyError
from fedbht.mesh import (
    Mesh,
    load_mesh,
    load_node_set,
    precompute,
    write_mesh,
    write_node_set,
)

from conftest import random_tet_mesh


def test_unit_tet_volume_and_gradients(unit_tet):
    mesh, pre = unit_tet
    assert pre.tet_volumes[0] == pytest.approx(1.0 / 6.0, rel=1e-15)
    expected = np.array([[-1.0, 1.0, 0.0, 0.0],
                         [-1.0, 0.0, 1.0, 0.0],
                         [-1.0, 0.0, 0.0, 1.0]])
    np.testing.assert_allclose(pre.tet_shape_derivs[0], expected, atol=1e-14)


def test_unit_cube_hex_jacobian(unit_cube_hex):
    _, pre = unit_cube_hex
    assert pre.hex_jacobian_dets[0] == pytest.approx(0.125, rel=1e-14)
    assert pre.total_volume == pytest.approx(1.0, rel=1e-14)


def test_shape_gradients_kill_constants(unit_tet):
    # gradients of the partition of unity sum to zero
    _, pre = unit_tet
    np.testing.assert_allclose(pre.tet_shape_derivs[0].sum(axis=1), 0.0, atol=1e-14)


def test_gradients_reproduce_linear_field():
    mesh = random_tet_mesh(n_cells=2, seed=3, jitter=0.2)
    pre = precompute(mesh)
    coeff = np.array([0.3, -1.2, 2.5])
    field = mesh.nodes @ coeff
    grads = np.einsum("eka,ea->ek", pre.tet_shape_derivs, field[mesh.tets])
    np.testing.assert_allclose(grads, np.broadcast_to(coeff, grads.shape),
                               rtol=1e-11, atol=1e-12)


def test_block_mesh_tiles_the_box():
    mesh = random_tet_mesh(n_cells=3, seed=1, jitter=0.2, lengths=(0.2, 0.3, 0.1))
    pre = precompute(mesh)
    assert np.all(pre.tet_volumes > 0)
    assert pre.total_volume == pytest.approx(0.2 * 0.3 * 0.1, rel=1e-12)


def test_roundtrip(tmp_path):
    mesh = random_tet_mesh(n_cells=2, seed=5, jitter=0.15)
    path = tmp_path / "block.mesh"
    write_mesh(path, mesh)
    back = load_mesh(path)
    np.testing.assert_allclose(back.nodes, mesh.nodes, rtol=0, atol=0)
    np.testing.assert_array_equal(back.tets, mesh.tets)


def test_mixed_mesh_element_count(unit_tet, unit_cube_hex):
    nodes = np.vstack([unit_tet[0].nodes, unit_cube_hex[0].nodes + 2.0])
    mesh = Mesh(nodes=nodes,
                tets=np.array([[0, 1, 2, 3]], dtype=np.intp),
                hexes=(np.arange(8, dtype=np.intp) + 4).reshape(1, 8))
    assert mesh.n_elements == 2
    pre = precompute(mesh)
    assert pre.total_volume == pytest.approx(1.0 / 6.0 + 1.0, rel=1e-13)


def test_degenerate_tet_reports_element_index():
    nodes = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.5, 0.5, 0.0]])
    mesh = Mesh(nodes=nodes, tets=np.array([[0, 1, 2, 3]], dtype=np.intp),
                hexes=np.zeros((0, 8), dtype=np.intp))
    with pytest.raises(GeometryError, match="element 0"):
        precompute(mesh)


def test_inverted_tet_rejected():
    nodes = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, -1.0]])
    mesh = Mesh(nodes=nodes, tets=np.array([[0, 1, 2, 3]], dtype=np.intp),
                hexes=np.zeros((0, 8), dtype=np.intp))
    with pytest.raises(GeometryError):
        precompute(mesh)


def test_out_of_range_connectivity():
    with pytest.raises(TopologyError):
        Mesh(nodes=np.zeros((3, 3)),
             tets=np.array([[0, 1, 2, 7]], dtype=np.intp),
             hexes=np.zeros((0, 8), dtype=np.intp))


def test_parse_error_carries_line_number(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("NODES 2\n0 0 0\n0 0 nonsense\n")
    with pytest.raises(MeshFormatError, match="line 3") as err:
        load_mesh(path)
    assert err.value.line == 3


def test_parse_rejects_duplicate_section(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("NODES 1\n0 0 0\nNODES 1\n0 0 0\n")
    with pytest.raises(MeshFormatError):
        load_mesh(path)


def test_parse_comments_and_section_order(tmp_path):
    path = tmp_path / "ok.mesh"
    path.write_text(
        "# reversed section order\n"
        "TET4 1\n0 1 2 3\n"
        "NODES 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
    )
    mesh = load_mesh(path)
    assert mesh.n_nodes == 4 and mesh.tets.shape == (1, 4)


def test_node_set_roundtrip(tmp_path):
    path = tmp_path / "set.nodes"
    write_node_set(path, np.array([5, 1, 3]))
    back = load_node_set(path, 10)
    np.testing.assert_array_equal(back, [1, 3, 5])


def test_node_set_range_check(tmp_path):
    path = tmp_path / "set.nodes"
    path.write_text("0\n99\n")
    with pytest.raises(MeshFormatError, match="line 2"):
        load_node_set(path, 10)
