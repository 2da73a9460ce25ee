"""Mesh loading and reference-configuration precomputation.

Supported mesh file format (ASCII, ``#`` starts a comment):

    NODES <n>
    <x> <y> <z>          (n lines, metres)
    TET4 <m>
    <i0> <i1> <i2> <i3>  (m lines, zero-based node indices)
    HEX8 <p>
    <i0> ... <i7>        (p lines, zero-based node indices)

Sections may appear in any order; NODES is mandatory, element sections are
optional and a mesh may mix tet4 and hex8 blocks. Hexahedra use the standard
isoparametric ordering: nodes 0-3 form the bottom face (counterclockwise
seen from +z), nodes 4-7 the top face directly above them.

Node-set files carry one zero-based node index per line.

All geometry is validated on construction: connectivity indices must be in
range and every element must have positive measure (signed tet volume,
centre-point Jacobian determinant for hexes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, MeshFormatError, TopologyError

# Degenerate-element floor. Volumes and Jacobian determinants at or below
# this are treated as collapsed geometry even if numerically positive.
DEGENERATE_MEASURE = 1e-18

# Reference tet4 shape-function derivatives w.r.t. natural coordinates,
# rows = nodes. The element map Jacobian is coords.T @ TET_DN.
TET_DN = np.array(
    [
        [-1.0, -1.0, -1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ]
)

# Natural-coordinate signs of the eight hex corners (isoparametric cube
# [-1,1]^3, bottom face first). Row a gives (xi_a, eta_a, zeta_a).
HEX_SIGNS = np.array(
    [
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ]
)

# Trilinear shape derivatives at the element centre, rows = nodes.
HEX_DN_CENTER = HEX_SIGNS / 8.0


@dataclass
class Mesh:
    """Immutable tet4/hex8 mesh in the reference configuration."""

    nodes: np.ndarray
    tets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.intp))
    hexes: np.ndarray = field(default_factory=lambda: np.zeros((0, 8), dtype=np.intp))

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=np.float64))
        self.tets = np.ascontiguousarray(np.asarray(self.tets, dtype=np.intp).reshape(-1, 4))
        self.hexes = np.ascontiguousarray(np.asarray(self.hexes, dtype=np.intp).reshape(-1, 8))
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise TopologyError(f"node array must be (n, 3), got {self.nodes.shape}")
        if not np.all(np.isfinite(self.nodes)):
            raise GeometryError("non-finite node coordinates")
        self._check_indices(self.tets, "tet4")
        self._check_indices(self.hexes, "hex8")

    def _check_indices(self, conn: np.ndarray, kind: str):
        if conn.size == 0:
            return
        bad = (conn < 0) | (conn >= self.n_nodes)
        if np.any(bad):
            elem = int(np.argwhere(bad.any(axis=1))[0, 0])
            raise TopologyError(
                f"{kind} element {elem} references node {int(conn[elem][bad[elem]][0])} "
                f"outside [0, {self.n_nodes})"
            )

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.tets.shape[0] + self.hexes.shape[0]


@dataclass
class ElementPrecomp:
    """Reference-configuration factors shared by every formulation.

    tet_shape_derivs: (n_tet, 3, 4), column a holds the gradient of shape
        function a w.r.t. reference coordinates.
    tet_volumes: (n_tet,) reference volumes in m^3.
    hex_shape_derivs: (n_hex, 3, 8), centre-point gradients.
    hex_jacobian_dets: (n_hex,) centre-point Jacobian determinants; the
        one-point element volume is 8 * det.
    """

    tet_shape_derivs: np.ndarray
    tet_volumes: np.ndarray
    hex_shape_derivs: np.ndarray
    hex_jacobian_dets: np.ndarray

    @property
    def total_volume(self) -> float:
        return float(self.tet_volumes.sum() + 8.0 * self.hex_jacobian_dets.sum())


def precompute(mesh: Mesh) -> ElementPrecomp:
    """Compute reference shape-function derivatives and element measures.

    Raises GeometryError (with the element index) for any element whose
    volume or Jacobian determinant is non-positive or degenerate.
    """
    n_tet = mesh.tets.shape[0]
    n_hex = mesh.hexes.shape[0]

    tet_grads = np.zeros((n_tet, 3, 4))
    tet_vols = np.zeros(n_tet)
    if n_tet:
        coords = mesh.nodes[mesh.tets]  # (n_tet, 4, 3)
        jac = np.einsum("eaj,ak->ejk", coords, TET_DN)  # (n_tet, 3, 3)
        dets = np.linalg.det(jac)
        vols = dets / 6.0
        bad = vols <= DEGENERATE_MEASURE
        if np.any(bad):
            elem = int(np.argmax(bad))
            raise GeometryError(
                f"tet4 element {elem} has non-positive or degenerate volume "
                f"{vols[elem]:.3e} m^3 (node order must give det > 0)"
            )
        tet_grads = _solve_grads(jac, TET_DN)
        tet_vols = vols

    hex_grads = np.zeros((n_hex, 3, 8))
    hex_dets = np.zeros(n_hex)
    if n_hex:
        coords = mesh.nodes[mesh.hexes]  # (n_hex, 8, 3)
        jac = np.einsum("eaj,ak->ejk", coords, HEX_DN_CENTER)
        dets = np.linalg.det(jac)
        bad = dets <= DEGENERATE_MEASURE
        if np.any(bad):
            elem = int(np.argmax(bad))
            raise GeometryError(
                f"hex8 element {elem} has non-positive or degenerate centre "
                f"Jacobian determinant {dets[elem]:.3e} m^3"
            )
        hex_grads = _solve_grads(jac, HEX_DN_CENTER)
        hex_dets = dets

    return ElementPrecomp(
        tet_shape_derivs=tet_grads,
        tet_volumes=tet_vols,
        hex_shape_derivs=hex_grads,
        hex_jacobian_dets=hex_dets,
    )


def _solve_grads(jac: np.ndarray, dn: np.ndarray) -> np.ndarray:
    """Batched J^{-T} @ dN^T without forming inverses explicitly."""
    n = jac.shape[0]
    rhs = np.broadcast_to(dn.T, (n,) + dn.T.shape)  # (n, 3, k)
    # solve J^T X = dN^T  =>  X = J^{-T} dN^T
    return np.linalg.solve(np.transpose(jac, (0, 2, 1)), rhs)


def load_mesh(path) -> Mesh:
    """Parse a mesh file. See the module docstring for the format."""
    nodes = None
    tets = None
    hexes = None

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()

    def strip(line: str) -> str:
        return line.split("#", 1)[0].strip()

    idx = 0
    n_lines = len(lines)
    while idx < n_lines:
        text = strip(lines[idx])
        lineno = idx + 1
        idx += 1
        if not text:
            continue
        parts = text.split()
        keyword = parts[0].upper()
        if keyword not in ("NODES", "TET4", "HEX8"):
            raise MeshFormatError(f"unknown section keyword {parts[0]!r}", lineno)
        if len(parts) != 2:
            raise MeshFormatError(f"{keyword} header needs exactly one count", lineno)
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"invalid {keyword} count {parts[1]!r}", lineno) from None
        if count < 0:
            raise MeshFormatError(f"negative {keyword} count", lineno)

        width = {"NODES": 3, "TET4": 4, "HEX8": 8}[keyword]
        conv = float if keyword == "NODES" else int
        rows = []
        while len(rows) < count:
            if idx >= n_lines:
                raise MeshFormatError(
                    f"{keyword} section declares {count} entries but file ends "
                    f"after {len(rows)}",
                    n_lines,
                )
            text = strip(lines[idx])
            lineno = idx + 1
            idx += 1
            if not text:
                continue
            fields = text.split()
            if len(fields) != width:
                raise MeshFormatError(
                    f"expected {width} values in {keyword} entry, got {len(fields)}",
                    lineno,
                )
            try:
                rows.append([conv(f) for f in fields])
            except ValueError:
                raise MeshFormatError(
                    f"invalid {keyword} entry {text!r}", lineno
                ) from None

        if keyword == "NODES":
            if nodes is not None:
                raise MeshFormatError("duplicate NODES section", lineno)
            nodes = np.array(rows, dtype=np.float64).reshape(count, 3)
        elif keyword == "TET4":
            if tets is not None:
                raise MeshFormatError("duplicate TET4 section", lineno)
            tets = np.array(rows, dtype=np.intp).reshape(count, 4)
        else:
            if hexes is not None:
                raise MeshFormatError("duplicate HEX8 section", lineno)
            hexes = np.array(rows, dtype=np.intp).reshape(count, 8)

    if nodes is None:
        raise MeshFormatError("missing NODES section", n_lines)

    mesh = Mesh(
        nodes=nodes,
        tets=tets if tets is not None else np.zeros((0, 4), dtype=np.intp),
        hexes=hexes if hexes is not None else np.zeros((0, 8), dtype=np.intp),
    )
    # fail fast on inverted geometry so downstream never sees it
    precompute(mesh)
    return mesh


def write_mesh(path, mesh: Mesh):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"NODES {mesh.n_nodes}\n")
        for x, y, z in mesh.nodes:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        if mesh.tets.size:
            fh.write(f"TET4 {mesh.tets.shape[0]}\n")
            for row in mesh.tets:
                fh.write(" ".join(str(int(i)) for i in row) + "\n")
        if mesh.hexes.size:
            fh.write(f"HEX8 {mesh.hexes.shape[0]}\n")
            for row in mesh.hexes:
                fh.write(" ".join(str(int(i)) for i in row) + "\n")


def load_node_set(path, n_nodes: int) -> np.ndarray:
    """Parse a node-set file: one zero-based node index per line."""
    indices = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise MeshFormatError(
                    f"invalid node index {text!r}", lineno
                ) from None
            if value < 0 or value >= n_nodes:
                raise MeshFormatError(
                    f"node index {value} outside [0, {n_nodes})", lineno
                )
            indices.append(value)
    return np.array(sorted(set(indices)), dtype=np.intp)


def write_node_set(path, indices):
    with open(path, "w", encoding="utf-8") as fh:
        for i in np.asarray(indices, dtype=np.intp):
            fh.write(f"{int(i)}\n")
