"""Element conduction loads, matrix-free, for five formulation variants.

Every variant evaluates the action of the conduction operator on the nodal
temperature vector without assembling a global matrix. They differ in what
is frozen at build time:

  deformed_aniso_temp_dep    pull the conduction integral back to the
                             reference configuration through the per-element
                             deformation gradient; anisotropic, temperature-
                             dependent conductivity evaluated every call.
  classical_aniso_temp_dep   no deformation; cache volume * grad^T per
                             element, evaluate the conductivity tensor at the
                             element mean temperature every call.
  classical_aniso_temp_indep no deformation, conductivity constant in
                             temperature, so the full element stiffness is
                             cached at build time.
  classical_iso_temp_dep     no deformation, scalar conductivity; cache the
                             geometric stiffness volume * grad^T grad and
                             scale it by k(T) every call.
  classical_iso_temp_indep   scalar constant conductivity; full element
                             stiffness cached at build time.

Element loads are the positive-semidefinite form K_e @ T_e; the explicit
update subtracts them, which makes pure conduction dissipative.

Tet4 elements integrate exactly (constant gradients). Hex8 elements use
one-point reduced integration at the element centre with weight
8 * det(J0).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .deformation import DET_FLOOR, DeformationState, inv_det_3x3
from .errors import SingularDeformationError
from .material import MaterialModel
from .mesh import ElementPrecomp, Mesh

IDENTITY_3 = np.eye(3)


class Variant(Enum):
    """Formulation variants, ordered from most general to most precomputed."""

    DEFORMED_ANISO_TEMP_DEP = "deformed_aniso_temp_dep"
    CLASSICAL_ANISO_TEMP_DEP = "classical_aniso_temp_dep"
    CLASSICAL_ANISO_TEMP_INDEP = "classical_aniso_temp_indep"
    CLASSICAL_ISO_TEMP_DEP = "classical_iso_temp_dep"
    CLASSICAL_ISO_TEMP_INDEP = "classical_iso_temp_indep"

    @classmethod
    def from_string(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("-", "_")
        if key in _ROMAN:
            return _ROMAN[key]
        for member in cls:
            if member.value == key or member.name.lower() == key:
                return member
        raise ValueError(
            f"unknown variant {name!r}; use one of "
            f"{[m.value for m in cls]} or i..v"
        )

    @property
    def roman(self) -> str:
        return _TO_ROMAN[self]

    @property
    def uses_deformation(self) -> bool:
        return self is Variant.DEFORMED_ANISO_TEMP_DEP

    @property
    def temperature_dependent(self) -> bool:
        return self in (
            Variant.DEFORMED_ANISO_TEMP_DEP,
            Variant.CLASSICAL_ANISO_TEMP_DEP,
            Variant.CLASSICAL_ISO_TEMP_DEP,
        )

    @property
    def requires_isotropic(self) -> bool:
        return self in (Variant.CLASSICAL_ISO_TEMP_DEP, Variant.CLASSICAL_ISO_TEMP_INDEP)

    @property
    def full_precompute(self) -> bool:
        return self in (Variant.CLASSICAL_ANISO_TEMP_INDEP, Variant.CLASSICAL_ISO_TEMP_INDEP)


_ROMAN = {
    "i": Variant.DEFORMED_ANISO_TEMP_DEP,
    "ii": Variant.CLASSICAL_ANISO_TEMP_DEP,
    "iii": Variant.CLASSICAL_ANISO_TEMP_INDEP,
    "iv": Variant.CLASSICAL_ISO_TEMP_DEP,
    "v": Variant.CLASSICAL_ISO_TEMP_INDEP,
}
_TO_ROMAN = {v: k for k, v in _ROMAN.items()}


def element_loads_tet_deformed(temps, def_grad, conductivity, shape_derivs, volume):
    """Conduction loads of one tet4 pulled back to the reference element.

    temps: (4,) nodal temperatures.
    def_grad: (3, 3) deformation gradient F.
    conductivity: (3, 3) conductivity tensor in the deformed configuration.
    shape_derivs: (3, 4) reference shape-function gradients.
    volume: reference element volume.

    Returns (4,) loads = V det(F) W^T D W temps with W = F^{-T} grad.
    """
    return _deformed_sandwich(temps, def_grad, conductivity, shape_derivs, volume)


def element_loads_hex_deformed(temps, def_grad, conductivity, shape_derivs, jacobian_det):
    """One-point reduced-integration hex8 counterpart of the tet kernel.

    The integration weight is 8 * det(J0), with J0 the reference-element
    Jacobian at the centre point.
    """
    return _deformed_sandwich(temps, def_grad, conductivity, shape_derivs, 8.0 * jacobian_det)


def _deformed_sandwich(temps, def_grad, conductivity, shape_derivs, weight):
    f = np.asarray(def_grad, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv, det = inv_det_3x3(f[np.newaxis])
    d = float(det[0])
    if d <= DET_FLOOR:
        raise SingularDeformationError(
            f"deformation gradient determinant {d:.3e} is at or below {DET_FLOOR:g}"
        )
    w = inv[0].T @ shape_derivs  # spatial gradients on the deformed element
    return (weight * d) * (w.T @ (conductivity @ (w @ np.asarray(temps, dtype=np.float64))))


@dataclass
class _Block:
    """One element family (tet4 or hex8) with its cached factors."""

    kind: str
    conn: np.ndarray          # (n, k) node indices
    grads: np.ndarray         # (n, 3, k) reference shape-function gradients
    weights: np.ndarray       # (n,) integration weights (V or 8 det J0)
    vbt: np.ndarray | None = None       # (n, k, 3) weight * grad^T
    geo: np.ndarray | None = None       # (n, k, k) weight * grad^T grad
    stiffness: np.ndarray | None = None  # (n, k, k) frozen full stiffness


class ConductionOperator:
    """Matrix-free conduction operator for one mesh/material/variant.

    Build once per run; :meth:`apply` evaluates the global load vector
    K(T) @ T. Results are deterministic for a fixed thread count, and the
    threaded path stays within round-off of the serial one.
    """

    def __init__(
        self,
        mesh: Mesh,
        precomp: ElementPrecomp,
        material: MaterialModel,
        variant: Variant,
        reference_temperature: float = 37.0,
        threads: int | None = None,
    ):
        if variant.requires_isotropic and not material.isotropic:
            raise ValueError(f"variant {variant.value} requires isotropic conductivity")
        self.mesh = mesh
        self.material = material
        self.variant = variant
        self.reference_temperature = float(reference_temperature)
        self.n_nodes = mesh.n_nodes
        self.threads = _resolve_threads(threads)
        self._pool: ThreadPoolExecutor | None = None

        self._blocks: list[_Block] = []
        if mesh.tets.size:
            self._blocks.append(
                _Block("tet4", mesh.tets, precomp.tet_shape_derivs, precomp.tet_volumes.copy())
            )
        if mesh.hexes.size:
            self._blocks.append(
                _Block(
                    "hex8",
                    mesh.hexes,
                    precomp.hex_shape_derivs,
                    8.0 * precomp.hex_jacobian_dets,
                )
            )

        d0 = None
        if variant.full_precompute or not variant.temperature_dependent:
            d0 = material.conductivity_matrix(self.reference_temperature)
        for block in self._blocks:
            if variant is Variant.CLASSICAL_ANISO_TEMP_DEP:
                block.vbt = block.weights[:, None, None] * np.transpose(block.grads, (0, 2, 1))
            elif variant is Variant.CLASSICAL_ISO_TEMP_DEP:
                block.geo = block.weights[:, None, None] * np.einsum(
                    "eka,ekb->eab", block.grads, block.grads
                )
            elif variant.full_precompute:
                block.stiffness = block.weights[:, None, None] * np.einsum(
                    "eka,kl,elb->eab", block.grads, d0, block.grads
                )

    # -- public API ---------------------------------------------------------

    def apply(self, temps, deformation: DeformationState | None = None, property_temps=None):
        """Global conduction loads K(T) @ temps.

        property_temps, when given, supplies the field at which temperature-
        dependent properties are evaluated (the stability estimator freezes
        properties at the operating state while probing with eigenvector
        iterates). Defaults to ``temps``.
        """
        temps = np.asarray(temps, dtype=np.float64)
        if temps.shape != (self.n_nodes,):
            raise ValueError(f"temperature vector must be ({self.n_nodes},)")
        prop = temps if property_temps is None else np.asarray(property_temps, dtype=np.float64)

        disp = None
        if self.variant.uses_deformation and deformation is not None:
            disp = deformation.displacements
            if disp.shape[0] != self.n_nodes:
                raise ValueError(
                    f"deformation has {disp.shape[0]} nodes, mesh has {self.n_nodes}"
                )

        out = np.zeros(self.n_nodes)
        for block in self._blocks:
            loads = self._block_loads(block, temps, prop, disp)
            out += np.bincount(
                block.conn.ravel(), weights=loads.ravel(), minlength=self.n_nodes
            )
        return out

    def element_loads_classical(self, index: int, temps_e, kind: str = "tet4"):
        """Per-element loads for the classical variants (no deformation).

        Mirrors the batched path element by element; variant
        deformed_aniso_temp_dep must go through the deformed kernels instead.
        """
        if self.variant.uses_deformation:
            raise ValueError("classical per-element loads undefined for the deformed variant")
        block = self._block(kind)
        t = np.asarray(temps_e, dtype=np.float64)
        if self.variant is Variant.CLASSICAL_ANISO_TEMP_DEP:
            d = self.material.conductivity_matrix(float(t.mean()))
            b = block.grads[index]
            return block.vbt[index] @ (d @ (b @ t))
        if self.variant is Variant.CLASSICAL_ISO_TEMP_DEP:
            k = self.material.conductivity.evaluate(float(t.mean()))
            return k * (block.geo[index] @ t)
        return block.stiffness[index] @ t

    # -- internals ----------------------------------------------------------

    def _block(self, kind: str) -> _Block:
        for block in self._blocks:
            if block.kind == kind:
                return block
        raise ValueError(f"mesh has no {kind} elements")

    def _block_loads(self, block: _Block, temps, prop, disp):
        n = block.conn.shape[0]
        if self.threads >= 2 and n >= 2 * _MIN_CHUNK:
            return self._block_loads_threaded(block, temps, prop, disp)
        return _chunk_loads(self, block, slice(0, n), temps, prop, disp)

    def _block_loads_threaded(self, block: _Block, temps, prop, disp):
        n = block.conn.shape[0]
        n_chunks = min(self.threads, max(1, n // _MIN_CHUNK))
        bounds = np.linspace(0, n, n_chunks + 1, dtype=int)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.threads)
        futures = [
            self._pool.submit(_chunk_loads, self, block, slice(int(a), int(b)), temps, prop, disp)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        return np.concatenate([f.result() for f in futures], axis=0)


_MIN_CHUNK = 256


def _chunk_loads(op: ConductionOperator, block: _Block, rng: slice, temps, prop, disp):
    """Loads for a contiguous element range; pure function of its inputs."""
    conn = block.conn[rng]
    grads = block.grads[rng]
    temps_e = temps[conn]
    variant = op.variant

    if variant is Variant.CLASSICAL_ANISO_TEMP_INDEP or variant is Variant.CLASSICAL_ISO_TEMP_INDEP:
        return np.einsum("eab,eb->ea", block.stiffness[rng], temps_e)

    if variant is Variant.CLASSICAL_ISO_TEMP_DEP:
        k = op.material.conductivity.evaluate(prop[conn].mean(axis=1))
        return k[:, None] * np.einsum("eab,eb->ea", block.geo[rng], temps_e)

    d = _conductivity_batch(op.material, prop[conn].mean(axis=1))

    if variant is Variant.CLASSICAL_ANISO_TEMP_DEP:
        g = np.einsum("eka,ea->ek", grads, temps_e)
        q = np.einsum("ekl,el->ek", d, g)
        return np.einsum("eak,ek->ea", block.vbt[rng], q)

    # deformed variant; fall back to the classical sandwich when the mesh
    # does not move (F = I exactly)
    if disp is None:
        g = np.einsum("eka,ea->ek", grads, temps_e)
        q = np.einsum("ekl,el->ek", d, g)
        return block.weights[rng, None] * np.einsum("eka,ek->ea", grads, q)

    u = disp[conn]  # (n, k, 3)
    f = IDENTITY_3 + np.einsum("eaj,eka->ejk", u, grads)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv, det = inv_det_3x3(f)
    bad = det <= DET_FLOOR
    if np.any(bad):
        local = int(np.argmax(bad))
        elem = rng.start + local
        raise SingularDeformationError(
            f"{block.kind} element {elem}: deformation gradient determinant "
            f"{det[local]:.3e} is at or below {DET_FLOOR:g}"
        )
    w = np.einsum("elk,ela->eka", inv, grads)  # F^{-T} grad
    g = np.einsum("eka,ea->ek", w, temps_e)
    q = np.einsum("ekl,el->ek", d, g)
    return (block.weights[rng] * det)[:, None] * np.einsum("eka,ek->ea", w, q)


def _conductivity_batch(material: MaterialModel, tmean: np.ndarray) -> np.ndarray:
    if material.isotropic:
        k = material.conductivity.evaluate(tmean)
        return k[:, None, None] * IDENTITY_3
    return material.conductivity.evaluate(tmean)


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        raw = os.environ.get("FEDBHT_THREADS", "0").strip()
        try:
            threads = int(raw) if raw else 0
        except ValueError:
            threads = 0
    return max(0, int(threads))


def accumulate_global_loads(
    variant: Variant,
    mesh: Mesh,
    precomp: ElementPrecomp,
    temps,
    material: MaterialModel,
    deformation: DeformationState | None = None,
    reference_temperature: float = 37.0,
    threads: int | None = None,
):
    """One-shot global conduction loads; builds a throwaway operator.

    Long-running callers should hold a :class:`ConductionOperator` instead
    so the per-variant caches persist across steps.
    """
    op = ConductionOperator(
        mesh, precomp, material, variant,
        reference_temperature=reference_temperature, threads=threads,
    )
    return op.apply(temps, deformation=deformation)
