"""Patch-local degree-of-freedom maps and dense assembly for local problems."""

from __future__ import annotations

import numpy as np

from .fem import CELL, EDGE, FACE, NEDELEC, RAVIART_THOMAS, FeSpace


class PatchDofs:
    """Restriction of a global (unconstrained) space to a set of tets.

    ``zero_faces`` are patch faces on which the natural trace must vanish:
    normal trace for RT, tangential trace for Nedelec.
    """

    def __init__(self, space: FeSpace, tets: np.ndarray, zero_faces: np.ndarray):
        self.space = space
        self.tets = np.asarray(tets)
        ed = space.elem_dofs[self.tets]
        self.global_dofs, inv = np.unique(ed, return_inverse=True)
        self.local = inv.reshape(ed.shape)
        self.n = len(self.global_dofs)
        kind = space.dof_kind[self.global_dofs]
        ent = space.dof_entity[self.global_dofs]
        mesh = space.mesh
        zero_faces = np.asarray(zero_faces, dtype=np.int64)
        if space.family == RAVIART_THOMAS:
            mask = (kind == FACE) & np.isin(ent, zero_faces)
        elif space.family == NEDELEC:
            edges = np.unique(mesh.face_edges[zero_faces]) if len(zero_faces) else np.empty(0, dtype=np.int64)
            mask = ((kind == FACE) & np.isin(ent, zero_faces)) | ((kind == EDGE) & np.isin(ent, edges))
        else:
            raise ValueError("patch dofs implemented for RT and Nedelec spaces")
        self.zero = mask
        self.free = np.flatnonzero(~mask)
        self.kind, self.entity = kind, ent

    def matrix(self, elem_mats: np.ndarray) -> np.ndarray:
        """Sum elementwise (nt, nloc, nloc) blocks into a dense patch matrix."""
        n, loc = self.n, self.local
        idx = (loc[:, :, None] * n + loc[:, None, :]).ravel()
        return np.bincount(idx, weights=elem_mats.ravel(), minlength=n * n).reshape(n, n)

    def vector(self, elem_vecs: np.ndarray) -> np.ndarray:
        return np.bincount(self.local.ravel(), weights=elem_vecs.ravel(), minlength=self.n)

    def rows(self, elem_rows: np.ndarray) -> np.ndarray:
        """Stack per-element constraint rows (nt, nr, nloc) into (nt*nr, n)."""
        nt, nr, _ = elem_rows.shape
        out = np.zeros((nt, nr, self.n))
        for i in range(nt):
            out[i][:, self.local[i]] = elem_rows[i]
        return out.reshape(nt * nr, self.n)

    def first_owner(self):
        """For each patch dof, an (element position, local index) where it lives."""
        flat = self.local.ravel()
        _, first = np.unique(flat, return_index=True)
        nloc = self.local.shape[1]
        return first // nloc, first % nloc

    def interior_dofs(self, boundary_faces: np.ndarray) -> np.ndarray:
        """Patch dofs not attached to the given patch-boundary faces (and, for
        Nedelec, their edges)."""
        if self.space.family == RAVIART_THOMAS:
            on = (self.kind == FACE) & np.isin(self.entity, boundary_faces)
        else:
            edges = np.unique(self.space.mesh.face_edges[boundary_faces])
            on = ((self.kind == FACE) & np.isin(self.entity, boundary_faces)) | \
                 ((self.kind == EDGE) & np.isin(self.entity, edges))
        return np.flatnonzero(~on)


__all__ = ["PatchDofs", "CELL"]
