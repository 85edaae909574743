"""Tetrahedral meshes of box domains: topology, orientation, boundary labels, patches."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
LABEL_CODES = {"D": DIRICHLET, "N": NEUMANN}
LABEL_NAMES = {DIRICHLET: "D", NEUMANN: "N"}

BOX_FACES = ("x0", "x1", "y0", "y1", "z0", "z1")

# local face j of a tet is opposite local vertex j; vertices listed ascending
LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Patch:
    """A set of tets gathered around a mesh entity.

    ``boundary_faces`` lists the faces on the patch boundary, and
    ``free_faces`` the subset on which a local problem leaves the trace
    unconstrained (the Neumann part touching the centre entity).
    """

    kind: str
    center: int
    tets: np.ndarray
    extension: int
    boundary_faces: np.ndarray
    free_faces: np.ndarray

    @property
    def constrained_faces(self) -> np.ndarray:
        return np.setdiff1d(self.boundary_faces, self.free_faces)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    tets: np.ndarray
    faces: np.ndarray
    edges: np.ndarray
    tet_faces: np.ndarray
    tet_edges: np.ndarray
    face_tets: np.ndarray
    face_label: np.ndarray
    regions: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # sizes -------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_label != INTERIOR)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_label == INTERIOR)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces - self.n_tets

    # geometry ----------------------------------------------------------
    @cached_property
    def jacobians(self) -> np.ndarray:
        x = self.vertices[self.tets]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=-1)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(np.linalg.det(self.jacobians)) / 6.0

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        x = self.vertices[self.tets]
        d = x[:, LOCAL_EDGES[:, 1]] - x[:, LOCAL_EDGES[:, 0]]
        return np.linalg.norm(d, axis=-1).max(axis=1)

    @cached_property
    def face_areas(self) -> np.ndarray:
        x = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=-1)

    @cached_property
    def face_diameters(self) -> np.ndarray:
        x = self.vertices[self.faces]
        d = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 2] - x[:, 1]], axis=1)
        return np.linalg.norm(d, axis=-1).max(axis=1)

    @cached_property
    def inradii(self) -> np.ndarray:
        total_area = self.face_areas[self.tet_faces].sum(axis=1)
        return 3.0 * self.volumes / total_area

    @cached_property
    def shape_regularity(self) -> np.ndarray:
        """kappa_K = h_K / rho_K with rho_K the inscribed-ball diameter."""
        return self.diameters / (2.0 * self.inradii)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals, outward from the lower-index adjacent tet."""
        x = self.vertices[self.faces]
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        owner = self.face_tets[:, 0]
        outward = x[:, 0] - self.centroids[owner]
        flip = np.einsum("fi,fi->f", n, outward) < 0
        n[flip] *= -1
        return n

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        x = self.vertices[self.edges]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=-1)

    @cached_property
    def edge_tangents(self) -> np.ndarray:
        x = self.vertices[self.edges]
        return (x[:, 1] - x[:, 0]) / self.edge_lengths[:, None]

    @cached_property
    def side_signs(self) -> np.ndarray:
        """(T, 4) array: n_K . n_F for each local face of each tet."""
        owner = self.face_tets[self.tet_faces, 0]
        return np.where(owner == np.arange(self.n_tets)[:, None], 1.0, -1.0)

    # incidence ---------------------------------------------------------
    @cached_property
    def vertex_tets(self) -> list[np.ndarray]:
        return _invert(self.tets, self.n_vertices)

    @cached_property
    def edge_tets(self) -> list[np.ndarray]:
        return _invert(self.tet_edges, self.n_edges)

    @cached_property
    def face_edges(self) -> np.ndarray:
        lookup = {tuple(e): i for i, e in enumerate(self.edges)}
        fe = [[lookup[(f[0], f[1])], lookup[(f[0], f[2])], lookup[(f[1], f[2])]] for f in self.faces.tolist()]
        return np.array(fe, dtype=np.int64)

    @cached_property
    def vertex_label(self) -> np.ndarray:
        """Bit flags per vertex: 1 if on a Dirichlet face, 2 if on a Neumann face."""
        flags = np.zeros(self.n_vertices, dtype=np.int64)
        for code in (DIRICHLET, NEUMANN):
            verts = np.unique(self.faces[self.face_label == code])
            flags[verts] |= code
        return flags

    @cached_property
    def edge_label(self) -> np.ndarray:
        """Bit flags per edge: 1 if it lies in a Dirichlet face, 2 if in a Neumann face."""
        flags = np.zeros(self.n_edges, dtype=np.int64)
        for code in (DIRICHLET, NEUMANN):
            edges = np.unique(self.face_edges[self.face_label == code])
            flags[edges] |= code
        return flags

    @cached_property
    def element_adjacency(self):
        """CSR matrix of tets sharing at least one vertex (including self)."""
        import scipy.sparse as sp

        rows = np.repeat(np.arange(self.n_tets), 4)
        inc = sp.csr_matrix((np.ones(rows.size), (rows, self.tets.ravel())), shape=(self.n_tets, self.n_vertices))
        adj = (inc @ inc.T).tocsr()
        adj.data[:] = 1.0
        adj.sort_indices()
        return adj

    def patch_extreme(self, values: np.ndarray, levels: int, op=np.minimum) -> np.ndarray:
        """Per element, min (or max) of ``values`` over its ``levels``-times extended patch."""
        adj = self.element_adjacency
        out = np.asarray(values, dtype=float)
        for _ in range(levels):
            out = op.reduceat(out[adj.indices], adj.indptr[:-1])
        return out

    def jump_signs(self, face: int) -> tuple[np.ndarray, np.ndarray]:
        """Incident tets of ``face`` and their signs n_K . n_F."""
        tets = self.face_tets[face]
        tets = tets[tets >= 0]
        signs = np.array([1.0, -1.0])[: len(tets)]
        return tets, signs

    def scaled(self, factor: float) -> "Mesh":
        return Mesh(self.vertices * factor, self.tets, self.faces, self.edges, self.tet_faces,
                    self.tet_edges, self.face_tets, self.face_label, self.regions)


def _invert(table: np.ndarray, n: int) -> list[np.ndarray]:
    rows = np.repeat(np.arange(len(table)), table.shape[1])
    cols = table.ravel()
    order = np.lexsort((rows, cols))
    counts = np.bincount(cols, minlength=n)
    return np.split(rows[order], np.cumsum(counts)[:-1])


def from_arrays(vertices, tets, boundary_labels, regions=None) -> Mesh:
    """Build a mesh from raw arrays.

    ``boundary_labels`` maps a sorted vertex triple to "D" or "N"; every
    boundary face must be listed.
    """
    vertices = np.asarray(vertices, dtype=float)
    tets = np.sort(np.asarray(tets, dtype=np.int64), axis=1)
    nt = len(tets)
    if regions is None:
        regions = np.zeros(nt, dtype=np.int64)

    all_faces = tets[:, LOCAL_FACES].reshape(-1, 3)
    faces, inv = np.unique(all_faces, axis=0, return_inverse=True)
    inv = inv.ravel()
    tet_faces = inv.reshape(nt, 4)
    face_tets = -np.ones((len(faces), 2), dtype=np.int64)
    owners = np.repeat(np.arange(nt), 4)
    order = np.lexsort((owners, inv))
    counts = np.bincount(inv, minlength=len(faces))
    if counts.max() > 2:
        raise MeshError("a face is shared by more than two tets")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    face_tets[:, 0] = owners[order[starts]]
    two = counts == 2
    face_tets[two, 1] = owners[order[starts[two] + 1]]

    all_edges = tets[:, LOCAL_EDGES].reshape(-1, 2)
    edges, einv = np.unique(all_edges, axis=0, return_inverse=True)
    tet_edges = einv.ravel().reshape(nt, 6)

    face_label = np.zeros(len(faces), dtype=np.int64)
    lookup = {tuple(f): i for i, f in enumerate(faces.tolist())}
    for key, lab in boundary_labels.items():
        idx = lookup.get(tuple(sorted(key)))
        if idx is None or counts[idx] != 1:
            raise MeshError(f"labelled face {key} is not a boundary face")
        face_label[idx] = LABEL_CODES[lab] if isinstance(lab, str) else int(lab)
    missing = np.flatnonzero((counts == 1) & (face_label == INTERIOR))
    if len(missing):
        raise MeshError(f"{len(missing)} boundary faces carry no label")
    if not np.any(face_label == DIRICHLET):
        raise MeshError("at least one Dirichlet face is required")

    arrays = [vertices, tets, faces, edges, tet_faces, tet_edges, face_tets, face_label,
              np.asarray(regions, dtype=np.int64)]
    for a in arrays:
        a.flags.writeable = False
    mesh = Mesh(*arrays)
    if np.any(mesh.volumes <= 0):
        raise MeshError("degenerate tetrahedron")
    return mesh


def parse_bc_spec(bc_spec) -> dict[str, str]:
    """Normalise a boundary spec: a dict over box faces, or a single letter."""
    if isinstance(bc_spec, str):
        bc = {k: bc_spec for k in BOX_FACES}
    else:
        bc = {k: "D" for k in BOX_FACES}
        bc.update(bc_spec)
    for k, v in bc.items():
        if k not in BOX_FACES or v not in LABEL_CODES:
            raise MeshError(f"bad boundary entry {k}={v}")
    if all(v == "N" for v in bc.values()):
        raise MeshError("all-Neumann boundary is not admissible; need a Dirichlet face")
    return bc


def build_structured_cube(n: int, bc_spec="D") -> Mesh:
    """Unit cube cut into n^3 subcubes, each split into 6 Kuhn tets."""
    if int(n) != n or n < 1:
        raise MeshError("n must be a positive integer")
    n = int(n)
    bc = parse_bc_spec(bc_spec)
    g = np.arange(n + 1)
    ii, jj, kk = np.meshgrid(g, g, g, indexing="ij")
    grid = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    vertices = grid / n

    def vid(p):
        return (p[..., 0] * (n + 1) + p[..., 1]) * (n + 1) + p[..., 2]

    corners = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), -1).reshape(-1, 3)
    eye = np.eye(3, dtype=np.int64)
    tets = []
    for perm in itertools.permutations(range(3)):
        steps = [np.zeros(3, dtype=np.int64)]
        for axis in perm:
            steps.append(steps[-1] + eye[axis])
        tets.append(np.stack([vid(corners + s) for s in steps], axis=1))
    tets = np.concatenate(tets, axis=0)
    tets = tets[np.lexsort(tets.T[::-1])]

    labels = {}
    faces = np.unique(np.sort(tets[:, LOCAL_FACES].reshape(-1, 3), axis=1), axis=0)
    for f in faces:
        x = vertices[f]
        for axis, name in enumerate("xyz"):
            for side, val in ((0, 0.0), (1, 1.0)):
                if np.all(x[:, axis] == val):
                    labels[tuple(f)] = bc[f"{name}{side}"]
    return from_arrays(vertices, tets, labels)


# patches ---------------------------------------------------------------

def _patch_boundary(mesh: Mesh, tets: np.ndarray) -> np.ndarray:
    faces, counts = np.unique(mesh.tet_faces[tets].ravel(), return_counts=True)
    return faces[counts == 1]


def _extend(mesh: Mesh, tets: np.ndarray, levels: int) -> np.ndarray:
    for _ in range(levels):
        verts = np.unique(mesh.tets[tets])
        tets = np.unique(np.concatenate([mesh.vertex_tets[v] for v in verts]))
    return tets


def patch_of(mesh: Mesh, kind: str, index: int, extension: int = 0) -> Patch:
    """Patch of tets around a vertex, edge, face or element.

    For elements, ``extension`` counts vertex-neighbour layers: 0 gives {K},
    1 the union of its vertex patches, and so on. The ``free_faces`` entry
    holds the Neumann boundary faces touching the centre entity for vertex
    and edge patches; those are the faces where local problems leave the
    normal (or tangential) trace free.
    """
    limits = {"vertex": mesh.n_vertices, "edge": mesh.n_edges, "face": mesh.n_faces, "element": mesh.n_tets}
    if kind not in limits:
        raise ValueError(f"unknown patch kind {kind!r}")
    if not 0 <= index < limits[kind]:
        raise IndexError(f"{kind} index {index} out of range")
    if kind == "vertex":
        tets = mesh.vertex_tets[index]
    elif kind == "edge":
        tets = mesh.edge_tets[index]
    elif kind == "face":
        tets = mesh.face_tets[index]
        tets = tets[tets >= 0]
    else:
        tets = np.array([index])
    tets = _extend(mesh, np.asarray(tets), extension)
    bfaces = _patch_boundary(mesh, tets)
    free = np.empty(0, dtype=np.int64)
    if kind in ("vertex", "edge"):
        neumann = bfaces[mesh.face_label[bfaces] == NEUMANN]
        if kind == "vertex":
            touches = np.any(mesh.faces[neumann] == index, axis=1)
        else:
            touches = np.any(mesh.face_edges[neumann] == index, axis=1)
        free = neumann[touches]
    return Patch(kind, int(index), tets, int(extension), bfaces, free)


def face_patch_union(mesh: Mesh, k: int) -> np.ndarray:
    """Union of the face patches of K's faces."""
    t = mesh.face_tets[mesh.tet_faces[k]].ravel()
    return np.unique(t[t >= 0])


def edge_patch_union(mesh: Mesh, k: int) -> np.ndarray:
    """Union of the edge patches of K's edges."""
    return np.unique(np.concatenate([mesh.edge_tets[e] for e in mesh.tet_edges[k]]))


def face_data(mesh: Mesh, face: int):
    """Area, unit normal and incident tets with their side signs."""
    if not 0 <= face < mesh.n_faces:
        raise IndexError(f"face index {face} out of range")
    tets, signs = mesh.jump_signs(face)
    return float(mesh.face_areas[face]), mesh.face_normals[face].copy(), tets, signs


# ASCII io --------------------------------------------------------------

def save_ascii(mesh: Mesh, path) -> None:
    lines = ["tetmesh v1", f"{mesh.n_vertices} {mesh.n_tets}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in t) + f" {int(r)}" for t, r in zip(mesh.tets, mesh.regions)]
    lines.append("B")
    for f in mesh.boundary_faces:
        lines.append(" ".join(str(int(i)) for i in mesh.faces[f]) + " " + LABEL_NAMES[int(mesh.face_label[f])])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ascii(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    if not rows or rows[0] != ["tetmesh", "v1"]:
        raise MeshError("missing 'tetmesh v1' header")
    nv, nt = int(rows[1][0]), int(rows[1][1])
    vertices = np.array([[float(c) for c in r] for r in rows[2:2 + nv]])
    trows = rows[2 + nv:2 + nv + nt]
    tets = np.array([[int(c) for c in r[:4]] for r in trows])
    regions = np.array([int(r[4]) if len(r) > 4 else 0 for r in trows])
    rest = rows[2 + nv + nt:]
    if not rest or rest[0] != ["B"]:
        raise MeshError("missing boundary section 'B'")
    labels = {tuple(sorted(int(c) for c in r[:3])): r[3] for r in rest[1:]}
    return from_arrays(vertices, tets, labels, regions)
