"""
Meshes, boundary labels and patches
===================================

Every computation lives on a Kuhn-subdivided unit cube.  This script builds
one, labels two faces as Neumann and walks through the patches that localise
the estimators.
"""

import numpy as np

from aposteriori3d.mesh import build_structured_cube, edge_patch_union, face_patch_union, patch_of

# n^3 cubes, six tets each; faces x0 and x1 are Neumann, the rest Dirichlet
mesh = build_structured_cube(2, {"x0": "N", "x1": "N"})
print(f"{mesh.n_vertices} vertices, {mesh.n_edges} edges, {mesh.n_faces} faces, {mesh.n_tets} tets")
print("volume", mesh.volumes.sum(), "Euler characteristic", mesh.euler_characteristic())

# the vertex patch of the cube centre holds 24 tets; its boundary is all interior faces
centre = int(np.flatnonzero(np.all(np.isclose(mesh.vertices, 0.5), axis=1))[0])
P = patch_of(mesh, "vertex", centre)
print("centre patch:", len(P.tets), "tets,", len(P.boundary_faces), "boundary faces")

# a patch touching the Neumann side leaves its Neumann faces free
corner = 0
P = patch_of(mesh, "vertex", corner)
print("corner patch:", len(P.tets), "tets, free (Neumann) faces", P.free_faces.tolist())

# the three element neighbourhoods used for local efficiency
k = 20
print("face-neighbours of K:", len(face_patch_union(mesh, k)),
      "| edge-patch union:", len(edge_patch_union(mesh, k)),
      "| vertex-extended patch:", len(patch_of(mesh, "element", k, 1).tets))
