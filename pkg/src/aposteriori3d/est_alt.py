"""Edge-patch equilibration: three divergence-free RT fields sigma^k, k = 1..3,
approximating G x e^k, and the estimator sum_k ||G x e^k - sigma^k||_A^2.

Each sigma^k sums local fields sigma_l, weighted by tau_l . e^k, where sigma_l
lives on the edge patch and approximates G x psi_l under the constraint
div sigma_l = -G . curl psi_l (the divergence of G x psi_l for curl-free G).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import element_matrices, gram
from .est_equilibrated import (LocalLog, _chunked, check_curl_orthogonality, reconstruction_degree)
from .fem import BROKEN_SCALAR, NEDELEC, RAVIART_THOMAS, Field, build_space, element_quadrature
from .mesh import Mesh, patch_of
from .patches import PatchDofs
from .report import EstimatorReport
from .schemes import Problem, SchemeOutput
from .solvers import solve_eqp

# the regular-decomposition constant multiplying the reliability bound is not computed
RELIABILITY_CONSTANT = "C_L"


@dataclass
class EdgeFluxSet:
    """Per-edge local fields and the three combined global RT fields."""

    edge_fields: dict  # edge -> (global dofs, values)
    sigma: list  # three Fields
    log: LocalLog = field(default_factory=LocalLog)


class EdgeEquilibrator:
    """Element tables for the edge-patch problems in RT_{q+2}."""

    def __init__(self, problem: Problem, G: Field, q: int = 1):
        mesh = problem.mesh
        coef = problem.coefficient
        self.problem, self.mesh, self.G, self.q = problem, mesh, G, q
        self.rt = build_space(mesh, RAVIART_THOMAS, q + 2)
        pdiv = build_space(mesh, BROKEN_SCALAR, q + 1)
        ned1 = build_space(mesh, NEDELEC, 1)
        T = mesh.n_tets
        qd = G.space.degree + q + 5
        self.mass = _chunked(lambda e: element_matrices("weightedmass", self.rt, coefficient=coef, elems=e), T)
        self.div = _chunked(lambda e: element_matrices("div-pairing", self.rt, pdiv, elems=e), T)
        n = self.rt.nloc

        def tables(e):
            x, w = element_quadrature(mesh, e, qd)
            Gx = G.eval(e, x)
            psi = ned1.eval(e, x)  # (ne, nq, 6, 3), local edges in LOCAL_EDGES order
            cpsi = ned1.eval(e, x, "curl")
            target = np.cross(Gx[:, :, None, :], psi)
            At = np.einsum("eij,eqlj->eqli", coef.A[e], target)
            rhs = gram(w, At, self.rt.eval(e, x))  # (ne, 6, n)
            src = -np.einsum("eqi,eqli->eql", Gx, cpsi)
            m = pdiv.eval(e, x)
            d = gram(w, src, m)  # (ne, 6, nm)
            # norm-based magnitude ||G||_K ||curl psi_l||_K ||m||_K / |K|^(1/2); a componentwise
            # abs product can vanish while G . curl psi_l is pure roundoff
            gn = np.sqrt(np.einsum("eq,eqi,eqi->e", w, Gx, Gx))
            cn = np.sqrt(np.einsum("eq,eqli,eqli->el", w, cpsi, cpsi))
            mn = np.sqrt(np.einsum("eq,eqb,eqb->eb", w, m, m))
            vol = np.sqrt(mesh.volumes[e])
            size = (gn / vol)[:, None, None] * cn[:, :, None] * mn[:, None, :]
            return np.concatenate([rhs.reshape(len(e), -1), d.reshape(len(e), -1),
                                   size.reshape(len(e), -1)], axis=1)

        tab = _chunked(tables, T)
        self.rhs = tab[:, :6 * n].reshape(T, 6, n)
        rest = tab[:, 6 * n:]
        self.src = rest[:, :rest.shape[1] // 2].reshape(T, 6, -1)
        self.src_size = rest[:, rest.shape[1] // 2:].reshape(T, 6, -1)
        self.log = LocalLog()

    def edge_flux(self, edge: int):
        """Local field sigma_l on the edge patch: (patch dofs, coefficients)."""
        mesh = self.mesh
        patch = patch_of(mesh, "edge", edge)
        tets = patch.tets
        le = np.argmax(mesh.tet_edges[tets] == edge, axis=1)
        pd = PatchDofs(self.rt, tets, patch.constrained_faces)
        H = pd.matrix(self.mass[tets])
        c = pd.vector(self.rhs[tets, le])
        B = pd.rows(self.div[tets])
        g = self.src[tets, le].ravel()
        fr = pd.free
        res = solve_eqp(H[np.ix_(fr, fr)], c[fr], B[:, fr], g, label=f"edge flux on edge {edge}",
                        scale=np.linalg.norm(self.src_size[tets, le]))
        self.log.add("edge", edge, res)
        x = np.zeros(pd.n)
        x[fr] = res.x
        return pd, x

    def fluxes(self) -> EdgeFluxSet:
        mesh = self.mesh
        sig = np.zeros((3, self.rt.ndofs))
        edge_fields = {}
        for e in range(mesh.n_edges):
            pd, x = self.edge_flux(e)
            edge_fields[e] = (pd.global_dofs, x)
            for k in range(3):
                np.add.at(sig[k], pd.global_dofs, mesh.edge_tangents[e, k] * x)
        return EdgeFluxSet(edge_fields, [Field(self.rt, s) for s in sig], self.log)


def edge_flux(problem: Problem, G: Field, edge: int, q: int = 1, check: bool = True):
    if check:
        check_curl_orthogonality(G)
    return EdgeEquilibrator(problem, G, q).edge_flux(edge)


def alt_fluxes(problem: Problem, G: Field, q: int = 1, check: bool = True) -> EdgeFluxSet:
    """sigma^k = sum over edges of (tau_l . e^k) sigma_l for k = 1, 2, 3."""
    if check:
        check_curl_orthogonality(G)
    return EdgeEquilibrator(problem, G, q).fluxes()


def cross_mismatch2(problem: Problem, G: Field, sigma: Field, k: int) -> np.ndarray:
    """||G x e^k - sigma^k||_{A,K}^2 per element."""
    mesh = problem.mesh
    coef = problem.coefficient
    ek = np.eye(3)[k]
    qd = 2 * max(G.space.degree, sigma.space.degree) + 2

    def fn(e):
        x, w = element_quadrature(mesh, e, qd)
        r = np.cross(G.eval(e, x), ek) - sigma.eval(e, x)
        return np.einsum("eq,eqi,eij,eqj->e", w, r, coef.A[e], r)

    return _chunked(fn, mesh.n_tets)


def partition_of_unity_defect(mesh: Mesh, G: Field, degree: int = 4) -> float:
    """max over quadrature points of |sum_l (tau_l . e^k)(G x psi_l) - G x e^k|."""
    ned1 = build_space(mesh, NEDELEC, 1)
    elems = np.arange(mesh.n_tets)
    x, _ = element_quadrature(mesh, elems, degree)
    Gx = G.eval(elems, x)
    psi = ned1.eval(elems, x)
    tau = mesh.edge_tangents[mesh.tet_edges]  # (T, 6, 3)
    worst = 0.0
    for k in range(3):
        comb = np.einsum("el,eqli->eqi", tau[:, :, k], psi)
        lhs = np.cross(Gx, comb)
        rhs = np.cross(Gx, np.eye(3)[k])
        worst = max(worst, float(np.abs(lhs - rhs).max(initial=0.0)))
    return worst


def estimate_alternative(problem: Problem, G_or_output, check: bool = True) -> EstimatorReport:
    """eta_K^2 = sum_k ||G x e^k - sigma^k||_{A,K}^2.

    The reliability bound holds up to the regular-decomposition constant C_L,
    which is reported symbolically and not multiplied in.
    """
    if isinstance(G_or_output, SchemeOutput):
        G, scheme, p = G_or_output.gradient, G_or_output.scheme, G_or_output.degree
    else:
        G, scheme, p = G_or_output, "custom", G_or_output.space.degree + 1
    fluxes = alt_fluxes(problem, G, reconstruction_degree(p), check)
    terms = {f"component_{k + 1}": cross_mismatch2(problem, G, fluxes.sigma[k], k) for k in range(3)}
    meta = {"fluxes": fluxes, "constant": RELIABILITY_CONSTANT,
            "note": "reliable up to the regular-decomposition constant C_L"}
    return EstimatorReport("alternative", scheme, p, terms, metadata=meta)


__all__ = ["EdgeFluxSet", "EdgeEquilibrator", "edge_flux", "alt_fluxes", "estimate_alternative",
           "cross_mismatch2", "partition_of_unity_defect", "RELIABILITY_CONSTANT"]
