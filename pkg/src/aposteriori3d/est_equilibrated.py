"""Curl-free and divergence-conforming reconstructions on vertex patches, and the
guaranteed equilibrated estimators built from them.

The curl-free field phi_h is assembled from three families of local problems:

* hat corrections: a divergence-free RT field on each vertex patch that
  matches grad(psi_a) x G in elementwise mean;
* tilde corrections: on each element, a divergence-free RT field whose
  normal trace equals that of psi_a times the summed hat corrections;
* potentials: a Nedelec field on the patch whose curl is the difference of
  the two corrections, closest to psi_a G.

The flux sigma_h sums patchwise mixed problems with divergence
Pi(psi_a f - A grad(psi_a) . G).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .assembly import element_matrices, gram
from .fem import BROKEN_SCALAR, FACE, NEDELEC, RAVIART_THOMAS, Field, build_space, element_quadrature
from .mesh import DIRICHLET, NEUMANN, Mesh, patch_of
from .patches import PatchDofs
from .polynomials import count
from .quadrature import DATA_DEGREE
from .report import EstimatorReport
from .schemes import Problem, SchemeOutput
from .solvers import CompatibilityError, solve_eqp

# degree q of the curl-free reconstruction: hat corrections in RT_{q+1},
# tilde corrections in RT_{q+2}, potentials in N_{q+2}
RECON_DEGREE = 1
PRECHECK_TOL = 1e-9


# element-level helpers ---------------------------------------------------------------------

def _chunked(fn, n: int) -> np.ndarray:
    return np.concatenate([fn(np.arange(s, min(s + fem.CHUNK, n))) for s in range(0, n, fem.CHUNK)])


def barycentric(mesh: Mesh, elems, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates (ne, nq, 4) of points x in the given tets."""
    elems = np.asarray(elems)
    x0 = mesh.vertices[mesh.tets[elems, 0]]
    ref = np.einsum("eij,eqj->eqi", np.linalg.inv(mesh.jacobians[elems]), x - x0[:, None, :])
    return np.concatenate([1.0 - ref.sum(-1, keepdims=True), ref], axis=-1)


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients (T, 4, 3) of the barycentric coordinates."""
    cache = mesh._cache
    if "bary_grad" not in cache:
        inv = np.linalg.inv(mesh.jacobians)
        cache["bary_grad"] = np.concatenate([-inv.sum(1, keepdims=True), inv], axis=1)
    return cache["bary_grad"]


def _local_vertex(mesh: Mesh, tets: np.ndarray, vertex: int) -> np.ndarray:
    return np.argmax(mesh.tets[tets] == vertex, axis=1)


def vertex_patch_faces(mesh: Mesh, vertex: int):
    """Vertex patch with its constrained faces for the curl-free problems."""
    patch = patch_of(mesh, "vertex", vertex)
    return patch, patch.constrained_faces


def flux_zero_faces(mesh: Mesh, vertex: int, patch) -> np.ndarray:
    """Patch-boundary faces carrying a zero normal flux: all of them except
    Dirichlet faces that contain the vertex."""
    bf = patch.boundary_faces
    open_ = (mesh.faces[bf] == vertex).any(1) & (mesh.face_label[bf] == DIRICHLET)
    return bf[~open_]


# diagnostics ---------------------------------------------------------------------------------

@dataclass
class LocalLog:
    """Per local problem: stage, centre, constraint rank, null-space dimension and residuals."""

    records: list = field(default_factory=list)

    def add(self, stage: str, center, res) -> None:
        self.records.append({
            "stage": stage, "center": center, "rank": res.rank, "nullspace_dim": res.nullspace_dim,
            "constraint_residual": res.constraint_residual, "stationarity_residual": res.stationarity_residual,
        })

    def max_residual(self, stage: str | None = None, key: str = "constraint_residual") -> float:
        vals = [r[key] for r in self.records if stage is None or r["stage"] == stage]
        return float(max(vals, default=0.0))


@dataclass
class Reconstruction:
    """Reconstructed fields with their per-vertex contributions and solve logs.

    ``contributions`` maps a vertex to (global dofs, values) of its local field.
    """

    phi: Field | None = None
    sigma: Field | None = None
    contributions: dict = field(default_factory=dict)
    log: LocalLog = field(default_factory=LocalLog)
    parts: dict = field(default_factory=dict)

    @property
    def field(self) -> Field:
        return self.phi if self.phi is not None else self.sigma


def reconstruction_degree(p: int) -> int:
    """q = max(p-1, 1): the degree the discrete gradient is treated as."""
    return max(p - 1, 1)


# prechecks -----------------------------------------------------------------------------------

def curl_orthogonality(G: Field, mesh: Mesh | None = None):
    """(G, curl psi_l) for every edge l, and the edges where it must vanish.

    Returns (values, relative values, mask of edges not lying on a Neumann face).
    """
    mesh = G.mesh if mesh is None else mesh
    ned1 = build_space(mesh, NEDELEC, 1)
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, G.space.degree + 1)
    loc = np.einsum("eq,eqi,eqbi->eb", w, G.eval(elems, x), ned1.eval(elems, x, "curl"))
    vals = np.zeros(ned1.ndofs)
    np.add.at(vals, ned1.elem_dofs, loc)
    # Cauchy-Schwarz scale sum_K ||G||_K ||curl psi_l||_K
    gn = np.sqrt(np.einsum("eq,eqi,eqi->e", w, G.eval(elems, x), G.eval(elems, x)))
    c = ned1.eval(elems, x, "curl")
    aloc = gn[:, None] * np.sqrt(np.einsum("eq,eqbi,eqbi->eb", w, c, c))
    scale = np.zeros(ned1.ndofs)
    np.add.at(scale, ned1.elem_dofs, aloc)
    rel = np.abs(vals) / np.maximum(scale, 1e-300)
    interior = (mesh.edge_label & NEUMANN) == 0
    return vals, np.where(scale > 0, rel, 0.0), interior


def check_curl_orthogonality(G: Field, tol: float = PRECHECK_TOL) -> float:
    """Raise CompatibilityError when G is not orthogonal to the divergence-free
    lowest-order RT fields that vanish on the Neumann boundary."""
    _, rel, interior = curl_orthogonality(G)
    worst = float(rel[interior].max(initial=0.0))
    if worst > tol:
        e = int(np.flatnonzero(interior)[np.argmax(rel[interior])])
        raise CompatibilityError(
            f"G is not orthogonal to curl of the edge function of edge {e} "
            f"(relative value {worst:.3e}); the scheme output is not admissible")
    return worst


def hat_orthogonality(problem: Problem, G: Field) -> np.ndarray:
    """(A G, grad psi_a) - (f, psi_a) for every vertex, relative to the term sizes."""
    mesh = problem.mesh
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, DATA_DEGREE)
    lam = barycentric(mesh, elems, x)
    gl = barycentric_gradients(mesh)
    AG = np.einsum("eij,eqj->eqi", problem.coefficient.A, G.eval(elems, x))
    f = np.asarray(problem.f(x), dtype=float)
    a_loc = np.einsum("eq,eqi,eji->ej", w, AG, gl)
    f_loc = np.einsum("eq,eq,eqj->ej", w, f, lam)
    r = np.zeros(mesh.n_vertices)
    s = np.zeros(mesh.n_vertices)
    np.add.at(r, mesh.tets, a_loc - f_loc)
    # Cauchy-Schwarz scale ||A G||_K ||grad psi_a||_K + ||f||_K ||psi_a||_K
    agn = np.sqrt(np.einsum("eq,eqi,eqi->e", w, AG, AG))
    fn = np.sqrt(np.einsum("eq,eq->e", w, f ** 2))
    gpn = np.linalg.norm(gl, axis=2) * np.sqrt(mesh.volumes)[:, None]
    lpn = np.sqrt(np.einsum("eq,eqj->ej", w, lam ** 2))
    np.add.at(s, mesh.tets, agn[:, None] * gpn + fn[:, None] * lpn)
    return np.where(s > 0, np.abs(r) / np.maximum(s, 1e-300), 0.0)


def check_hat_orthogonality(problem: Problem, G: Field, tol: float = PRECHECK_TOL) -> float:
    rel = hat_orthogonality(problem, G)
    mesh = problem.mesh
    free = (mesh.vertex_label & DIRICHLET) == 0
    worst = float(rel[free].max(initial=0.0))
    if worst > tol:
        a = int(np.flatnonzero(free)[np.argmax(rel[free])])
        raise CompatibilityError(
            f"Galerkin orthogonality fails at vertex {a} (relative residual {worst:.3e})")
    return worst


# curl-free reconstruction ---------------------------------------------------------------------

class CurlFreeReconstructor:
    """Element tables and local solves for the three-stage curl-free reconstruction."""

    def __init__(self, problem: Problem, G: Field, q: int = RECON_DEGREE):
        mesh = problem.mesh
        self.problem, self.mesh, self.G, self.q = problem, mesh, G, q
        coef = problem.coefficient
        self.rt_hat = build_space(mesh, RAVIART_THOMAS, q + 1)
        self.rt = build_space(mesh, RAVIART_THOMAS, q + 2)
        self.ned = build_space(mesh, NEDELEC, q + 2)
        p_hat = build_space(mesh, BROKEN_SCALAR, q)
        p_til = build_space(mesh, BROKEN_SCALAR, q + 1)
        T = mesh.n_tets
        gl = barycentric_gradients(mesh)
        gdeg = G.space.degree
        qd = gdeg + q + 5

        self.mass_hat = _chunked(lambda e: element_matrices("weightedmass", self.rt_hat, coefficient=coef, elems=e), T)
        self.div_hat = _chunked(lambda e: element_matrices("div-pairing", self.rt_hat, p_hat, elems=e), T)
        self.mass_rt = _chunked(lambda e: element_matrices("mass", self.rt, elems=e), T)
        self.div_rt = _chunked(lambda e: element_matrices("div-pairing", self.rt, p_til, elems=e), T)
        self.mass_ned = _chunked(lambda e: element_matrices("weightedmass", self.ned, coefficient=coef, elems=e), T)
        self.hat_to_rt = _chunked(lambda e: fem.rt_functionals(mesh, q + 2, e, self.rt_hat.eval), T)
        self.curl_to_rt = _chunked(
            lambda e: fem.rt_functionals(mesh, q + 2, e, lambda el, x: self.ned.eval(el, x, "curl")), T)

        def hat_tables(e):
            x, w = element_quadrature(mesh, e, qd)
            Gx = G.eval(e, x)
            phi = self.rt_hat.eval(e, x)
            target = np.cross(gl[e][:, None, :, :], Gx[:, :, None, :])  # (ne, nq, 4, 3)
            At = np.einsum("eij,eqaj->eqai", coef.A[e], target)
            rhs = gram(w, At, phi)
            mom = np.einsum("eq,eqbi->eib", w, phi)
            gmean = np.einsum("eq,eqi->ei", w, Gx)
            gabs = np.einsum("eq,eqi->e", w, np.abs(Gx))[:, None] * np.abs(gl[e]).sum(-1)
            return np.concatenate([rhs.reshape(len(e), -1), mom.reshape(len(e), -1),
                                   np.cross(gl[e], gmean[:, None, :]).reshape(len(e), -1), gabs], axis=1)

        nh = self.rt_hat.nloc
        tab = _chunked(hat_tables, T)
        self.rhs_hat = tab[:, :4 * nh].reshape(T, 4, nh)
        self.mom_hat = tab[:, 4 * nh:7 * nh].reshape(T, 3, nh)
        self.mom_rhs = tab[:, 7 * nh:7 * nh + 12].reshape(T, 4, 3)
        self.mom_size = tab[:, 7 * nh + 12:]  # (T, 4) magnitude of the moment data

        def ned_rhs(e):
            x, w = element_quadrature(mesh, e, qd)
            lam = barycentric(mesh, e, x)
            AG = np.einsum("eij,eqj->eqi", coef.A[e], G.eval(e, x))
            return gram(w, lam[..., None] * AG[:, :, None, :], self.ned.eval(e, x))

        self.rhs_ned = _chunked(ned_rhs, T)
        self.rt_face_local = np.flatnonzero(self.rt.dof_kind[self.rt.elem_dofs[0]] == FACE)
        self.log = LocalLog()
        self.hat_local: dict[int, tuple[PatchDofs, np.ndarray]] = {}

    # stage (i)
    def hat_correction(self, vertex: int):
        """Divergence-free RT_{q+1} field on the vertex patch matching grad(psi_a) x G
        in elementwise mean.  Returns (patch dofs, patch coefficient vector)."""
        mesh = self.mesh
        patch, zero = vertex_patch_faces(mesh, vertex)
        tets = patch.tets
        j = _local_vertex(mesh, tets, vertex)
        pd = PatchDofs(self.rt_hat, tets, zero)
        H = pd.matrix(self.mass_hat[tets])
        c = pd.vector(self.rhs_hat[tets, j])
        rows = pd.rows(np.concatenate([self.mom_hat[tets], self.div_hat[tets]], axis=1))
        g = np.concatenate([self.mom_rhs[tets, j], np.zeros((len(tets), self.div_hat.shape[1]))], axis=1).ravel()
        fr = pd.free
        res = solve_eqp(H[np.ix_(fr, fr)], c[fr], rows[:, fr], g, label=f"hat correction at vertex {vertex}",
                        scale=np.linalg.norm(self.mom_size[tets, j]))
        self.log.add("hat", vertex, res)
        x = np.zeros(pd.n)
        x[fr] = res.x
        self.hat_local[vertex] = (pd, x)
        return pd, x

    def all_hat_corrections(self) -> Field:
        theta = np.zeros(self.rt_hat.ndofs)
        size = np.zeros(self.rt_hat.ndofs)
        for a in range(self.mesh.n_vertices):
            pd, x = self.hat_correction(a)
            np.add.at(theta, pd.global_dofs, x)
            np.add.at(size, pd.global_dofs, np.abs(x))
        self.theta_hat = Field(self.rt_hat, theta)
        # the local corrections nearly cancel in the sum; their summed magnitudes
        # give the data size against which the tilde constraints are judged
        self.theta_size = Field(self.rt_hat, size)
        return self.theta_hat

    # stage (ii)
    def tilde_corrections(self, theta_hat: Field, elems=None, theta_size: Field | None = None) -> np.ndarray:
        """Elementwise divergence-free RT_{q+2} fields with the normal trace of
        psi_a theta_hat; returns (ne, nloc, 4), one column per element vertex.

        ``theta_size`` (nonnegative coefficients) sets the data scale for the
        consistency check; it defaults to the one recorded with the hat stage.
        """
        mesh = self.mesh
        elems = np.arange(mesh.n_tets) if elems is None else np.asarray(elems)
        qd = 2 * (self.q + 2) + 2
        if theta_size is None:
            theta_size = getattr(self, "theta_size", theta_hat)

        def data(idx):
            e = elems[idx]

            def weighted(field):
                return lambda el, x: barycentric(mesh, el, x)[..., None] * field.eval(el, x)[:, :, None, :]
            F = fem.rt_functionals(mesh, self.q + 2, e, weighted(theta_hat))
            S = fem.rt_functionals(mesh, self.q + 2, e, weighted(theta_size))
            x, w = element_quadrature(mesh, e, qd)
            c = gram(w, self.rt.eval(e, x), weighted(theta_hat)(e, x))
            return np.stack([F, c, S], axis=1)

        tab = _chunked(data, len(elems))
        F, C, S = tab[:, 0], tab[:, 1], tab[:, 2]
        nf = len(self.rt_face_local)
        nloc = self.rt.nloc
        E = np.zeros((nf, nloc))
        E[np.arange(nf), self.rt_face_local] = 1.0
        out = np.zeros((len(elems), nloc, 4))
        for i, k in enumerate(elems):
            B = np.vstack([E, self.div_rt[k]])
            g = np.vstack([F[i][self.rt_face_local], np.zeros((self.div_rt.shape[1], 4))])
            res = solve_eqp(self.mass_rt[k], C[i], B, g, label=f"tilde correction on element {k}",
                            scale=max(np.linalg.norm(F[i]), np.linalg.norm(S[i])))
            self.log.add("tilde", int(k), res)
            out[i] = res.x
        return out

    # stage (iii)
    def potential(self, vertex: int) -> tuple[PatchDofs, np.ndarray]:
        mesh = self.mesh
        patch, zero = vertex_patch_faces(mesh, vertex)
        tets = patch.tets
        j = _local_vertex(mesh, tets, vertex)
        ph, xh = self.hat_local[vertex]
        # theta^a in RT_{q+2}, elementwise
        theta_loc = np.einsum("tab,tb->ta", self.hat_to_rt[tets], xh[ph.local]) - self.theta_tilde[tets, :, j]
        pr = PatchDofs(self.rt, tets, zero)
        own_e, own_l = pr.first_owner()
        theta = theta_loc[own_e, own_l]
        pn = PatchDofs(self.ned, tets, zero)
        rows_all = self.curl_to_rt[tets][own_e, own_l]  # (n_rt, nloc_ned)
        keep = pr.free
        B = np.zeros((len(keep), pn.n))
        for r, (e, row) in enumerate(zip(own_e[keep], rows_all[keep])):
            B[r, pn.local[e]] = row
        H = pn.matrix(self.mass_ned[tets])
        c = pn.vector(self.rhs_ned[tets, j])
        fr = pn.free
        res = solve_eqp(H[np.ix_(fr, fr)], c[fr], B[:, fr], theta[keep], label=f"potential at vertex {vertex}",
                        scale=np.linalg.norm(theta_loc))
        self.log.add("potential", vertex, res)
        x = np.zeros(pn.n)
        x[fr] = res.x
        return pn, x

    def reconstruct(self) -> Reconstruction:
        theta_hat = self.all_hat_corrections()
        self.theta_tilde = self.tilde_corrections(theta_hat)
        phi = np.zeros(self.ned.ndofs)
        contributions = {}
        for a in range(self.mesh.n_vertices):
            pn, x = self.potential(a)
            np.add.at(phi, pn.global_dofs, x)
            contributions[a] = (pn.global_dofs, x)
        return Reconstruction(phi=Field(self.ned, phi), contributions=contributions, log=self.log,
                              parts={"theta_hat": theta_hat})


def _checked(G: Field, check: bool) -> None:
    if check:
        check_curl_orthogonality(G)


def hat_correction(problem: Problem, G: Field, vertex: int, q: int = RECON_DEGREE, check: bool = True):
    """Stage (i) at one vertex: (patch dofs, coefficients) of the RT_{q+1} correction."""
    _checked(G, check)
    return CurlFreeReconstructor(problem, G, q).hat_correction(vertex)


def tilde_correction(problem: Problem, G: Field, theta_hat: Field, vertex: int, q: int = RECON_DEGREE) -> dict:
    """Stage (ii) at one vertex: element -> RT_{q+2} coefficients of the correction
    matching psi_a theta_hat in normal trace."""
    rec = CurlFreeReconstructor(problem, G, q)
    tets = patch_of(problem.mesh, "vertex", vertex).tets
    j = _local_vertex(problem.mesh, tets, vertex)
    vals = rec.tilde_corrections(theta_hat, tets)
    return {int(k): vals[i, :, j[i]] for i, k in enumerate(tets)}


def curl_free_potential(problem: Problem, G: Field, q: int = RECON_DEGREE, check: bool = True) -> Reconstruction:
    """Curl-free Nedelec field phi_h with vanishing tangential trace on the
    Dirichlet boundary, built from G by vertex-patch equilibration."""
    _checked(G, check)
    return CurlFreeReconstructor(problem, G, q).reconstruct()


# flux reconstruction ------------------------------------------------------------------------

def equilibrated_flux(problem: Problem, G: Field, p: int | None = None, check: bool = True) -> Reconstruction:
    """sigma_h in RT_{p+1} with div sigma_h = Pi f (projection onto P_{p-1}),
    summed from vertex-patch minimisations of ||A^-1 w + psi_a G||_A.

    ``p`` defaults to the IPDG degree matching G, i.e. deg(G) + 1.
    """
    p = G.space.degree + 1 if p is None else p
    mesh = problem.mesh
    coef = problem.coefficient
    if check:
        check_hat_orthogonality(problem, G)
    rt = build_space(mesh, RAVIART_THOMAS, p + 1)
    pp = build_space(mesh, BROKEN_SCALAR, p)
    T = mesh.n_tets
    gl = barycentric_gradients(mesh)
    mass = _chunked(lambda e: element_matrices("weightedmass", rt, coefficient=coef, elems=e, weight="Ainv"), T)
    div = _chunked(lambda e: element_matrices("div-pairing", rt, pp, elems=e), T)
    nlow = count(p - 1)

    def tables(e):
        x, w = element_quadrature(mesh, e, DATA_DEGREE)
        lam = barycentric(mesh, e, x)
        Gx = G.eval(e, x)
        rhs = -gram(w, lam[..., None] * Gx[:, :, None, :], rt.eval(e, x))
        AgradG = np.einsum("eij,eaj,eqi->eqa", coef.A[e], gl[e], Gx)
        src = lam * np.asarray(problem.f(x), dtype=float)[..., None] - AgradG
        m = pp.eval(e, x)[:, :, :nlow]
        d = gram(w, src, m)
        size = gram(w, np.abs(lam * np.asarray(problem.f(x), dtype=float)[..., None]) + np.abs(AgradG), np.abs(m))
        return np.concatenate([rhs.reshape(len(e), -1), d.reshape(len(e), -1), size.reshape(len(e), -1)], axis=1)

    tab = _chunked(tables, T)
    rhs = tab[:, :4 * rt.nloc].reshape(T, 4, rt.nloc)
    dsrc = tab[:, 4 * rt.nloc:4 * rt.nloc + 4 * nlow].reshape(T, 4, nlow)
    dsize = tab[:, 4 * rt.nloc + 4 * nlow:].reshape(T, 4, nlow)
    log = LocalLog()
    sigma = np.zeros(rt.ndofs)
    contributions = {}
    for a in range(mesh.n_vertices):
        patch = patch_of(mesh, "vertex", a)
        tets = patch.tets
        j = _local_vertex(mesh, tets, a)
        pd = PatchDofs(rt, tets, flux_zero_faces(mesh, a, patch))
        H = pd.matrix(mass[tets])
        c = pd.vector(rhs[tets, j])
        B = pd.rows(div[tets])
        g = np.zeros((len(tets), pp.nloc))
        g[:, :nlow] = dsrc[tets, j]
        fr = pd.free
        res = solve_eqp(H[np.ix_(fr, fr)], c[fr], B[:, fr], g.ravel(), label=f"flux at vertex {a}",
                        scale=np.linalg.norm(dsize[tets, j]))
        log.add("flux", a, res)
        np.add.at(sigma, pd.global_dofs[fr], res.x)
        contributions[a] = (pd.global_dofs[fr], res.x)
    return Reconstruction(sigma=Field(rt, sigma), contributions=contributions, log=log)


# estimators ----------------------------------------------------------------------------------

def _element_norms(problem: Problem, elems, qd, fn):
    x, w = element_quadrature(problem.mesh, elems, qd)
    return np.einsum("eq,eq->e", w, fn(elems, x))


def flux_mismatch2(problem: Problem, sigma: Field, G: Field) -> np.ndarray:
    """||A^-1 sigma + G||_{A,K}^2 per element."""
    coef = problem.coefficient
    qd = 2 * max(sigma.space.degree, G.space.degree) + 2

    def fn(e, x):
        r = sigma.eval(e, x) + np.einsum("eij,eqj->eqi", coef.A[e], G.eval(e, x))
        return np.einsum("eqi,eij,eqj->eq", r, coef.Ainv[e], r)

    return _chunked(lambda e: _element_norms(problem, e, qd, fn), problem.mesh.n_tets)


def potential_mismatch2(problem: Problem, phi: Field, G: Field) -> np.ndarray:
    """||G - phi||_{A,K}^2 per element."""
    coef = problem.coefficient
    qd = 2 * max(phi.space.degree, G.space.degree) + 2

    def fn(e, x):
        r = G.eval(e, x) - phi.eval(e, x)
        return np.einsum("eqi,eij,eqj->eq", r, coef.A[e], r)

    return _chunked(lambda e: _element_norms(problem, e, qd, fn), problem.mesh.n_tets)


def flux_oscillation2(problem: Problem, p: int) -> np.ndarray:
    """(h_K/pi)^2 ||f - Pi f||_K^2 / alpha_min,K with Pi onto P_{p-1}."""
    from .est_residual import _oscillation

    mesh = problem.mesh
    return (mesh.diameters / np.pi) ** 2 * _oscillation(problem, p) / problem.coefficient.alpha_min


def estimate_equilibrated(problem: Problem, output: SchemeOutput, check: bool = True) -> EstimatorReport:
    """Guaranteed equilibrated estimator for IPDG and mixed solutions.

    Terms: "flux" = ||A^-1 sigma_h + G||_A^2 (zero for the mixed scheme, whose
    flux is already equilibrated), "curl" = ||G - phi_h||_A^2 and the
    oscillation (h_K/pi)^2 ||f - Pi f||^2 / alpha_min.  The reconstruction
    is kept in ``metadata["reconstruction"]``.
    """
    if output.scheme not in ("ipdg", "mixed"):
        raise ValueError(f"no equilibrated estimator for scheme {output.scheme!r}")
    G = output.gradient
    p = output.degree
    recon = curl_free_potential(problem, G, q=reconstruction_degree(p), check=check)
    phi = recon.phi
    if output.scheme == "ipdg":
        flux = equilibrated_flux(problem, G, p, check=check)
        sigma = flux.sigma
        flux2 = flux_mismatch2(problem, sigma, G)
        recon.log.records.extend(flux.log.records)
        recon.parts["flux_contributions"] = flux.contributions
    elif output.scheme == "mixed":
        sigma = output.primary
        flux2 = np.zeros(problem.mesh.n_tets)
    else:
        raise ValueError(f"no equilibrated estimator for scheme {output.scheme!r}")
    recon.sigma = sigma
    terms = {
        "flux": flux2,
        "curl": potential_mismatch2(problem, phi, G),
        "oscillation": flux_oscillation2(problem, p),
    }
    report = EstimatorReport("equilibrated", output.scheme, p, terms, oscillation=("oscillation",),
                             metadata={"reconstruction": recon})
    report.metadata["rigorous_bound"] = rigorous_bound(report)
    return report


def rigorous_bound(report: EstimatorReport) -> float:
    """(||flux mismatch|| + ||osc||)^2 + ||curl mismatch||^2.

    The sum of squares in ``total_with_oscillation`` drops the cross term
    2 ||flux mismatch|| ||osc||; this value keeps it.
    """
    flux = np.sqrt(report.term_total("flux"))
    osc = np.sqrt(report.osc2.sum())
    return float((flux + osc) ** 2 + report.term_total("curl"))


def mark_guaranteed(report: EstimatorReport, error2: float, rel_tol: float = 1e-6) -> bool:
    """Set and return the guaranteed-bound flag: error^2 <= sum(eta^2 + osc^2)
    up to a relative margin."""
    total = report.total_with_oscillation
    ok = bool(error2 <= total + rel_tol * max(error2, total))
    report.metadata["guaranteed"] = ok
    return ok


__all__ = ["hat_correction", "tilde_correction", "curl_free_potential", "mark_guaranteed", "reconstruction_degree", "equilibrated_flux", "estimate_equilibrated", "CurlFreeReconstructor",
           "Reconstruction", "LocalLog", "check_curl_orthogonality", "check_hat_orthogonality",
           "curl_orthogonality", "hat_orthogonality", "flux_mismatch2", "potential_mismatch2",
           "flux_oscillation2", "rigorous_bound", "barycentric", "barycentric_gradients", "RECON_DEGREE"]
