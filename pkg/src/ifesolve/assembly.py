"""Global assembly of the IFE system.

One degree of freedom per mesh face (the face average). Faces in the
near-interface set come first, then the remaining interior faces, then the
boundary faces, so the free block is a leading principal submatrix and the
near-interface block ``A^Gamma`` is its own leading block.

The bilinear form is ``a_h + b_h + s_h``: the broken energy with the true
coefficient on the approximate subdomains, the symmetric consistency terms on
interface faces, and either the lifting stabilization (factor 8) or a
penalty. The jump correction ``u_h^J`` and the Dirichlet data are carried as a
"known" column through the same local computations, which gives the
right-hand side contributions ``-A_h(u_h^J, v)`` and the boundary terms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import FactorizationFailure, SingularLifting
from .geometry import InterfaceGeometry, LevelSetProblem, analyze
from .local import ElementSpace, build_local_spaces
from .mesh import Mesh
from .quadrature import QuadratureSet, simplex_rule

log = logging.getLogger(__name__)

LIFTING_FACTOR = 8.0


@dataclass
class DofMap:
    """Face numbering. ``dof_of_face[f]`` is the global index of face ``f``."""

    dof_of_face: np.ndarray
    face_of_dof: np.ndarray
    n_near: int
    n_free: int

    @property
    def n_dofs(self) -> int:
        return self.dof_of_face.shape[0]

    @property
    def boundary_dofs(self) -> np.ndarray:
        return np.arange(self.n_free, self.n_dofs)

    @property
    def interface_near_dofs(self) -> np.ndarray:
        return np.arange(self.n_near)


def build_dof_map(mesh: Mesh, classification=None) -> DofMap:
    nf = mesh.n_faces
    boundary = np.zeros(nf, dtype=bool)
    boundary[mesh.boundary_faces] = True
    near = np.zeros(nf, dtype=bool)
    if classification is not None:
        near[classification.near_faces] = True
    near &= ~boundary
    order = np.concatenate([
        np.flatnonzero(near),
        np.flatnonzero(~near & ~boundary),
        np.flatnonzero(boundary),
    ])
    dof = np.empty(nf, dtype=np.int64)
    dof[order] = np.arange(nf)
    return DofMap(dof, order, int(near.sum()), int(nf - boundary.sum()))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def _coefficient_integrals(geo: InterfaceGeometry) -> dict:
    """``T -> (K+, K-)`` with ``K^s = int_{T^s} B^s`` on interface elements."""
    P = geo.problem
    N = geo.mesh.dim
    out = {}
    for T, cut in geo.cuts.items():
        Ks = []
        for q, Bf in ((cut.quad_plus, P.B_plus), (cut.quad_minus, P.B_minus)):
            if q.weights.size == 0:
                Ks.append(np.zeros((N, N)))
            else:
                Ks.append(np.einsum("q,qab->ab", q.weights, Bf(q.points)))
        out[T] = tuple(Ks)
    return out


def _element_B_integrals(mesh: Mesh, elements, sides, problem: LevelSetProblem, order: int) -> np.ndarray:
    """``int_T B`` for uncut elements, each on its own side."""
    rule = simplex_rule(mesh.dim, order)
    X = np.einsum("qi,eia->eqa", rule.bary, mesh.element_coords[elements])
    nq = rule.npoints
    K = np.zeros((len(elements), mesh.dim, mesh.dim))
    for side, Bf in ((1, problem.B_plus), (-1, problem.B_minus)):
        sel = np.flatnonzero(sides == side)
        if sel.size == 0:
            continue
        Bv = Bf(X[sel].reshape(-1, mesh.dim)).reshape(sel.size, nq, mesh.dim, mesh.dim)
        K[sel] = np.einsum("q,eqab->eab", rule.weights, Bv)
    return K * mesh.volumes[elements][:, None, None]


def _cr_gradients(mesh: Mesh, elements) -> np.ndarray:
    return -mesh.dim * mesh.bary_gradients[elements]


class _Coo:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, idx, block):
        idx = np.asarray(idx)
        self.rows.append(np.repeat(idx, idx.size))
        self.cols.append(np.tile(idx, idx.size))
        self.vals.append(np.asarray(block).ravel())

    def add_batch(self, idx, blocks):
        # idx (m, k), blocks (m, k, k)
        k = idx.shape[1]
        self.rows.append(np.repeat(idx, k, axis=1).ravel())
        self.cols.append(np.tile(idx, (1, k)).ravel())
        self.vals.append(blocks.ravel())

    def tocsr(self, n) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((n, n))
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        A = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
        # duplicate summation order is not guaranteed; make symmetry exact
        return ((A + A.T) * 0.5).tocsr()


def _sym(M):
    return 0.5 * (M + M.T)


# ---------------------------------------------------------------------------
# interface faces
# ---------------------------------------------------------------------------
@dataclass
class FaceData:
    """Quadrature data on one interface face.

    Columns of ``jump`` and ``avg`` are the local basis functions of ``T1``,
    those of ``T2`` (absent on boundary faces) and, last, the known function.
    """

    face: int
    elements: tuple
    dofs: np.ndarray
    weights: np.ndarray
    points: np.ndarray
    sides: np.ndarray
    jump: np.ndarray
    avg: np.ndarray
    qflux: np.ndarray  # (nq, dim Q) averaged fluxes of the lifting space
    gram: np.ndarray
    normal: np.ndarray
    diameter: float


def _lifting_space(space: ElementSpace) -> np.ndarray:
    """Orthonormal basis (rows) of the gradient pairs of the local IFE space."""
    G = np.array([np.concatenate([b.grad[0], b.grad[1]]) for b in space.basis.basis])
    N = G.shape[1] // 2
    _, s, Vt = np.linalg.svd(G)
    return Vt[:N]


def _traces(space: ElementSpace, x, sides):
    """Values and gradients at points ``x`` for basis + known, (nq, N+2)."""
    coef = np.concatenate([space.coefficients, space.known[None]], axis=0)  # (N+2, 2, N+1)
    center = space.basis.basis[0].center
    slot = np.where(sides > 0, 0, 1)
    C = coef[:, slot, :]  # (N+2, nq, N+1)
    val = C[..., 0] + np.einsum("fqa,qa->fq", C[..., 1:], x - center)
    return val.T, np.transpose(C[..., 1:], (1, 0, 2))  # (nq, N+2), (nq, N+2, N)


def interface_face_data(geo: InterfaceGeometry, spaces: dict, dofmap: DofMap, K: dict, f: int,
                        order: int = 4) -> FaceData:
    mesh, P = geo.mesh, geo.problem
    N = mesh.dim
    T1, T2 = (int(t) for t in mesh.face_elements[f])
    k1 = int(mesh.face_local_index[f, 0])
    split = geo.cuts[T1].face_split[k1]
    qp = QuadratureSet.from_simplices(split.plus, order, N)
    qm = QuadratureSet.from_simplices(split.minus, order, N)
    x = np.concatenate([qp.points, qm.points])
    w = np.concatenate([qp.weights, qm.weights])
    sides = np.concatenate([np.ones(len(qp.weights), int), -np.ones(len(qm.weights), int)])
    Bx = P.B_sided(x, sides)
    n = mesh.face_normals[f]
    interior = T2 >= 0
    c = 0.5 if interior else 1.0
    elems = (T1, T2) if interior else (T1,)
    nb = N + 1
    ncols = nb * len(elems) + 1
    nq = x.shape[0]
    jump = np.zeros((nq, ncols))
    avg = np.zeros((nq, ncols))
    dofs = []
    qblocks, gblocks = [], []
    for e, T in enumerate(elems):
        sgn = 1.0 if e == 0 else -1.0
        sp_ = spaces[T]
        val, grad = _traces(sp_, x, sides)
        flux = np.einsum("qab,qfb,a->qf", Bx, grad, n)
        jump[:, e * nb:(e + 1) * nb] = sgn * val[:, :nb]
        avg[:, e * nb:(e + 1) * nb] = c * flux[:, :nb]
        jump[:, -1] += sgn * val[:, nb]
        avg[:, -1] += c * flux[:, nb]
        dofs.append(dofmap.dof_of_face[mesh.element_faces[T]])
        Q = _lifting_space(sp_)
        Kp, Km = K[T]
        gblocks.append(Q[:, :N] @ Kp @ Q[:, :N].T + Q[:, N:] @ Km @ Q[:, N:].T)
        qs = np.where((sides > 0)[:, None, None], Q[None, :, :N], Q[None, :, N:])  # (nq, N, N)
        qblocks.append(c * np.einsum("qab,qfb,a->qf", Bx, qs, n))
    if not interior:
        jump[:, -1] -= P.g_boundary(x)
    gram = sp.block_diag(gblocks).toarray()
    qflux = np.concatenate(qblocks, axis=1)
    return FaceData(f, elems, np.concatenate(dofs), w, x, sides, jump, avg, qflux, gram, n,
                    float(mesh.face_diameters[f]))


def lifting_solve(fd: FaceData, jump_values: np.ndarray) -> np.ndarray:
    """Coefficients of ``r_F(v)`` in the lifting basis for jump data sampled at
    the face quadrature points (columns of ``jump_values``)."""
    R = fd.qflux.T @ (fd.weights[:, None] * np.atleast_2d(jump_values.T).T)
    ev = np.linalg.eigvalsh(fd.gram)
    if ev[0] <= 1e-13 * ev[-1]:
        raise SingularLifting(f"face {fd.face}: lifting Gram matrix is singular (eigenvalues {ev})")
    return np.linalg.solve(fd.gram, R)


def face_blocks(fd: FaceData, stab: str = "lifting", eta: float = 1.0) -> tuple:
    """Local ``b_h`` and ``s_h`` over all columns (basis and known)."""
    WJ = fd.weights[:, None] * fd.jump
    b = -(fd.avg.T @ WJ + WJ.T @ fd.avg)
    if stab == "lifting":
        R = fd.qflux.T @ WJ
        X = lifting_solve(fd, fd.jump)
        s = LIFTING_FACTOR * (R.T @ X)
    elif stab == "penalty":
        s = (eta / fd.diameter) * (fd.jump.T @ WJ)
    else:
        raise ValueError(f"unknown stabilization {stab!r}")
    return _sym(b), _sym(s)


# ---------------------------------------------------------------------------
# the system
# ---------------------------------------------------------------------------
@dataclass
class LinearSystem:
    """Assembled IFE system restricted to the free dofs."""

    A: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    boundary_values: np.ndarray
    parts: dict  # "a", "b", "s": free-block matrices of each form
    geometry: InterfaceGeometry
    spaces: dict
    A_std: sp.csr_matrix | None = None
    info: dict = field(default_factory=dict)

    def full_vector(self, u_free: np.ndarray) -> np.ndarray:
        u = np.empty(self.dofmap.n_dofs)
        u[: self.dofmap.n_free] = u_free
        u[self.dofmap.n_free:] = self.boundary_values
        return u


def boundary_face_means(geo: InterfaceGeometry, dofmap: DofMap, order: int = 4) -> np.ndarray:
    """Face averages of the boundary data, in boundary-dof order."""
    mesh, P = geo.mesh, geo.problem
    faces = dofmap.face_of_dof[dofmap.n_free:]
    out = np.zeros(len(faces))
    if len(faces) == 0:
        return out
    rule = simplex_rule(mesh.dim - 1, order)
    X = np.einsum("qi,fia->fqa", rule.bary, mesh.face_coords[faces])
    g = P.g_boundary(X.reshape(-1, mesh.dim)).reshape(len(faces), -1)
    out[:] = g @ rule.weights
    cut = np.zeros(mesh.n_faces, dtype=bool)
    cut[geo.classification.interface_faces] = True
    for r in np.flatnonzero(cut[faces]):
        f = faces[r]
        T = int(mesh.face_elements[f, 0])
        split = geo.cuts[T].chord_faces[int(mesh.face_local_index[f, 0])]
        tot = 0.0
        for pieces in (split.plus, split.minus):
            q = QuadratureSet.from_simplices(pieces, order, mesh.dim)
            if q.weights.size:
                tot += q.integrate(P.g_boundary(q.points))
        out[r] = tot / mesh.face_measures[f]
    return out


def assemble_system(mesh: Mesh, problem: LevelSetProblem, geometry: InterfaceGeometry | None = None,
                    spaces: dict | None = None, stab: str = "lifting", eta: float | None = None,
                    mu: float = 0.5, order: int = 2, rhs_order: int = 4, face_order: int = 4,
                    with_std: bool = True) -> LinearSystem:
    """Assemble ``A``, the right-hand side and (optionally) ``A^std``."""
    geo = geometry if geometry is not None else analyze(mesh, problem, mu=mu, order=max(order, rhs_order))
    if spaces is None:
        spaces = build_local_spaces(geo, problem)
    cls = geo.classification
    dm = build_dof_map(mesh, cls)
    n = dm.n_dofs
    N = mesh.dim
    if eta is None:
        eta = default_eta(problem, mesh)
    F = np.zeros(n)
    a_coo, b_coo, s_coo, std_coo = _Coo(), _Coo(), _Coo(), _Coo()

    # uncut elements
    non = cls.noninterface_elements
    sides = cls.element_side[non]
    Kn = _element_B_integrals(mesh, non, sides, problem, order)
    Gn = _cr_gradients(mesh, non)
    blocks = np.einsum("eka,eab,elb->ekl", Gn, Kn, Gn)
    blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
    idx = dm.dof_of_face[mesh.element_faces[non]]
    a_coo.add_batch(idx, blocks)
    std_coo.add_batch(idx, blocks)
    rule = simplex_rule(N, rhs_order)
    X = np.einsum("qi,eia->eqa", rule.bary, mesh.element_coords[non])
    fx = np.zeros(X.shape[:2])
    for side, ff in ((1, problem.f_plus), (-1, problem.f_minus)):
        sel = np.flatnonzero(sides == side)
        if sel.size:
            fx[sel] = ff(X[sel].reshape(-1, N)).reshape(sel.size, -1)
    lam = 1.0 - N * rule.bary  # (nq, N+1)
    Fe = np.einsum("q,eq,qk->ek", rule.weights, fx, lam) * mesh.volumes[non][:, None]
    np.add.at(F, idx, Fe)

    # cut elements
    K = _coefficient_integrals(geo)
    known_a = np.zeros(n)
    for T, space in spaces.items():
        cut = space.cut
        Kp, Km = K[T]
        coef = np.concatenate([space.coefficients, space.known[None]], axis=0)  # (N+2, 2, N+1)
        Gp, Gm = coef[:, 0, 1:], coef[:, 1, 1:]
        loc = _sym(Gp @ Kp @ Gp.T + Gm @ Km @ Gm.T)
        dofs = dm.dof_of_face[mesh.element_faces[T]]
        a_coo.add(dofs, loc[: N + 1, : N + 1])
        known_a[dofs] += loc[: N + 1, N + 1]
        g = space.basis.cr_basis
        Gc = np.array([lam_.grad[0] for lam_ in g])
        std_coo.add(dofs, _sym(Gc @ (Kp + Km) @ Gc.T))
        # source and interface flux data
        for s, q, ff in ((1, cut.quad_plus, problem.f_plus), (-1, cut.quad_minus, problem.f_minus)):
            if q.weights.size == 0:
                continue
            vals, _ = _traces(space, q.points, np.full(len(q.weights), s))
            F[dofs] += vals[:, : N + 1].T @ (q.weights * ff(q.points))
        qi = cut.quad_interface
        if qi.weights.size:
            vp, _ = _traces(space, qi.points, np.ones(len(qi.weights), int))
            vm, _ = _traces(space, qi.points, -np.ones(len(qi.weights), int))
            F[dofs] -= 0.5 * (vp + vm)[:, : N + 1].T @ (qi.weights * problem.g_N(qi.points))

    # interface faces
    known_bs = np.zeros(n)
    n_if = 0
    for f in cls.interface_faces:
        fd = interface_face_data(geo, spaces, dm, K, int(f), face_order)
        b, s = face_blocks(fd, stab, eta)
        m = len(fd.dofs)
        b_coo.add(fd.dofs, b[:m, :m])
        s_coo.add(fd.dofs, s[:m, :m])
        np.add.at(known_bs, fd.dofs, b[:m, m] + s[:m, m])
        n_if += 1
    F -= known_a + known_bs

    Aa, Ab, As = a_coo.tocsr(n), b_coo.tocsr(n), s_coo.tocsr(n)
    Afull = (Aa + Ab + As).tocsr()
    ub = boundary_face_means(geo, dm)
    nfree = dm.n_free
    rhs = F[:nfree] - Afull[:nfree, nfree:] @ ub
    parts = {k: M[:nfree, :nfree].tocsr() for k, M in (("a", Aa), ("b", Ab), ("s", As))}
    A = Afull[:nfree, :nfree].tocsr()
    A_std = std_coo.tocsr(n)[:nfree, :nfree].tocsr() if with_std else None
    info = dict(n_interface_elements=len(spaces), n_interface_faces=n_if, eta=eta, stab=stab)
    return LinearSystem(A, rhs, dm, ub, parts, geo, spaces, A_std, info)


def assemble_stiffness(mesh: Mesh, problem: LevelSetProblem, stab: str = "lifting", eta: float | None = None,
                       geometry: InterfaceGeometry | None = None, spaces: dict | None = None) -> sp.csr_matrix:
    """IFE stiffness matrix on the free dofs (see :func:`assemble_system`)."""
    return assemble_system(mesh, problem, geometry, spaces, stab=stab, eta=eta, with_std=False).A


def assemble_rhs(mesh: Mesh, problem: LevelSetProblem, stab: str = "lifting", eta: float | None = None,
                 geometry: InterfaceGeometry | None = None, spaces: dict | None = None) -> np.ndarray:
    """Right-hand side with the jump correction and boundary data moved over (see :func:`assemble_system`)."""
    return assemble_system(mesh, problem, geometry, spaces, stab=stab, eta=eta, with_std=False).rhs


def default_eta(problem: LevelSetProblem, mesh: Mesh) -> float:
    """``10 * max(beta_M^+, beta_M^-)`` sampled at the mesh vertices."""
    x = mesh.vertices
    bp = np.linalg.eigvalsh(problem.B_plus(x))[:, -1].max()
    bm = np.linalg.eigvalsh(problem.B_minus(x))[:, -1].max()
    return float(10.0 * max(bp, bm))


def assemble_std_stiffness(mesh: Mesh, problem: LevelSetProblem, geometry: InterfaceGeometry | None = None,
                           dofmap: DofMap | None = None, order: int = 2) -> tuple:
    """Crouzeix-Raviart stiffness with the discontinuous coefficient.

    Returns ``(A_std_free, dofmap, geometry)``. Only the chord split of the cut
    elements is needed, so frames are not built when ``geometry`` is absent.
    """
    geo = geometry if geometry is not None else analyze(mesh, problem, order=order, frames=False)
    cls = geo.classification
    dm = dofmap if dofmap is not None else build_dof_map(mesh, cls)
    n = dm.n_dofs
    coo = _Coo()
    non = cls.noninterface_elements
    Kn = _element_B_integrals(mesh, non, cls.element_side[non], problem, order)
    Gn = _cr_gradients(mesh, non)
    blocks = np.einsum("eka,eab,elb->ekl", Gn, Kn, Gn)
    coo.add_batch(dm.dof_of_face[mesh.element_faces[non]], 0.5 * (blocks + blocks.transpose(0, 2, 1)))
    ie = cls.interface_elements
    if ie.size:
        K = _coefficient_integrals(geo)
        Kc = np.array([K[int(T)][0] + K[int(T)][1] for T in ie])
        Gc = _cr_gradients(mesh, ie)
        blocks = np.einsum("eka,eab,elb->ekl", Gc, Kc, Gc)
        coo.add_batch(dm.dof_of_face[mesh.element_faces[ie]], 0.5 * (blocks + blocks.transpose(0, 2, 1)))
    A = coo.tocsr(n)[: dm.n_free, : dm.n_free].tocsr()
    return A, dm, geo


@dataclass
class InterfaceBlock:
    """Factorized leading block ``A^Gamma``."""

    size: int
    lu: object = None

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self.size == 0:
            return np.zeros(0)
        return self.lu.solve(r)


def extract_interface_block(A: sp.spmatrix, n_near) -> InterfaceBlock:
    """Factorize the leading near-interface block; ``n_near`` is a size or a DofMap."""
    if isinstance(n_near, DofMap):
        n_near = n_near.n_near
    if n_near == 0:
        return InterfaceBlock(0)
    AG = sp.csc_matrix(A[:n_near, :n_near])
    try:
        lu = splu(AG, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise FactorizationFailure(f"interface block of size {n_near} could not be factorized: {exc}") from exc
    d = lu.U.diagonal()
    if np.any(d <= 0):
        raise FactorizationFailure(f"interface block of size {n_near} is not positive definite")
    return InterfaceBlock(n_near, lu)


def export_matrix_market(path, A: sp.spmatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, symmetry="symmetric")
