"""Iterative solvers: interface-corrected smoother, preconditioner, multigrid and PCG."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from pyamg.relaxation.relaxation import gauss_seidel
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, splu

from .assembly import DofMap, InterfaceBlock, assemble_std_stiffness, extract_interface_block
from .errors import FactorizationFailure, InnerSolveStagnation, NoConvergence
from .geometry import LevelSetProblem
from .mesh import Mesh

log = logging.getLogger(__name__)

COARSE_MAX = 2000


# ---------------------------------------------------------------------------
# smoother
# ---------------------------------------------------------------------------

class SmootherR:
    """One Gauss-Seidel sweep followed by an exact solve on the near-interface block.

    Parameters
    ----------
    A : sparse matrix
        SPD matrix whose leading ``n_near`` unknowns are the near-interface dofs.
    block : InterfaceBlock, optional
        Factorization of the leading block. Computed when omitted.
    n_near : int
        Size of the leading block, used when ``block`` is omitted.
    """

    def __init__(self, A, block: InterfaceBlock | None = None, n_near: int = 0):
        self.A = sp.csr_matrix(A)
        self.block = block if block is not None else extract_interface_block(self.A, n_near)

    @property
    def n_near(self) -> int:
        return self.block.size

    def _correct(self, v, g):
        m = self.block.size
        if m:
            r = g[:m] - self.A[:m] @ v
            v[:m] += self.block.solve(r)
        return v

    def apply(self, g: np.ndarray) -> np.ndarray:
        """``R g``: forward sweep from zero, then the block correction."""
        g = np.asarray(g, dtype=float)
        v = np.zeros_like(g)
        gauss_seidel(self.A, v, g, iterations=1, sweep="forward")
        return self._correct(v, g)

    def apply_T(self, g: np.ndarray) -> np.ndarray:
        """``R^T g``: block correction from zero, then a backward sweep."""
        g = np.asarray(g, dtype=float)
        v = self._correct(np.zeros_like(g), g)
        gauss_seidel(self.A, v, g, iterations=1, sweep="backward")
        return v

    def smooth(self, x, b, steps=1, transpose=False):
        """Apply ``x <- x + R (b - A x)`` (or with ``R^T``) ``steps`` times in place."""
        op = self.apply_T if transpose else self.apply
        for _ in range(steps):
            x += op(b - self.A @ x)
        return x


def apply_smoother_R(R: SmootherR, g: np.ndarray) -> np.ndarray:
    return R.apply(g)


# ---------------------------------------------------------------------------
# multigrid for the standard stiffness matrix
# ---------------------------------------------------------------------------

def cr_prolongation(coarse: Mesh, fine: Mesh) -> sp.csr_matrix:
    """Face-to-face prolongation of Crouzeix-Raviart functions.

    The coarse function is evaluated at each fine face centroid and averaged
    over the coarse elements containing it. Rows and columns use face numbers.
    """
    if fine.parent_elements is None:
        raise ValueError("fine mesh carries no parent map")
    N = fine.dim
    parent = fine.parent_elements
    fe = fine.face_elements
    cen = fine.face_centroids
    rows, cols, vals = [], [], []
    both = fe[:, 1] >= 0
    owners = [(parent[fe[:, 0]], np.ones(fine.n_faces, dtype=bool))]
    owners.append((np.where(both, parent[np.maximum(fe[:, 1], 0)], -1), both))
    diff = both & (owners[1][0] != owners[0][0])
    weight = np.where(diff, 0.5, 1.0)
    G = coarse.bary_gradients
    ccen = coarse.element_coords.mean(axis=1)
    for k, (P, mask) in enumerate(owners):
        if k == 1:
            mask = diff
        f = np.flatnonzero(mask)
        Pm = P[f]
        b = 1.0 / (N + 1) + np.einsum("fka,fa->fk", G[Pm], cen[f] - ccen[Pm])
        lam = 1.0 - N * b
        rows.append(np.repeat(f, N + 1))
        cols.append(coarse.element_faces[Pm].ravel())
        vals.append((lam * weight[f, None]).ravel())
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(fine.n_faces, coarse.n_faces)).tocsr()
    P.sum_duplicates()
    return P


@dataclass
class MGLevel:
    mesh: Mesh
    dofmap: DofMap
    A: sp.csr_matrix
    smoother: SmootherR | None = None
    P: sp.csr_matrix | None = None  # from the next coarser level, free dofs only


@dataclass
class Multigrid:
    """Geometric V-cycle for the standard stiffness matrix.

    Level 0 is the coarsest and is solved directly. Each finer level uses
    ``nu`` pre-smoothing steps with ``R`` and ``nu`` post-smoothing steps with
    ``R^T``, so one cycle is a symmetric operator.
    """

    levels: list
    nu: int = 5
    coarse_lu: object = None

    def __post_init__(self):
        A0 = sp.csc_matrix(self.levels[0].A)
        try:
            self.coarse_lu = splu(A0)
        except RuntimeError as exc:
            raise FactorizationFailure(f"coarse matrix could not be factorized: {exc}") from exc

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def is_direct(self) -> bool:
        return self.n_levels == 1

    def vcycle(self, b: np.ndarray, level: int | None = None) -> np.ndarray:
        l = self.n_levels - 1 if level is None else level
        if l == 0:
            return self.coarse_lu.solve(np.asarray(b, dtype=float))
        lev = self.levels[l]
        x = np.zeros_like(b, dtype=float)
        lev.smoother.smooth(x, b, self.nu)
        r = b - lev.A @ x
        x += lev.P @ self.vcycle(lev.P.T @ r, l - 1)
        lev.smoother.smooth(x, b, self.nu, transpose=True)
        return x


def vcycle_mg(mg: Multigrid, b: np.ndarray) -> np.ndarray:
    return mg.vcycle(b)


def _free_prolongation(P_faces, coarse_dm: DofMap, fine_dm: DofMap) -> sp.csr_matrix:
    rows = fine_dm.face_of_dof[: fine_dm.n_free]
    cols = coarse_dm.face_of_dof[: coarse_dm.n_free]
    return P_faces[rows][:, cols].tocsr()


def build_multigrid(meshes, problem: LevelSetProblem, finest: tuple | None = None, nu: int = 5,
                    coarse_max: int = COARSE_MAX, order: int = 2) -> Multigrid:
    """Build the V-cycle hierarchy on nested meshes (coarse to fine).

    Levels coarser than the last one with at most ``coarse_max`` free dofs are
    dropped. ``finest`` optionally supplies ``(A_std, dofmap)`` for the finest
    mesh so that its ordering matches the IFE system.
    """
    meshes = list(meshes)
    start = 0
    for i, m in enumerate(meshes):
        n_free = m.n_faces - int(np.count_nonzero(m.boundary_faces))
        if n_free <= coarse_max:
            start = i
    meshes = meshes[start:]
    levels = []
    for i, m in enumerate(meshes):
        if i == len(meshes) - 1 and finest is not None:
            A, dm = finest
            A = sp.csr_matrix(A)
        else:
            A, dm, _ = assemble_std_stiffness(m, problem, order=order)
        lev = MGLevel(m, dm, A)
        if i > 0:
            lev.smoother = SmootherR(A, n_near=dm.n_near)
            Pf = cr_prolongation(meshes[i - 1], m)
            lev.P = _free_prolongation(Pf, levels[-1].dofmap, dm)
        levels.append(lev)
    return Multigrid(levels, nu=nu)


# ---------------------------------------------------------------------------
# PCG
# ---------------------------------------------------------------------------

@dataclass
class PcgReport:
    """Outcome of a PCG run.

    ``iterations`` is the outer count. ``inner_max`` is the largest inner
    iteration count seen by the preconditioner, or None when the inner
    solve was direct.
    """

    iterations: int = 0
    converged: bool = False
    residuals: list = field(default_factory=list)
    b_norms: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    inner_max: int | None = None
    inner_counts: list = field(default_factory=list)

    @property
    def iter1(self) -> int:
        return self.iterations

    @property
    def iter2(self):
        return self.inner_max


def pcg(A, b: np.ndarray, M=None, tol: float = 1e-8, maxiter: int = 500, x0=None,
        report: PcgReport | None = None, raise_on_fail: bool = True, monotone_check: bool = True):
    """Preconditioned conjugate gradients.

    Stops when ``||r|| <= tol * ||b||``. ``M`` is a callable applying the
    preconditioner (identity when None). The energy ``x.A x / 2 - b.x`` is
    checked to be non-increasing.

    Returns
    -------
    x : ndarray
    report : PcgReport
    """
    b = np.asarray(b, dtype=float)
    rep = report if report is not None else PcgReport()
    prec = M if M is not None else (lambda r: r.copy())
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    rnorm = np.linalg.norm(r)
    rep.residuals.append(rnorm)
    if bnorm == 0.0 or rnorm <= tol * bnorm:
        rep.converged = True
        return x, rep
    z = prec(r)
    p = z.copy()
    rz = float(r @ z)
    rep.b_norms.append(np.sqrt(max(rz, 0.0)))
    energy = -0.5 * float(x @ (b + r))
    rep.energies.append(energy)
    for k in range(1, maxiter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise FactorizationFailure("operator is not positive definite along a search direction")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        rep.residuals.append(rnorm)
        rep.iterations = k
        e_new = -0.5 * float(x @ (b + r))
        if monotone_check and e_new > energy + 1e-10 * abs(energy) + 1e-14:
            raise AssertionError(f"PCG energy increased at iteration {k}: {energy:.6e} -> {e_new:.6e}")
        energy = e_new
        rep.energies.append(energy)
        log.debug("pcg it %d residual %.3e", k, rnorm)
        if rnorm <= tol * bnorm:
            rep.converged = True
            return x, rep
        z = prec(r)
        rz_new = float(r @ z)
        rep.b_norms.append(np.sqrt(max(rz_new, 0.0)))
        p = z + (rz_new / rz) * p
        rz = rz_new
    if raise_on_fail:
        raise NoConvergence(f"PCG did not converge in {maxiter} iterations (residual {rnorm:.3e})", x, rep)
    return x, rep


# ---------------------------------------------------------------------------
# preconditioner
# ---------------------------------------------------------------------------

class InnerSolver:
    """Solve ``A_std y = g`` by PCG with a V-cycle, or directly on a single level."""

    def __init__(self, mg: Multigrid, tol: float = 1e-8, maxiter: int = 200):
        self.mg = mg
        self.A = mg.levels[-1].A
        self.tol = tol
        self.maxiter = maxiter
        self.counts = []

    @property
    def is_direct(self) -> bool:
        return self.mg.is_direct

    def __call__(self, g: np.ndarray) -> np.ndarray:
        if self.is_direct:
            return self.mg.vcycle(g)
        try:
            y, rep = pcg(self.A, g, self.mg.vcycle, tol=self.tol, maxiter=self.maxiter)
        except NoConvergence as exc:
            raise InnerSolveStagnation(
                f"inner solve hit {self.maxiter} iterations (residual {exc.report.residuals[-1]:.3e})") from exc
        self.counts.append(rep.iterations)
        return y


class PreconditionerB:
    """Preconditioner built from ``n_s`` smoothing steps and an inner solve.

    ``B g`` applies ``n_s`` steps with ``R``, one correction with the inner
    solver for the standard stiffness matrix, then ``n_s`` steps with ``R^T``.
    """

    def __init__(self, A, smoother: SmootherR, inner, n_s: int = 1):
        self.A = sp.csr_matrix(A)
        self.R = smoother
        self.inner = inner
        self.n_s = n_s

    def __call__(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        v = np.zeros_like(g)
        self.R.smooth(v, g, self.n_s)
        v += self.inner(g - self.A @ v)
        self.R.smooth(v, g, self.n_s, transpose=True)
        return v

    def as_linear_operator(self):
        from scipy.sparse.linalg import LinearOperator
        n = self.A.shape[0]
        return LinearOperator((n, n), matvec=self, dtype=float)


def apply_preconditioner_B(B: PreconditionerB, g: np.ndarray) -> np.ndarray:
    return B(g)


def solve_pcg(system, meshes, problem: LevelSetProblem, n_s: int = 1, tol: float = 1e-8,
              inner_tol: float = 1e-8, maxiter: int = 500, nu: int = 5, coarse_max: int = COARSE_MAX):
    """Solve an assembled IFE system with PCG and the preconditioner B.

    ``meshes`` are the nested meshes ending with the mesh of ``system``.

    Returns
    -------
    u_free : ndarray
    report : PcgReport
    """
    dm = system.dofmap
    mg = build_multigrid(meshes, problem, finest=(system.A_std, dm), nu=nu, coarse_max=coarse_max)
    inner = InnerSolver(mg, tol=inner_tol)
    R = SmootherR(system.A, n_near=dm.n_near)
    B = PreconditionerB(system.A, R, inner, n_s)
    u, rep = pcg(system.A, system.rhs, B, tol=tol, maxiter=maxiter)
    rep.inner_counts = list(inner.counts)
    rep.inner_max = None if inner.is_direct else (max(inner.counts) if inner.counts else 0)
    return u, rep


# ---------------------------------------------------------------------------
# condition numbers
# ---------------------------------------------------------------------------

def estimate_cond2(A, tol: float = 1e-6) -> tuple:
    """Spectral condition number of an SPD matrix by Lanczos (ARPACK).

    Returns ``(cond, lam_min, lam_max, converged)``.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if n <= 300:
        w = np.linalg.eigvalsh(A.toarray())
        return w[-1] / w[0], w[0], w[-1], True
    converged = True
    try:
        lmax = eigsh(A, k=1, which="LA", tol=tol, return_eigenvectors=False)[0]
    except ArpackNoConvergence as exc:
        converged = False
        lmax = float(np.max(exc.eigenvalues)) if len(exc.eigenvalues) else np.nan
    try:
        lmin = eigsh(A, k=1, sigma=0.0, which="LM", tol=tol, return_eigenvectors=False)[0]
    except ArpackNoConvergence as exc:
        converged = False
        lmin = float(np.min(exc.eigenvalues)) if len(exc.eigenvalues) else np.nan
    return lmax / lmin, lmin, lmax, converged
