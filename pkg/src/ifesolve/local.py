"""Local IFE spaces on interface elements.

Affine functions are stored by their value at the element centroid and their
gradient. A piecewise-affine pair carries one such function per side of the
element (slot 0 = plus, slot 1 = minus).

Every interface element gets 2(N+1) functionals: the N+1 jump functionals
``J_i`` (value jumps at the anchor points, then the flux jump across the frame
plane) and the N+1 face-average functionals ``M_F``. The IFE basis and the
jump-correction pieces are the duals of these functionals, constructed in
closed form by :func:`build_ife_basis` and :func:`build_correction`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import CutElementData, InterfaceFrame, LevelSetProblem
from .quadrature import QuadratureSet

log = logging.getLogger(__name__)


@dataclass
class AffinePair:
    """Pair of affine functions ``(plus, minus)`` around ``center``.

    ``value[s]`` is the value of side ``s`` at ``center`` and ``grad[s]`` its
    gradient.
    """

    center: np.ndarray
    value: np.ndarray  # (2,)
    grad: np.ndarray  # (2, N)

    @classmethod
    def zero(cls, center) -> "AffinePair":
        center = np.asarray(center, dtype=float)
        return cls(center, np.zeros(2), np.zeros((2, center.shape[0])))

    @classmethod
    def single(cls, center, value, grad) -> "AffinePair":
        """The same affine function on both sides."""
        g = np.asarray(grad, dtype=float)
        return cls(np.asarray(center, dtype=float), np.array([value, value], dtype=float), np.array([g, g]))

    @classmethod
    def from_vector(cls, center, vec) -> "AffinePair":
        vec = np.asarray(vec, dtype=float)
        n = vec.shape[0] // 2
        return cls(np.asarray(center, dtype=float), np.array([vec[0], vec[n]]), np.array([vec[1:n], vec[n + 1:]]))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def as_vector(self) -> np.ndarray:
        """Coefficients ``(c+, g+, c-, g-)``."""
        return np.concatenate([[self.value[0]], self.grad[0], [self.value[1]], self.grad[1]])

    def __call__(self, x, side: int) -> np.ndarray:
        s = 0 if side > 0 else 1
        x = np.atleast_2d(x)
        return self.value[s] + (x - self.center) @ self.grad[s]

    def evaluate_sided(self, x, sides) -> np.ndarray:
        x = np.atleast_2d(x)
        s = np.where(np.asarray(sides) > 0, 0, 1)
        return self.value[s] + np.einsum("na,na->n", x - self.center, self.grad[s])

    def __add__(self, other: "AffinePair") -> "AffinePair":
        return AffinePair(self.center, self.value + other.value, self.grad + other.grad)

    def __sub__(self, other: "AffinePair") -> "AffinePair":
        return AffinePair(self.center, self.value - other.value, self.grad - other.grad)

    def __mul__(self, a: float) -> "AffinePair":
        return AffinePair(self.center, a * self.value, a * self.grad)

    __rmul__ = __mul__


def cr_basis(vertices: np.ndarray) -> tuple:
    """Crouzeix-Raviart basis on a simplex.

    Returns ``(values, grads)``: value at the centroid (N+1,) and gradients
    (N+1, N) of ``lambda_k = 1 - N b_k`` with ``b_k`` the barycentric
    coordinate of vertex k, so that ``lambda_k`` has mean one on face k and
    zero on the others.
    """
    P = np.asarray(vertices, dtype=float)
    N = P.shape[1]
    E = (P[1:] - P[0]).T
    Ginv = np.linalg.inv(E)  # rows: gradients of b_1..b_N
    gb = np.vstack([-Ginv.sum(axis=0), Ginv])
    return np.full(N + 1, 1.0 / (N + 1)), -N * gb


def _cr_pairs(cut: CutElementData) -> list:
    c = cut.vertices.mean(axis=0)
    vals, grads = cr_basis(cut.vertices)
    return [AffinePair.single(c, vals[k], grads[k]) for k in range(len(vals))]


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------
def functional_J(frame: InterfaceFrame, pair: AffinePair, i: int) -> float:
    N = frame.dim
    if i < N:
        d = frame.x_bar_pts[i] - pair.center
        return float((pair.value[0] - pair.value[1]) + (pair.grad[0] - pair.grad[1]) @ d)
    n = frame.n_bar
    return float(n @ frame.B_T_plus @ pair.grad[0] - n @ frame.B_T_minus @ pair.grad[1])


def functional_M(cut: CutElementData, F: int, pair: AffinePair) -> float:
    tot = 0.0
    for s in range(2):
        m = cut.face_piece_measure[F, s]
        mom = cut.face_piece_moment[F, s]
        tot += m * pair.value[s] + pair.grad[s] @ (mom - m * pair.center)
    return float(tot / cut.face_measure[F])


def functional_matrix(frame: InterfaceFrame, cut: CutElementData, center=None) -> np.ndarray:
    """Rows ``J_0..J_N, M_0..M_N`` acting on ``AffinePair.as_vector()``."""
    N = frame.dim
    xc = cut.vertices.mean(axis=0) if center is None else center
    n1 = N + 1
    L = np.zeros((2 * n1, 2 * n1))
    for i in range(N):
        d = frame.x_bar_pts[i] - xc
        L[i, 0], L[i, 1:n1] = 1.0, d
        L[i, n1], L[i, n1 + 1:] = -1.0, -d
    L[N, 1:n1] = frame.n_bar @ frame.B_T_plus
    L[N, n1 + 1:] = -(frame.n_bar @ frame.B_T_minus)
    for k in range(n1):
        for s in range(2):
            m = cut.face_piece_measure[k, s]
            off = s * n1
            L[n1 + k, off] = m
            L[n1 + k, off + 1:off + n1] = cut.face_piece_moment[k, s] - m * xc
        L[n1 + k] /= cut.face_measure[k]
    return L


def compute_cT(frame: InterfaceFrame, cut: CutElementData) -> float:
    n = frame.n_bar
    r = cut.vol_plus / cut.volume
    cT = r * ((n @ frame.B_T_minus @ n) / (n @ frame.B_T_plus @ n) - 1.0) + 1.0
    return float(cT)


def cT_lower_bound(frame: InterfaceFrame) -> float:
    """``min(1, beta_min(B-) / beta_max(B+))`` for the frozen coefficients."""
    bm = np.linalg.eigvalsh(frame.B_T_minus)[0]
    bp = np.linalg.eigvalsh(frame.B_T_plus)[-1]
    return float(min(1.0, bm / bp))


# ---------------------------------------------------------------------------
# basis
# ---------------------------------------------------------------------------
@dataclass
class LocalIFEBasis:
    element: int
    basis: list  # N+1 AffinePairs, by local face
    phi_TJ: AffinePair
    alpha: np.ndarray  # (N+1,)
    c_T: float
    cr_basis: list  # N+1 AffinePairs (same function on both sides)
    pi_chi_d: AffinePair  # Pi_T(chi_+ d_L), single valued

    @property
    def coefficients(self) -> np.ndarray:
        """(N+1, 2, N+1): per basis function and side, ``[value, grad...]``."""
        return np.array([[np.concatenate([[b.value[s]], b.grad[s]]) for s in range(2)] for b in self.basis])


def _pi_chi_d(frame: InterfaceFrame, cut: CutElementData, cr: list) -> AffinePair:
    n = frame.n_bar
    a = np.array([
        n @ (cut.face_piece_moment[k, 0] - cut.face_piece_measure[k, 0] * frame.x0_bar) / cut.face_measure[k]
        for k in range(len(cr))
    ])
    out = AffinePair.zero(cr[0].center)
    for k, lam in enumerate(cr):
        out = out + a[k] * lam
    return out


def build_ife_basis(T: int, frame: InterfaceFrame, cut: CutElementData) -> LocalIFEBasis:
    """Closed-form IFE basis ``phi_F = lambda_F + alpha_F phi_TJ``."""
    cr = _cr_pairs(cut)
    xc = cr[0].center
    n = frame.n_bar
    pi = _pi_chi_d(frame, cut, cr)
    d_val = (xc - frame.x0_bar) @ n
    phi_TJ = AffinePair(xc, np.array([d_val - pi.value[0], -pi.value[1]]), np.array([n - pi.grad[0], -pi.grad[1]]))
    cT = compute_cT(frame, cut)
    nBn = n @ frame.B_T_plus @ n
    dB = frame.B_T_plus - frame.B_T_minus
    alpha = np.array([-(n @ dB @ lam.grad[0]) / (nBn * cT) for lam in cr])
    basis = [lam + a * phi_TJ for lam, a in zip(cr, alpha)]
    return LocalIFEBasis(int(T), basis, phi_TJ, alpha, cT, cr, pi)


def solve_ife_basis(frame: InterfaceFrame, cut: CutElementData) -> tuple:
    """Dual basis of all 2(N+1) functionals by a dense solve.

    Returns ``(basis, psi)``: the pairs dual to ``M_F`` and to ``J_i``. Used
    as an independent check of the closed-form construction.
    """
    xc = cut.vertices.mean(axis=0)
    L = functional_matrix(frame, cut, xc)
    X = np.linalg.solve(L, np.eye(L.shape[0]))
    N = frame.dim
    psi = [AffinePair.from_vector(xc, X[:, i]) for i in range(N + 1)]
    basis = [AffinePair.from_vector(xc, X[:, N + 1 + k]) for k in range(N + 1)]
    return basis, psi


# ---------------------------------------------------------------------------
# correction
# ---------------------------------------------------------------------------
@dataclass
class LocalCorrection:
    element: int
    xi_J: AffinePair
    psi: list  # N+1 AffinePairs
    omega: list
    gD_values: np.ndarray  # (N,)
    gN_avg: float

    @property
    def jump_data(self) -> np.ndarray:
        return np.concatenate([self.gD_values, [self.gN_avg]])


def build_omega(frame: InterfaceFrame, center) -> list:
    """Plus-side-only pairs with ``J_j(omega_i) = delta_ij``."""
    N = frame.dim
    mh = frame.mu * frame.h
    n, t = frame.n_bar, frame.t_bar
    Bp = frame.B_T_plus
    nBn = n @ Bp @ n
    nBt = t @ (Bp.T @ n) if N > 1 else np.zeros(0)  # n^T B+ t_j
    out = []
    for i in range(N + 1):
        if i == N:
            val, grad = 0.0, n / nBn
        else:
            slopes = np.full(N - 1, -1.0 / mh) if i == 0 else np.eye(N - 1)[i - 1] / mh
            val = 1.0 if i == 0 else 0.0
            s_n = -(nBt @ slopes) / nBn
            grad = s_n * n + slopes @ t
        plus_val = val + grad @ (center - frame.x0_bar)
        out.append(AffinePair(np.asarray(center, dtype=float), np.array([plus_val, 0.0]),
                              np.array([grad, np.zeros(N)])))
    return out


def build_correction(T: int, frame: InterfaceFrame, cut: CutElementData, basis: LocalIFEBasis,
                     problem: LevelSetProblem, check_scaling: bool = False) -> LocalCorrection:
    """Local jump correction ``xi_J`` and the pairs ``psi_i`` it is built from."""
    N = frame.dim
    xc = cut.vertices.mean(axis=0)
    omega = build_omega(frame, xc)
    psi = []
    for w in omega:
        p = w
        for F, phi in enumerate(basis.basis):
            p = p - functional_M(cut, F, w) * phi
        psi.append(p)
    gD = np.asarray(problem.g_D(frame.x_tilde_pts[:N]), dtype=float).reshape(-1)
    gN = frame.avg(problem.g_N)
    xi = AffinePair.zero(xc)
    for i in range(N):
        xi = xi + gD[i] * psi[i]
    xi = xi + gN * psi[N]
    if check_scaling:
        r = max(abs(psi[N].value).max(), 1e-300) / frame.h
        log.debug("element %d: |psi_N| / h = %.3e", T, r)
    return LocalCorrection(int(T), xi, psi, omega, gD, float(gN))


# ---------------------------------------------------------------------------
# projections and interpolation
# ---------------------------------------------------------------------------
def hat_projection(T: int, cut: CutElementData, pair: AffinePair) -> tuple:
    """Affine function on T with face means ``M_F(pair)``; returns ``(value_at_centroid, grad)``."""
    cr = _cr_pairs(cut)
    m = np.array([functional_M(cut, F, pair) for F in range(len(cr))])
    return float(m.sum() / len(cr)), m @ np.array([lam.grad[0] for lam in cr])


def face_moments(cut: CutElementData, u_plus, u_minus, order: int = 4) -> np.ndarray:
    """``M_F(u+, u-)`` by Gauss quadrature on the face pieces."""
    N = cut.dim
    out = np.zeros(N + 1)
    for k in range(N + 1):
        tot = 0.0
        for s, u in enumerate((u_plus, u_minus)):
            pieces = cut.face_pieces[k][s]
            if not pieces:
                continue
            q = QuadratureSet.from_simplices(pieces, order, N - 1)
            tot += q.integrate(u(q.points))
        out[k] = tot / cut.face_measure[k]
    return out


def ife_interpolate(T: int, cut: CutElementData, basis: LocalIFEBasis, u_plus, u_minus, order: int = 4) -> AffinePair:
    m = face_moments(cut, u_plus, u_minus, order)
    out = AffinePair.zero(basis.basis[0].center)
    for F, phi in enumerate(basis.basis):
        out = out + m[F] * phi
    return out


@dataclass
class ElementSpace:
    """Basis and correction of one interface element, ready for assembly."""

    element: int
    cut: CutElementData
    basis: LocalIFEBasis
    correction: LocalCorrection

    @property
    def coefficients(self) -> np.ndarray:
        return self.basis.coefficients

    @property
    def known(self) -> np.ndarray:
        xi = self.correction.xi_J
        return np.array([np.concatenate([[xi.value[s]], xi.grad[s]]) for s in range(2)])


def build_local_spaces(geometry, problem: LevelSetProblem | None = None) -> dict:
    """:class:`ElementSpace` for every interface element of ``geometry``."""
    problem = geometry.problem if problem is None else problem
    out = {}
    for T, cut in geometry.cuts.items():
        b = build_ife_basis(T, cut.frame, cut)
        c = build_correction(T, cut.frame, cut, b, problem)
        out[T] = ElementSpace(T, cut, b, c)
    return out
