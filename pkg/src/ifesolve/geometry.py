"""Level-set geometry: element classification, local interface frames,
exact clipping by the frame plane and cut-cell quadrature.

Sides are encoded as ``+1`` (Omega^+, phi > 0) and ``-1`` (Omega^-, phi < 0).
Array slots for the two sides always use index 0 for ``+`` and 1 for ``-``.
A vertex where phi vanishes exactly is counted on the ``+`` side.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import AssumptionViolation, DegenerateCut, MappingFailure
from .mesh import Mesh, local_edge_index
from .quadrature import QuadratureSet, simplex_measures

log = logging.getLogger(__name__)

SIDES = (1, -1)


def side_slot(side: int) -> int:
    return 0 if side > 0 else 1


@dataclass
class LevelSetProblem:
    """Interface description plus coefficient and data fields.

    Every field takes points of shape (n, N) and returns arrays with a leading
    axis of length n. ``B_plus``/``B_minus`` return (n, N, N) SPD matrices.
    """

    dim: int
    phi: Callable
    grad_phi: Callable
    B_plus: Callable
    B_minus: Callable
    f_plus: Callable
    f_minus: Callable
    g_D: Callable
    g_N: Callable
    g_boundary: Callable
    exact_plus: Callable | None = None
    exact_minus: Callable | None = None
    grad_exact_plus: Callable | None = None
    grad_exact_minus: Callable | None = None
    beta0_plus: float = 1.0
    beta0_minus: float = 1.0
    name: str = "custom"
    distance: Callable | None = None  # signed distance to the interface, if known

    @property
    def has_exact(self) -> bool:
        return self.exact_plus is not None and self.exact_minus is not None

    def B(self, x, side) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.B_plus(x) if side > 0 else self.B_minus(x)

    def B_sided(self, x, sides) -> np.ndarray:
        """Coefficient at points with per-point side labels."""
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], self.dim, self.dim))
        plus = np.asarray(sides) > 0
        if plus.any():
            out[plus] = self.B_plus(x[plus])
        if (~plus).any():
            out[~plus] = self.B_minus(x[~plus])
        return out

    def f(self, x, side) -> np.ndarray:
        return self.f_plus(x) if side > 0 else self.f_minus(x)

    def u(self, x, side) -> np.ndarray:
        return self.exact_plus(x) if side > 0 else self.exact_minus(x)

    def grad_u(self, x, side) -> np.ndarray:
        return self.grad_exact_plus(x) if side > 0 else self.grad_exact_minus(x)

    def u_sided(self, x, sides) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty(x.shape[0])
        plus = np.asarray(sides) > 0
        if plus.any():
            out[plus] = self.exact_plus(x[plus])
        if (~plus).any():
            out[~plus] = self.exact_minus(x[~plus])
        return out

    def normal(self, x) -> np.ndarray:
        g = self.grad_phi(np.atleast_2d(x))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def check_coefficients(self, points) -> tuple:
        """Sample eigenvalue bounds (min, max) of B^+ and B^-; raises if not SPD."""
        out = []
        for Bf in (self.B_plus, self.B_minus):
            Bs = Bf(np.atleast_2d(points))
            if not np.allclose(Bs, np.transpose(Bs, (0, 2, 1)), rtol=1e-13, atol=1e-13):
                raise ValueError(f"{self.name}: coefficient is not symmetric")
            ev = np.linalg.eigvalsh(Bs)
            if ev.min() <= 0:
                raise ValueError(f"{self.name}: coefficient is not positive definite")
            out.append((float(ev.min()), float(ev.max())))
        return tuple(out)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------
@dataclass
class Classification:
    vertex_phi: np.ndarray
    element_side: np.ndarray  # +1 / -1 for non-interface elements, 0 for interface
    interface_faces: np.ndarray  # face ids crossed by the interface
    near_elements: np.ndarray  # bool mask of Omega_h^Gamma
    near_faces: np.ndarray  # face ids interior to Omega_h^Gamma

    @property
    def interface_elements(self) -> np.ndarray:
        return np.flatnonzero(self.element_side == 0)

    @property
    def noninterface_elements(self) -> np.ndarray:
        return np.flatnonzero(self.element_side != 0)

    @property
    def is_interface(self) -> np.ndarray:
        return self.element_side == 0


def _straddles(values) -> np.ndarray:
    return (values.min(axis=-1) < 0) & (values.max(axis=-1) > 0)


def classify_elements(mesh: Mesh, problem: LevelSetProblem, samples_per_edge: int = 7) -> Classification:
    """Tag elements and faces against the zero level set.

    An element (face) is cut when phi takes strictly opposite signs at two of
    its vertices. Edges whose end values share a sign are sampled at interior
    points; a hidden sign change there violates the one-crossing-per-edge
    assumption and raises :class:`AssumptionViolation`. Vertices with
    phi == 0 are labelled minus, so an edge that touches a convex minus
    region at an endpoint still sees a single crossing.
    """
    vphi = np.array(problem.phi(mesh.vertices), dtype=float)
    # round-off zeros (grid vertices lying on the interface) become exact zeros
    vphi[np.abs(vphi) <= 64 * np.finfo(float).eps * max(1.0, np.abs(vphi).max())] = 0.0
    fvals = vphi[mesh.faces]
    zero_face = np.all(fvals == 0.0, axis=1)
    if zero_face.any():
        c = problem.phi(mesh.face_centroids[zero_face])
        if np.any(c == 0.0):
            f = int(np.flatnonzero(zero_face)[np.argmax(c == 0.0)])
            raise DegenerateCut(f"level set vanishes on face {f} {mesh.face_coords[f].tolist()}")

    evals = vphi[mesh.elements]
    cut = _straddles(evals)
    side = np.where(evals.max(axis=1) > 0, 1, -1)
    side[np.all(evals == 0.0, axis=1)] = 1
    side[cut] = 0

    _check_edges(mesh, problem, vphi, samples_per_edge)

    interface_faces = np.flatnonzero(_straddles(fvals))

    marked = np.zeros(mesh.n_vertices, dtype=bool)
    marked[mesh.elements[cut].ravel()] = True
    near = marked[mesh.elements].any(axis=1)
    fe = mesh.face_elements
    interior = fe[:, 1] >= 0
    near_faces = np.flatnonzero(interior & near[fe[:, 0]] & near[np.where(interior, fe[:, 1], 0)])
    return Classification(vphi, side, interface_faces, near, near_faces)


def _check_edges(mesh, problem, vphi, samples):
    if samples <= 0:
        return
    E = mesh.edges
    pa, pb = mesh.vertices[E[:, 0]], mesh.vertices[E[:, 1]]
    sa = vphi[E[:, 0]] > 0
    sb = vphi[E[:, 1]] > 0
    same = sa == sb
    if not same.any():
        return
    idx = np.flatnonzero(same)
    t = np.arange(1, samples + 1) / (samples + 1)
    pts = pa[idx, None, :] + t[None, :, None] * (pb[idx] - pa[idx])[:, None, :]
    vals = problem.phi(pts.reshape(-1, mesh.dim)).reshape(len(idx), samples)
    bad = np.any((vals > 0) != sa[idx, None], axis=1)
    if bad.any():
        e = int(idx[np.argmax(bad)])
        raise AssumptionViolation(
            f"interface crosses edge {e} {mesh.vertices[E[e]].tolist()} an even number of times; "
            "refine the mesh"
        )


def edge_roots(mesh: Mesh, vphi: np.ndarray, problem: LevelSetProblem, iterations: int = 52) -> np.ndarray:
    """Points where the interface crosses each cut edge (NaN for uncut edges).

    Bisection after sign bracketing; the bracket shrinks to 2^-52 of the edge.
    """
    E = mesh.edges
    out = np.full((E.shape[0], mesh.dim), np.nan)
    fa, fb = vphi[E[:, 0]], vphi[E[:, 1]]
    cut = (fa > 0) != (fb > 0)
    if not cut.any():
        return out
    idx = np.flatnonzero(cut)
    a = mesh.vertices[E[idx, 0]]
    b = mesh.vertices[E[idx, 1]]
    sa = fa[idx] > 0
    lo = np.zeros(len(idx))
    hi = np.ones(len(idx))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        v = problem.phi(a + mid[:, None] * (b - a))
        left = (v > 0) == sa
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
    t = 0.5 * (lo + hi)
    t[fa[idx] == 0] = 0.0
    t[fb[idx] == 0] = 1.0
    out[idx] = a + t[:, None] * (b - a)
    return out


# ---------------------------------------------------------------------------
# simplex splitting
# ---------------------------------------------------------------------------
@dataclass
class SimplexSplit:
    """Pieces of a k-simplex on each side of a (piecewise) planar cut."""

    plus: list
    minus: list
    interface: list  # (k)-vertex simplices on the cut surface

    def pieces(self, side: int) -> list:
        return self.plus if side > 0 else self.minus


def _wedge(A, B):
    # prism with lateral edges A[i]-B[i]; shared diagonal A1-B2 on the A1A2B2B1 quad
    return [
        np.array([A[0], A[1], A[2], B[2]]),
        np.array([A[0], A[1], B[1], B[2]]),
        np.array([A[0], B[0], B[1], B[2]]),
    ]


def split_simplex(P: np.ndarray, plus: np.ndarray, edge_point: Callable) -> SimplexSplit:
    """Split a simplex with vertices ``P`` by a surface through cut edges.

    ``plus[i]`` is the side of vertex i and ``edge_point(i, j)`` returns the
    crossing on edge (i, j). Works for segments, triangles and tetrahedra.
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[0] - 1
    plus = np.asarray(plus, dtype=bool)
    ip = [i for i in range(k + 1) if plus[i]]
    im = [i for i in range(k + 1) if not plus[i]]
    if not im:
        return SimplexSplit([P], [], [])
    if not ip:
        return SimplexSplit([], [P], [])

    def ep(i, j):
        return np.asarray(edge_point(min(i, j), max(i, j)), dtype=float)

    if k == 1:
        x = ep(0, 1)
        a = np.array([P[ip[0]], x])
        b = np.array([P[im[0]], x])
        return SimplexSplit([a], [b], [x[None, :]])
    if k == 2:
        lone, pair, lone_plus = (ip[0], im, True) if len(ip) == 1 else (im[0], ip, False)
        a, b = pair
        xa, xb = ep(lone, a), ep(lone, b)
        tri = np.array([P[lone], xa, xb])
        quad = [np.array([P[a], P[b], xb]), np.array([P[a], xb, xa])]
        iface = [np.array([xa, xb])]
        return SimplexSplit([tri], quad, iface) if lone_plus else SimplexSplit(quad, [tri], iface)
    if k == 3:
        if len(ip) == 1 or len(im) == 1:
            lone, rest, lone_plus = (ip[0], im, True) if len(ip) == 1 else (im[0], ip, False)
            xs = [ep(lone, r) for r in rest]
            tet = np.array([P[lone], *xs])
            prism = _wedge([P[r] for r in rest], xs)
            iface = [np.array(xs)]
            return SimplexSplit([tet], prism, iface) if lone_plus else SimplexSplit(prism, [tet], iface)
        a, b = ip
        c, d = im
        pac, pad, pbc, pbd = ep(a, c), ep(a, d), ep(b, c), ep(b, d)
        plus_pieces = _wedge([P[a], pac, pad], [P[b], pbc, pbd])
        minus_pieces = _wedge([P[c], pac, pbc], [P[d], pad, pbd])
        iface = [np.array([pac, pad, pbd]), np.array([pac, pbd, pbc])]
        return SimplexSplit(plus_pieces, minus_pieces, iface)
    raise ValueError("unsupported simplex dimension")


def _moments(simplices):
    if not simplices:
        return 0.0, None
    S = np.asarray(simplices)
    m = simplex_measures(S)
    return float(m.sum()), (m[:, None] * S.mean(axis=1)).sum(axis=0)


# ---------------------------------------------------------------------------
# local frame
# ---------------------------------------------------------------------------
@dataclass
class InterfaceFrame:
    element: int
    h: float
    mu: float
    x0_bar: np.ndarray
    n_bar: np.ndarray
    t_bar: np.ndarray  # (N - 1, N)
    x_bar_pts: np.ndarray  # (N, N): x_bar_0 .. x_bar_{N-1}
    x_tilde_pts: np.ndarray  # (N, N)
    B_T_plus: np.ndarray
    B_T_minus: np.ndarray
    ext: QuadratureSet | None = None
    vertex_sd: np.ndarray | None = None  # signed distances of the vertices to L_T

    @property
    def dim(self) -> int:
        return self.x0_bar.shape[0]

    def signed_distance(self, x) -> np.ndarray:
        return (np.atleast_2d(x) - self.x0_bar) @ self.n_bar

    @property
    def ext_measure(self) -> float:
        return self.ext.measure

    def avg(self, field: Callable) -> float:
        """Weighted mean of ``field`` over the extended interface patch."""
        return float(np.dot(self.ext.weights, field(self.ext.points)) / self.ext.measure)


def tangent_frame(n: np.ndarray) -> np.ndarray:
    """Orthonormal tangents to ``n`` by Gram-Schmidt on the coordinate axes,
    taking the axes least aligned with ``n`` first."""
    N = n.shape[0]
    order = np.argsort(np.abs(n), kind="stable")
    basis = [n]
    out = []
    for a in order:
        v = np.zeros(N)
        v[a] = 1.0
        for b in basis:
            v = v - (v @ b) * b
        nv = np.linalg.norm(v)
        if nv < 1e-8:
            continue
        v = v / nv
        basis.append(v)
        out.append(v)
        if len(out) == N - 1:
            break
    return np.array(out)


def project_to_interface(x, problem: LevelSetProblem, tol: float = 1e-15, maxit: int = 50) -> np.ndarray:
    """Newton projection along grad(phi) onto the zero level set."""
    x = np.array(np.atleast_2d(x), dtype=float)
    for _ in range(maxit):
        v = problem.phi(x)
        if np.all(np.abs(v) <= tol):
            break
        g = problem.grad_phi(x)
        x = x - (v / np.einsum("na,na->n", g, g))[:, None] * g
    return x


def map_to_interface(x_bar, normal, problem: LevelSetProblem, h=None, n_bracket: int = 32, iterations: int = 60,
                     strict: bool = True) -> tuple:
    """Move points along ``normal`` to the nearest zero of phi.

    ``normal`` may be an :class:`InterfaceFrame`, whose normal and size are used.

    Returns ``(points, rho)`` with ``points = x_bar + rho * normal``. The root
    with the smallest ``|rho|`` within ``|rho| <= h`` is taken; raises
    :class:`MappingFailure` when there is none, or returns NaN rows for such
    points when ``strict`` is False.
    """
    if isinstance(normal, InterfaceFrame):
        h = normal.h if h is None else h
        normal = normal.n_bar
    if h is None:
        raise ValueError("search radius h is required without a frame")
    single = np.ndim(x_bar) == 1
    X = np.atleast_2d(np.asarray(x_bar, dtype=float))
    n = np.broadcast_to(np.atleast_2d(normal), X.shape)
    h = np.broadcast_to(np.asarray(h, dtype=float), (X.shape[0],))
    steps = np.arange(n_bracket + 1) / n_bracket
    s = np.concatenate([-steps[::-1], steps[1:]])  # (2K + 1,)
    rho_grid = h[:, None] * s[None, :]
    pts = X[:, None, :] + rho_grid[..., None] * n[:, None, :]
    vals = problem.phi(pts.reshape(-1, X.shape[1])).reshape(X.shape[0], -1)
    K = n_bracket
    pos = vals > 0
    change = pos[:, 1:] != pos[:, :-1]  # interval j is [s_j, s_{j+1}]
    # distance of each interval from rho = 0, in grid steps
    dist = np.concatenate([np.arange(K - 1, -1, -1), np.arange(K)])
    rank = np.where(change, dist[None, :], 10 * K)
    best = rank.min(axis=1)
    missing = best >= 10 * K
    if strict and np.any(missing):
        bad = int(np.argmax(best >= 10 * K))
        raise MappingFailure(f"no interface point within |rho| <= h along the normal from {X[bad].tolist()}")
    candidates = []
    for choose in (np.argmin(rank, axis=1), rank.shape[1] - 1 - np.argmin(rank[:, ::-1], axis=1)):
        lo = np.take_along_axis(rho_grid, choose[:, None], 1)[:, 0]
        hi = np.take_along_axis(rho_grid, choose[:, None] + 1, 1)[:, 0]
        slo = np.take_along_axis(pos, choose[:, None], 1)[:, 0]
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            v = problem.phi(X + mid[:, None] * n) > 0
            left = v == slo
            lo = np.where(left, mid, lo)
            hi = np.where(left, hi, mid)
        candidates.append(0.5 * (lo + hi))
    r0, r1 = candidates
    rho = np.where(np.abs(r0) <= np.abs(r1), r0, r1)
    exact0 = vals[:, K] == 0
    rho[exact0] = 0.0
    rho[missing] = np.nan
    out = X + rho[:, None] * n
    if single:
        return out[0], float(rho[0])
    return out, rho


def _ext_nodes(q: int, dim: int):
    x, w = leggauss(q)
    u, wu = 0.5 * (x + 1), 0.5 * w
    if dim == 2:
        return u[:, None], wu
    U, V = np.meshgrid(u, u, indexing="ij")
    return np.column_stack([U.ravel(), V.ravel()]), np.outer(wu, wu).ravel()


def vertex_distance(points, problem: LevelSetProblem) -> np.ndarray:
    """Signed distance to the interface at ``points``.

    Uses ``problem.distance`` when given, otherwise the length of the Newton
    projection step (accurate to second order near the interface).
    """
    x = np.atleast_2d(points)
    if problem.distance is not None:
        return np.asarray(problem.distance(x), dtype=float)
    proj = project_to_interface(x, problem)
    d = np.linalg.norm(x - proj, axis=1)
    return np.where(problem.phi(x) > 0, d, -d)


PLANES = ("interpolated", "tangent")


_MU_HALVINGS = 4


def _map_patches(x0, nbar, tangents, h, mu, x0_tilde, problem, zeta, wz, strict):
    """Map the corner points and quadrature nodes of the patches S_T onto the interface."""
    m, N = x0.shape
    xbar = np.concatenate([x0[:, None, :], x0[:, None, :] + (mu * h)[:, None, None] * tangents], axis=1)
    xt_rest, _ = map_to_interface(
        xbar[:, 1:].reshape(-1, N), np.repeat(nbar, N - 1, axis=0), problem, np.repeat(h, N - 1), strict=strict
    )
    xtilde = np.concatenate([x0_tilde[:, None, :], xt_rest.reshape(m, N - 1, N)], axis=1)
    # extended patch: tensor Gauss nodes on S_T, surface Jacobian by central differences
    delta = 1e-5 * h
    offsets = [np.zeros(N - 1)]
    for a in range(N - 1):
        e = np.zeros(N - 1)
        e[a] = 1.0
        offsets += [e, -e]
    offsets = np.array(offsets)  # (1 + 2(N-1), N-1)
    par = (mu * h)[:, None, None, None] * zeta[None, :, None, :] + delta[:, None, None, None] * offsets[None, None, :, :]
    pts = x0[:, None, None, :] + np.einsum("mqoa,mab->mqob", par, tangents)
    nrep = np.broadcast_to(nbar[:, None, None, :], pts.shape)
    hrep = np.broadcast_to(h[:, None, None], pts.shape[:3])
    mapped, _ = map_to_interface(pts.reshape(-1, N), nrep.reshape(-1, N), problem, hrep.reshape(-1), strict=strict)
    mapped = mapped.reshape(pts.shape)
    D = [(mapped[:, :, 1 + 2 * a] - mapped[:, :, 2 + 2 * a]) / (2 * delta[:, None, None]) for a in range(N - 1)]
    if N == 2:
        jac = np.linalg.norm(D[0], axis=2)
    else:
        jac = np.linalg.norm(np.cross(D[0], D[1]), axis=2)
    wext = (mu[:, None] * h[:, None]) ** (N - 1) * wz[None, :] * jac
    return xbar, xtilde, mapped[:, :, 0], wext


def build_frames(mesh: Mesh, elements, vertex_phi, roots, problem: LevelSetProblem, mu: float = 0.5, q: int = 5,
                 plane: str = "interpolated") -> list:
    """Interface frames for a batch of interface elements (vectorized mapping).

    ``plane="interpolated"`` takes L_T as the zero set of the linear
    interpolant of the signed distance at the element vertices, so that
    neighbouring elements split their common face identically.
    ``plane="tangent"`` takes the tangent plane of the interface at x0.
    """
    if plane not in PLANES:
        raise ValueError(f"unknown plane construction {plane!r}; expected one of {PLANES}")
    elements = np.asarray(elements, dtype=np.int64)
    if len(elements) == 0:
        return []
    N = mesh.dim
    ee = mesh.element_edges[elements]  # (m, nle)
    P = roots[ee]  # (m, nle, N)
    valid = ~np.isnan(P[..., 0])
    if np.any(valid.sum(axis=1) < 2):
        bad = int(elements[np.argmax(valid.sum(axis=1) < 2)])
        raise AssumptionViolation(f"element {bad} has fewer than two interface crossings")
    centre = np.nansum(np.where(valid[..., None], P, 0.0), axis=1) / valid.sum(axis=1)[:, None]
    x_on = project_to_interface(centre, problem)
    h = mesh.diameters[elements]
    m = len(elements)
    if plane == "tangent":
        x0 = x_on
        g = problem.grad_phi(x0)
        nbar = g / np.linalg.norm(g, axis=1, keepdims=True)
        x0_tilde = x0
    else:
        verts = mesh.elements[elements]
        used = np.unique(verts)
        dist = np.zeros(mesh.n_vertices)
        dist[used] = vertex_distance(mesh.vertices[used], problem)
        dist[vertex_phi == 0] = 0.0
        dv = dist[verts]  # (m, N+1)
        gd = np.einsum("mk,mka->ma", dv, mesh.bary_gradients[elements])
        gn = np.linalg.norm(gd, axis=1)
        if np.any(gn == 0):
            bad = int(elements[np.argmax(gn == 0)])
            raise AssumptionViolation(f"element {bad}: interpolated distance has zero gradient")
        nbar = gd / gn[:, None]
        A0 = mesh.vertices[verts[:, 0]]
        dh = dv[:, 0] + np.einsum("ma,ma->m", gd, x_on - A0)
        x0 = x_on - (dh / gn)[:, None] * nbar
        x0_tilde, _ = map_to_interface(x0, nbar, problem, h)
    tangents = np.array([tangent_frame(nn) for nn in nbar])  # (m, N-1, N)
    Bp = problem.B_plus(x0_tilde)
    Bm = problem.B_minus(x0_tilde)
    zeta, wz = _ext_nodes(q, N)
    # mu is halved on elements whose patch does not map onto the interface
    mu_e = np.full(m, float(mu))
    todo = np.arange(m)
    xtilde = np.empty((m, N, N))
    xbar = np.empty((m, N, N))
    nodes = np.empty((m, zeta.shape[0], N))
    wext = np.empty((m, zeta.shape[0]))
    for attempt in range(_MU_HALVINGS + 1):
        strict = attempt == _MU_HALVINGS
        out = _map_patches(x0[todo], nbar[todo], tangents[todo], h[todo], mu_e[todo], x0_tilde[todo],
                           problem, zeta, wz, strict)
        ok = ~np.isnan(out[1]).any(axis=(1, 2)) & ~np.isnan(out[2]).any(axis=(1, 2))
        done = todo[ok]
        for arr, val in zip((xbar, xtilde, nodes, wext), out):
            arr[done] = val[ok]
        todo = todo[~ok]
        if todo.size == 0:
            break
        log.info("shrinking the interface patch on %d elements (mu %.3g)", todo.size, mu_e[todo].min() / 2)
        mu_e[todo] *= 0.5

    frames = []
    for r, T in enumerate(elements):
        frames.append(
            InterfaceFrame(
                element=int(T),
                h=float(h[r]),
                mu=float(mu_e[r]),
                x0_bar=x0[r],
                n_bar=nbar[r],
                t_bar=tangents[r],
                x_bar_pts=xbar[r],
                x_tilde_pts=xtilde[r],
                B_T_plus=Bp[r],
                B_T_minus=Bm[r],
                ext=QuadratureSet(nodes[r], wext[r]),
                vertex_sd=None if plane == "tangent" else dv[r] / gn[r],
            )
        )
    return frames


def build_interface_frame(mesh: Mesh, T: int, problem: LevelSetProblem, mu: float = 0.5, q: int = 5,
                          classification: Classification | None = None, plane: str = "interpolated") -> InterfaceFrame:
    """Frame of a single interface element."""
    if classification is None:
        classification = classify_elements(mesh, problem)
    roots = edge_roots(mesh, classification.vertex_phi, problem)
    return build_frames(mesh, [T], classification.vertex_phi, roots, problem, mu, q, plane)[0]


def gamma_ext_quadrature(frame: InterfaceFrame, problem: LevelSetProblem, q: int = 5) -> QuadratureSet:
    """Rebuild the quadrature on the extended interface patch with ``q`` nodes
    per direction. Returns a rule whose weights sum to |Gamma_T^ext|."""
    N = frame.dim
    zeta, wz = _ext_nodes(q, N)
    h, mu = frame.h, frame.mu
    delta = 1e-5 * h
    base = frame.x0_bar + (mu * h) * zeta @ frame.t_bar
    pts = [base]
    for a in range(N - 1):
        pts += [base + delta * frame.t_bar[a], base - delta * frame.t_bar[a]]
    allp = np.concatenate(pts)
    mapped, _ = map_to_interface(allp, frame.n_bar, problem, h)
    mapped = mapped.reshape(len(pts), -1, N)
    D = [(mapped[1 + 2 * a] - mapped[2 + 2 * a]) / (2 * delta) for a in range(N - 1)]
    jac = np.linalg.norm(D[0], axis=1) if N == 2 else np.linalg.norm(np.cross(D[0], D[1]), axis=1)
    return QuadratureSet(mapped[0], (mu * h) ** (N - 1) * wz * jac)


def check_frame(frame: InterfaceFrame, problem: LevelSetProblem, C: float = 2.0) -> list:
    """Return a list of violated frame invariants (empty when all hold)."""
    issues = []
    if abs(np.linalg.norm(frame.n_bar) - 1) > 1e-12:
        issues.append("n_bar not unit")
    G = frame.t_bar @ frame.t_bar.T
    if np.abs(G - np.eye(frame.dim - 1)).max() > 1e-12 or np.abs(frame.t_bar @ frame.n_bar).max() > 1e-12:
        issues.append("tangent frame not orthonormal")
    if np.abs(problem.phi(frame.x_tilde_pts)).max() > 1e-10 * frame.h:
        issues.append("mapped point off the interface")
    dev = np.linalg.norm(frame.x_tilde_pts - frame.x_bar_pts, axis=1).max()
    if dev > C * frame.h ** 2:
        issues.append(f"|x_tilde - x_bar| = {dev:.3e} exceeds {C} h^2")
    return issues


# ---------------------------------------------------------------------------
# cut elements
# ---------------------------------------------------------------------------
@dataclass
class CutElementData:
    """Geometry of one interface element.

    ``plus_polytope``/``minus_polytope`` and the face arrays describe the exact
    clip by the frame plane L_T. ``quad_plus``/``quad_minus``/``quad_interface``
    integrate over the subdomains bounded by the piecewise-linear interface.
    Face arrays are indexed ``[local_face, side_slot]``.
    """

    element: int
    frame: InterfaceFrame
    vertices: np.ndarray
    volume: float
    plus_polytope: list
    minus_polytope: list
    vol_plus: float
    vol_minus: float
    face_measure: np.ndarray  # (N+1,)
    face_piece_measure: np.ndarray  # (N+1, 2)
    face_piece_moment: np.ndarray  # (N+1, 2, N)
    face_pieces: list  # [k][slot] -> list of simplices (clip by L_T)
    chord: SimplexSplit | None = None
    chord_faces: list | None = None  # [k] -> SimplexSplit of face k by the interface
    quad_plus: QuadratureSet | None = None
    quad_minus: QuadratureSet | None = None
    quad_interface: QuadratureSet | None = None
    plane_split: SimplexSplit | None = None  # clip of T by L_T
    plane_faces: list | None = None  # [k] -> clip of face k by L_T
    face_split: list | None = None  # face splits used for assembly (plane or chord)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def quad_ext(self) -> QuadratureSet:
        return self.frame.ext

    def face_plus_measure(self, k: int) -> float:
        return float(self.face_piece_measure[k, 0])

    def face_minus_measure(self, k: int) -> float:
        return float(self.face_piece_measure[k, 1])

    def quad(self, side: int) -> QuadratureSet:
        return self.quad_plus if side > 0 else self.quad_minus


def cut_element(vertices: np.ndarray, frame: InterfaceFrame) -> CutElementData:
    """Exact clip of a simplex by the plane through ``x0_bar`` normal to ``n_bar``."""
    P = np.asarray(vertices, dtype=float)
    N = P.shape[1]
    d = (P - frame.x0_bar) @ frame.n_bar if frame.vertex_sd is None else frame.vertex_sd
    plus = d > 0

    def ep(i, j):
        t = d[i] / (d[i] - d[j])
        return P[i] + t * (P[j] - P[i])

    whole = split_simplex(P, plus, ep)
    vol_p, _ = _moments(whole.plus)
    vol_m, _ = _moments(whole.minus)
    vol = float(simplex_measures(P[None])[0])
    nf = N + 1
    fmeas = np.zeros(nf)
    pm = np.zeros((nf, 2))
    pmom = np.zeros((nf, 2, N))
    pieces = []
    face_splits = []
    for k in range(nf):
        idx = [i for i in range(nf) if i != k]
        sp = split_simplex(P[idx], plus[idx], lambda a, b, idx=idx: ep(idx[a], idx[b]))
        face_splits.append(sp)
        fmeas[k] = simplex_measures(P[idx][None])[0]
        row = []
        for slot, part in enumerate((sp.plus, sp.minus)):
            m, mom = _moments(part)
            pm[k, slot] = m
            if mom is not None:
                pmom[k, slot] = mom
            row.append(part)
        pieces.append(row)
    return CutElementData(
        element=frame.element,
        frame=frame,
        vertices=P,
        volume=vol,
        plus_polytope=whole.plus,
        minus_polytope=whole.minus,
        vol_plus=vol_p,
        vol_minus=vol_m,
        face_measure=fmeas,
        face_piece_measure=pm,
        face_piece_moment=pmom,
        face_pieces=pieces,
        plane_split=whole,
        plane_faces=face_splits,
    )


def chord_split(mesh: Mesh, T: int, vertex_phi: np.ndarray, roots: np.ndarray) -> tuple:
    """Split element T (and each of its faces) by the piecewise-linear interface
    through the edge crossings."""
    N = mesh.dim
    P = mesh.vertices[mesh.elements[T]]
    plus = vertex_phi[mesh.elements[T]] > 0
    lei = local_edge_index(N)
    ee = mesh.element_edges[T]

    def ep(i, j):
        r = roots[ee[lei[(i, j)]]]
        if np.isnan(r[0]):
            raise AssumptionViolation(f"element {T}: edge ({i},{j}) expected to be cut")
        return r

    whole = split_simplex(P, plus, ep)
    faces = []
    for k in range(N + 1):
        idx = [i for i in range(N + 1) if i != k]
        faces.append(split_simplex(P[idx], plus[idx], lambda a, b, idx=idx: ep(idx[a], idx[b])))
    return whole, faces


def cut_quadrature(split: SimplexSplit, order: int, interface_order: int = 3) -> tuple:
    """Volume rules on both sides and a surface rule on the interface pieces."""
    N = split.plus[0].shape[1] if split.plus else split.minus[0].shape[1]
    qp = QuadratureSet.from_simplices(split.plus, order, N)
    qm = QuadratureSet.from_simplices(split.minus, order, N)
    qi = QuadratureSet.from_simplices(split.interface, interface_order, N)
    return qp, qm, qi


@dataclass
class InterfaceGeometry:
    """All geometric data of a mesh relative to one level-set problem."""

    mesh: Mesh
    problem: LevelSetProblem
    classification: Classification
    roots: np.ndarray
    cuts: dict = field(default_factory=dict)  # element id -> CutElementData
    mu: float = 0.5

    @property
    def interface_elements(self) -> np.ndarray:
        return self.classification.interface_elements


def analyze(mesh: Mesh, problem: LevelSetProblem, mu: float = 0.5, q: int = 5, order: int = 2,
            interface_order: int = 3, frames: bool = True, plane: str = "interpolated",
            integration: str = "plane") -> InterfaceGeometry:
    """Classify, locate crossings, build frames and cut data for every
    interface element.

    ``integration`` selects the subdomain split behind ``quad_plus``,
    ``quad_minus``, ``quad_interface`` and ``face_split``: ``"plane"`` uses the
    clip by L_T, ``"chord"`` the piecewise-linear interface through the edge
    crossings. The chord split is always kept in ``chord``/``chord_faces``.
    With ``frames=False`` only the chord split is available.
    """
    if integration not in ("plane", "chord"):
        raise ValueError(f"unknown integration split {integration!r}")
    cls = classify_elements(mesh, problem)
    roots = edge_roots(mesh, cls.vertex_phi, problem)
    geo = InterfaceGeometry(mesh, problem, cls, roots, mu=mu)
    ielems = cls.interface_elements
    frame_list = build_frames(mesh, ielems, cls.vertex_phi, roots, problem, mu, q, plane) if frames else [None] * len(ielems)
    for T, fr in zip(ielems, frame_list):
        T = int(T)
        whole, faces = chord_split(mesh, T, cls.vertex_phi, roots)
        if fr is not None:
            cd = cut_element(mesh.vertices[mesh.elements[T]], fr)
        else:
            cd = CutElementData(T, None, mesh.vertices[mesh.elements[T]], float(mesh.volumes[T]),
                                [], [], np.nan, np.nan, mesh.face_measures[mesh.element_faces[T]],
                                None, None, None)
        cd.chord, cd.chord_faces = whole, faces
        use_plane = fr is not None and integration == "plane"
        split = cd.plane_split if use_plane else whole
        cd.face_split = cd.plane_faces if use_plane else faces
        cd.quad_plus, cd.quad_minus, cd.quad_interface = cut_quadrature(split, order, interface_order)
        geo.cuts[T] = cd
    return geo
