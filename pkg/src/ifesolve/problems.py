"""Manufactured interface problems.

Each problem is assembled from closed-form pieces per side: the exact
solution with its gradient and Hessian, the coefficient and its column
divergence ``div_j B = sum_i d_i b_ij``. The source is then
``f = -(div B . grad u + B : Hess u)`` and the jump data follow from the
exact pieces. :func:`check_manufactured` validates these against finite
differences so transcription errors are caught when a problem is loaded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import LevelSetProblem


@dataclass
class SideData:
    u: Callable
    grad: Callable
    hess: Callable
    B: Callable
    divB: Callable


@dataclass
class ProblemSpec:
    name: str
    dim: int
    domain: np.ndarray
    levelset: LevelSetProblem
    notes: str = ""
    plus: SideData | None = field(default=None, repr=False)
    minus: SideData | None = field(default=None, repr=False)


def _source(side: SideData):
    def f(x):
        x = np.atleast_2d(x)
        return -(np.einsum("na,na->n", side.divB(x), side.grad(x)) + np.einsum("nab,nab->n", side.B(x), side.hess(x)))
    return f


def manufactured(name, dim, domain, phi, grad_phi, plus: SideData, minus: SideData,
                 beta0_plus=1.0, beta0_minus=1.0, notes="", distance=None) -> ProblemSpec:
    def normal(x):
        g = grad_phi(x)
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def g_D(x):
        x = np.atleast_2d(x)
        return plus.u(x) - minus.u(x)

    def g_N(x):
        x = np.atleast_2d(x)
        n = normal(x)
        fp = np.einsum("nab,nb->na", plus.B(x), plus.grad(x))
        fm = np.einsum("nab,nb->na", minus.B(x), minus.grad(x))
        return np.einsum("na,na->n", fp - fm, n)

    def g_boundary(x):
        x = np.atleast_2d(x)
        return np.where(phi(x) > 0, plus.u(x), minus.u(x))

    ls = LevelSetProblem(
        dim=dim, phi=phi, grad_phi=grad_phi, B_plus=plus.B, B_minus=minus.B,
        f_plus=_source(plus), f_minus=_source(minus), g_D=g_D, g_N=g_N, g_boundary=g_boundary,
        exact_plus=plus.u, exact_minus=minus.u, grad_exact_plus=plus.grad, grad_exact_minus=minus.grad,
        beta0_plus=beta0_plus, beta0_minus=beta0_minus, name=name, distance=distance,
    )
    return ProblemSpec(name, dim, np.asarray(domain, dtype=float), ls, notes, plus, minus)


def _sphere(radius, dim):
    def phi(x):
        x = np.atleast_2d(x)
        return np.einsum("na,na->n", x, x) - radius ** 2

    def grad_phi(x):
        return 2.0 * np.atleast_2d(x)

    return phi, grad_phi


def _sphere_distance(radius):
    def distance(x):
        return np.linalg.norm(np.atleast_2d(x), axis=1) - radius

    return distance


def _const_matrix(A):
    A = np.asarray(A, dtype=float)

    def B(x):
        return np.broadcast_to(A, (np.atleast_2d(x).shape[0],) + A.shape).copy()

    def divB(x):
        return np.zeros((np.atleast_2d(x).shape[0], A.shape[0]))

    return B, divB


def example1(beta0_plus: float = 1.0, beta0_minus: float = 1.0) -> ProblemSpec:
    """Circle of radius 1/2 in (-1, 1)^2 with anisotropic, variable coefficients."""
    if beta0_plus <= 0 or beta0_minus <= 0:
        raise ValueError("contrast multipliers must be positive")
    bp, bm = float(beta0_plus), float(beta0_minus)

    def up(x):
        return np.log(x[:, 0] ** 2 + x[:, 1] ** 2)

    def gup(x):
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        return 2.0 * x / r2[:, None]

    def hup(x):
        X, Y = x[:, 0], x[:, 1]
        r4 = (X ** 2 + Y ** 2) ** 2
        H = np.empty((x.shape[0], 2, 2))
        H[:, 0, 0] = 2 * (Y ** 2 - X ** 2) / r4
        H[:, 1, 1] = 2 * (X ** 2 - Y ** 2) / r4
        H[:, 0, 1] = H[:, 1, 0] = -4 * X * Y / r4
        return H

    def Bp(x):
        s = x[:, 0] + x[:, 1]
        B = np.empty((x.shape[0], 2, 2))
        B[:, 0, 0] = np.sin(s) + 5
        B[:, 0, 1] = B[:, 1, 0] = np.cos(s) + 2
        B[:, 1, 1] = np.sin(s) + 10
        return bp * B

    def divBp(x):
        s = x[:, 0] + x[:, 1]
        d = np.cos(s) - np.sin(s)
        return bp * np.column_stack([d, d])

    def um(x):
        return np.sin(x[:, 0] + x[:, 1])

    def gum(x):
        c = np.cos(x[:, 0] + x[:, 1])
        return np.column_stack([c, c])

    def hum(x):
        s = -np.sin(x[:, 0] + x[:, 1])
        return np.broadcast_to(s[:, None, None], (x.shape[0], 2, 2)).copy()

    def Bm(x):
        X, Y = x[:, 0], x[:, 1]
        B = np.empty((x.shape[0], 2, 2))
        B[:, 0, 0] = X ** 2 + 10
        B[:, 0, 1] = B[:, 1, 0] = X * Y + 2
        B[:, 1, 1] = X ** 2 * Y ** 2 + 5
        return bm * B

    def divBm(x):
        X, Y = x[:, 0], x[:, 1]
        return bm * np.column_stack([3 * X, Y + 2 * X ** 2 * Y])

    phi, gphi = _sphere(0.5, 2)
    return manufactured(
        "example1", 2, [(-1, 1), (-1, 1)], phi, gphi,
        SideData(up, gup, hup, Bp, divBp), SideData(um, gum, hum, Bm, divBm),
        bp, bm, notes="u+ = ln(x^2+y^2), u- = sin(x+y), circle r = 0.5", distance=_sphere_distance(0.5),
    )


B3_PLUS = np.array([[3.0, 0.5, 0.2], [0.5, 2.0, 0.3], [0.2, 0.3, 1.5]])
B3_MINUS = np.array([[1.0, 0.2, 0.1], [0.2, 2.0, 0.4], [0.1, 0.4, 3.0]])


def example3d(beta0_plus: float = 1.0, beta0_minus: float = 1.0) -> ProblemSpec:
    """Sphere of radius 1/2 in (-1, 1)^3 with constant anisotropic coefficients."""
    bp, bm = float(beta0_plus), float(beta0_minus)

    def up(x):
        return np.einsum("na,na->n", x, x)

    def gup(x):
        return 2.0 * x

    def hup(x):
        return np.broadcast_to(2.0 * np.eye(3), (x.shape[0], 3, 3)).copy()

    def um(x):
        return np.sin(x.sum(axis=1))

    def gum(x):
        return np.repeat(np.cos(x.sum(axis=1))[:, None], 3, axis=1)

    def hum(x):
        s = -np.sin(x.sum(axis=1))
        return np.broadcast_to(s[:, None, None], (x.shape[0], 3, 3)).copy()

    Bp, dBp = _const_matrix(bp * B3_PLUS)
    Bm, dBm = _const_matrix(bm * B3_MINUS)
    phi, gphi = _sphere(0.5, 3)
    return manufactured(
        "example3d", 3, [(-1, 1)] * 3, phi, gphi,
        SideData(up, gup, hup, Bp, dBp), SideData(um, gum, hum, Bm, dBm),
        bp, bm, notes="manufactured: u+ = |x|^2, u- = sin(x+y+z), sphere r = 0.5", distance=_sphere_distance(0.5),
    )


example3d_manufactured = example3d

B2_ANISO = np.array([[3.0, 1.0], [1.0, 2.0]])


def continuous_problem(dim: int = 2) -> ProblemSpec:
    """Same constant coefficient and smooth solution on both sides of a circle."""
    A = B2_ANISO if dim == 2 else B3_PLUS

    def u(x):
        return np.sin(x[:, 0] + 2 * x[:, 1]) + x[:, 0] * x[:, 1]

    def gu(x):
        c = np.cos(x[:, 0] + 2 * x[:, 1])
        g = np.zeros_like(x)
        g[:, 0] = c + x[:, 1]
        g[:, 1] = 2 * c + x[:, 0]
        return g

    def hu(x):
        s = -np.sin(x[:, 0] + 2 * x[:, 1])
        H = np.zeros((x.shape[0], dim, dim))
        H[:, 0, 0] = s
        H[:, 0, 1] = H[:, 1, 0] = 2 * s + 1
        H[:, 1, 1] = 4 * s
        return H

    B, dB = _const_matrix(A)
    side = SideData(u, gu, hu, B, dB)
    phi, gphi = _sphere(0.5, dim)
    return manufactured("continuous", dim, [(-1, 1)] * dim, phi, gphi, side, side,
                        notes="continuous coefficient, no jumps", distance=_sphere_distance(0.5))


def patch_problem(normal=(0.6, 0.8), offset=0.1037) -> ProblemSpec:
    """Planar interface, constant coefficients, piecewise-affine exact solution."""
    nrm = np.asarray(normal, dtype=float)
    nrm = nrm / np.linalg.norm(nrm)
    dim = nrm.shape[0]

    def phi(x):
        return np.atleast_2d(x) @ nrm - offset

    def gphi(x):
        return np.broadcast_to(nrm, np.atleast_2d(x).shape).copy()

    def affine(c, g):
        g = np.asarray(g, dtype=float)
        return SideData(
            lambda x: c + x @ g,
            lambda x: np.broadcast_to(g, x.shape).copy(),
            lambda x: np.zeros((x.shape[0], dim, dim)),
            *_const_matrix(np.diag(np.arange(1.0, dim + 1)) * 4 + 1.0),
        )

    plus = affine(1.0, [2.0, -1.0, 0.5][:dim])
    minus = affine(-0.5, [1.0, 3.0, -2.0][:dim])
    minus.B, minus.divB = _const_matrix(B2_ANISO if dim == 2 else B3_MINUS)
    return manufactured("patch", dim, [(-1, 1)] * dim, phi, gphi, plus, minus,
                        notes="piecewise affine solution, planar interface", distance=phi)


def zero_problem(dim: int = 2) -> ProblemSpec:
    base = example1(2.0, 1.0) if dim == 2 else example3d(2.0, 1.0)
    zero = SideData(
        lambda x: np.zeros(x.shape[0]),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros((x.shape[0], dim, dim)),
        None, None,
    )
    plus = SideData(zero.u, zero.grad, zero.hess, base.plus.B, base.plus.divB)
    minus = SideData(zero.u, zero.grad, zero.hess, base.minus.B, base.minus.divB)
    phi, gphi = _sphere(0.5, dim)
    return manufactured("zero", dim, [(-1, 1)] * dim, phi, gphi, plus, minus, notes="all data zero",
                        distance=_sphere_distance(0.5))


def trivial_cases(dim: int = 2) -> list:
    return [continuous_problem(dim), patch_problem() if dim == 2 else patch_problem((0.48, 0.6, 0.64)),
            zero_problem(dim)]


_REGISTRY: dict = {
    "example1": lambda beta_plus=1.0, beta_minus=1.0, dim=2: example1(beta_plus, beta_minus),
    "example3d": lambda beta_plus=1.0, beta_minus=1.0, dim=3: example3d(beta_plus, beta_minus),
    "continuous": lambda beta_plus=1.0, beta_minus=1.0, dim=2: continuous_problem(dim),
    "patch": lambda beta_plus=1.0, beta_minus=1.0, dim=2: (
        patch_problem() if dim == 2 else patch_problem((0.48, 0.6, 0.64))),
    "zero": lambda beta_plus=1.0, beta_minus=1.0, dim=2: zero_problem(dim),
}


def register_problem(name: str, factory: Callable) -> None:
    """Make ``factory(beta_plus=, beta_minus=, dim=)`` addressable by name."""
    _REGISTRY[name] = factory


def available_problems() -> list:
    return sorted(_REGISTRY)


def get_problem(name: str, beta_plus: float = 1.0, beta_minus: float = 1.0, dim: int | None = None,
                check: bool = True) -> ProblemSpec:
    if name not in _REGISTRY:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(available_problems())}")
    kwargs = dict(beta_plus=beta_plus, beta_minus=beta_minus)
    if dim is not None:
        kwargs["dim"] = dim
    spec = _REGISTRY[name](**kwargs)
    if check and spec.levelset.has_exact:
        check_manufactured(spec)
    return spec


def interface_points(spec: ProblemSpec, n: int = 100, seed: int = 0) -> np.ndarray:
    """Random points on the interface (projected from random points in the box)."""
    from .geometry import project_to_interface

    rng = np.random.default_rng(seed)
    lo, hi = spec.domain[:, 0], spec.domain[:, 1]
    x = lo + (hi - lo) * rng.random((4 * n, spec.dim))
    x = project_to_interface(x, spec.levelset)
    inside = np.all((x > lo) & (x < hi), axis=1) & (np.abs(spec.levelset.phi(x)) < 1e-12)
    return x[inside][:n]


def check_manufactured(spec: ProblemSpec, n: int = 100, seed: int = 0, rtol: float = 1e-6) -> dict:
    """Finite-difference validation of the coded source term and jump data.

    Returns the observed maximum residuals; raises ``ValueError`` if any
    exceeds ``rtol`` (relative to the field scale).
    """
    ls = spec.levelset
    rng = np.random.default_rng(seed)
    dim = spec.dim
    x_if = interface_points(spec, n, seed)
    eps = 1e-5

    def fd_grad(u, x):
        g = np.zeros_like(x)
        for a in range(dim):
            e = np.zeros(dim)
            e[a] = eps
            g[:, a] = (u(x + e) - u(x - e)) / (2 * eps)
        return g

    res = {}
    n_if = ls.normal(x_if)
    fp = np.einsum("nab,nb->na", ls.B_plus(x_if), fd_grad(ls.exact_plus, x_if))
    fm = np.einsum("nab,nb->na", ls.B_minus(x_if), fd_grad(ls.exact_minus, x_if))
    gn_fd = np.einsum("na,na->n", fp - fm, n_if)
    res["g_N"] = float(np.abs(gn_fd - ls.g_N(x_if)).max() / max(1.0, np.abs(gn_fd).max()))
    res["g_D"] = float(np.abs(ls.exact_plus(x_if) - ls.exact_minus(x_if) - ls.g_D(x_if)).max())

    lo, hi = spec.domain[:, 0], spec.domain[:, 1]
    x = lo + (hi - lo) * rng.random((n, dim))
    for side, u, Bf, f in ((1, ls.exact_plus, ls.B_plus, ls.f_plus), (-1, ls.exact_minus, ls.B_minus, ls.f_minus)):
        xs = x[np.abs(ls.phi(x)) > 1e-2]
        div = np.zeros(xs.shape[0])
        for a in range(dim):
            e = np.zeros(dim)
            e[a] = eps
            flux_p = np.einsum("nb,nb->n", Bf(xs + e)[:, a, :], fd_grad(u, xs + e))
            flux_m = np.einsum("nb,nb->n", Bf(xs - e)[:, a, :], fd_grad(u, xs - e))
            div += (flux_p - flux_m) / (2 * eps)
        scale = max(1.0, np.abs(div).max())
        res[f"f{'+' if side > 0 else '-'}"] = float(np.abs(-div - f(xs)).max() / scale)
    bad = {k: v for k, v in res.items() if v > rtol * (1e3 if k.startswith("f") else 1.0)}
    if bad:
        raise ValueError(f"{spec.name}: manufactured data inconsistent with finite differences: {bad}")
    return res
