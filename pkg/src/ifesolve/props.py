"""Property suites: exact identities the discrete method must satisfy."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .assembly import assemble_system, interface_face_data, _coefficient_integrals, lifting_solve
from .geometry import analyze
from .local import (build_correction, build_ife_basis, compute_cT, cT_lower_bound, functional_J,
                    functional_matrix, solve_ife_basis)
from .mesh import build_uniform_mesh_2d, build_uniform_mesh_3d
from .problems import continuous_problem, example1, example3d, patch_problem

log = logging.getLogger(__name__)


@dataclass
class PropertyResult:
    name: str
    value: float
    limit: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.limit)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.value:.3e} (limit {self.limit:.1e}) {self.detail}".rstrip()


def _interface_cases(quick: bool = False):
    M = 16 if quick else 32
    cases = [(example1(1000.0, 1.0), build_uniform_mesh_2d(M, [(-1, 1), (-1, 1)])),
             (example1(1.0, 1000.0), build_uniform_mesh_2d(M, [(-1, 1), (-1, 1)]))]
    cases.append((example3d(10.0, 1.0), build_uniform_mesh_3d(5, [(-1, 1)] * 3)))
    return [(spec, analyze(mesh, spec.levelset)) for spec, mesh in cases]


def projected_gradient_deviation(geo) -> float:
    """Max deviation of the gradient of the projected one-sided distance from ``(|T+|/|T|) n``."""
    worst = 0.0
    for T, cut in geo.cuts.items():
        b = build_ife_basis(T, cut.frame, cut)
        worst = max(worst, float(np.abs(b.pi_chi_d.grad[0] - cut.vol_plus / cut.volume * cut.frame.n_bar).max()))
    return worst


def sliding_planes(n_steps: int = 1000, M: int = 2):
    """Planar interfaces sliding across a coarse mesh, passing arbitrarily close to vertices."""
    normal = np.array([0.6, 0.8])
    mesh = build_uniform_mesh_2d(M)
    proj = mesh.vertices @ normal
    offsets = np.linspace(proj.min(), proj.max(), n_steps + 2)[1:-1]
    for c in offsets:
        yield mesh, patch_problem(normal, c)


def check_gradient_identity(quick: bool = False) -> PropertyResult:
    worst = max(projected_gradient_deviation(geo) for _, geo in _interface_cases(quick))
    steps = 100 if quick else 1000
    frac = 1.0
    for mesh, spec in sliding_planes(steps):
        geo = analyze(mesh, spec.levelset)
        worst = max(worst, projected_gradient_deviation(geo))
        for cut in geo.cuts.values():
            r = cut.vol_plus / cut.volume
            frac = min(frac, r, 1 - r)
    return PropertyResult("projected distance gradient identity", worst, 1e-12,
                          f"({steps}-step sliding sweep, smallest cut fraction {frac:.1e})")


def check_unisolvence(quick: bool = False) -> PropertyResult:
    worst = 0.0
    for _, geo in _interface_cases(quick):
        for T, cut in geo.cuts.items():
            b = build_ife_basis(T, cut.frame, cut)
            dense, _ = solve_ife_basis(cut.frame, cut)
            scale = max(1.0, max(np.abs(x.as_vector()).max() for x in dense))
            worst = max(worst, max(np.abs(x.as_vector() - y.as_vector()).max() for x, y in zip(dense, b.basis)) / scale)
    return PropertyResult("closed-form basis equals dense dual basis", worst, 1e-9)


def _relative_residual(L, v, target):
    """``|L v - target|`` divided by the magnitude of the terms in each row."""
    scale = np.maximum(np.abs(L) @ np.abs(v), 1.0)
    return float(np.max(np.abs(L @ v - target) / scale))


def check_kronecker(quick: bool = False) -> PropertyResult:
    worst = 0.0
    for spec, geo in _interface_cases(quick):
        for T, cut in geo.cuts.items():
            fr = cut.frame
            N = fr.dim
            b = build_ife_basis(T, fr, cut)
            c = build_correction(T, fr, cut, b, spec.levelset)
            L = functional_matrix(fr, cut)
            for k, phi in enumerate(b.basis):
                worst = max(worst, _relative_residual(L, phi.as_vector(), np.eye(2 * N + 2)[N + 1 + k]))
            for i, p in enumerate(c.psi):
                worst = max(worst, _relative_residual(L, p.as_vector(), np.eye(2 * N + 2)[i]))
    return PropertyResult("Kronecker property of basis and jump functions", worst, 1e-10)


def check_cT_bound(n_samples: int = 10000, seed: int = 0) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_samples):
        N = int(rng.integers(2, 4))
        mats = []
        for _ in range(2):
            Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
            ev = 10.0 ** rng.uniform(-3, 3, N)
            mats.append(Q @ np.diag(ev) @ Q.T)
        n = rng.standard_normal(N)
        n /= np.linalg.norm(n)
        r = rng.uniform()
        frame = SimpleNamespace(n_bar=n, B_T_plus=mats[0], B_T_minus=mats[1])
        cut = SimpleNamespace(vol_plus=r, volume=1.0)
        worst = min(worst, compute_cT(frame, cut) - cT_lower_bound(frame))
    # report the violation (zero when the bound holds)
    return PropertyResult("c_T lower bound on random SPD pairs", max(0.0, -worst), 1e-12,
                          f"({n_samples} samples, min margin {worst:.2e})")


def check_jump_correction(quick: bool = False) -> PropertyResult:
    worst = 0.0
    for spec, geo in _interface_cases(quick):
        P = spec.levelset
        for T, cut in geo.cuts.items():
            fr = cut.frame
            N = fr.dim
            b = build_ife_basis(T, fr, cut)
            c = build_correction(T, fr, cut, b, P)
            target = np.concatenate([np.asarray(P.g_D(fr.x_tilde_pts[:N])).reshape(-1), [fr.avg(P.g_N)]])
            got = np.array([functional_J(fr, c.xi_J, i) for i in range(N + 1)])
            scale = np.maximum(1.0, np.abs(target))
            worst = max(worst, float(np.max(np.abs(got - target) / scale)))
    return PropertyResult("jump correction reproduces the jump data", worst, 1e-10)


def check_coercivity(n_vectors: int = 100, M: int = 16, seed: int = 0) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for bp, bm in ((1000.0, 1.0), (1.0, 1000.0), (2.0, 1.0)):
        S = assemble_system(build_uniform_mesh_2d(M, [(-1, 1), (-1, 1)]), example1(bp, bm).levelset)
        Aa = S.parts["a"]
        V = rng.standard_normal((S.A.shape[0], n_vectors))
        ratio = np.einsum("ij,ij->j", V, S.A @ V) / np.einsum("ij,ij->j", V, Aa @ V)
        worst = min(worst, float(ratio.min()))
    return PropertyResult("energy bounded below by half the broken energy", max(0.0, 0.5 - worst), 0.0,
                          f"(min ratio {worst:.3f})")


def check_lifting(M: int = 16, seed: int = 0) -> PropertyResult:
    rng = np.random.default_rng(seed)
    spec = example1(1000.0, 1.0)
    S = assemble_system(build_uniform_mesh_2d(M, [(-1, 1), (-1, 1)]), spec.levelset)
    geo = S.geometry
    K = _coefficient_integrals(geo)
    faces = np.unique(np.concatenate([geo.mesh.element_faces[T] for T in geo.cuts]))
    worst = 0.0
    for f in faces:
        T1, T2 = geo.mesh.face_elements[f]
        if T1 not in geo.cuts or (T2 >= 0 and T2 not in geo.cuts):
            continue
        fd = interface_face_data(geo, S.spaces, S.dofmap, K, int(f))
        jumps = rng.standard_normal((fd.weights.size, 3))
        X = lifting_solve(fd, jumps)
        rhs = fd.qflux.T @ (fd.weights[:, None] * jumps)
        res = np.abs(fd.gram @ X - rhs).max() / max(np.abs(rhs).max(), 1e-300)
        worst = max(worst, float(res))
    return PropertyResult("lifting satisfies its defining identity", worst, 1e-10)


def check_reduction(M: int = 16) -> tuple:
    spec = continuous_problem(2)
    S = assemble_system(build_uniform_mesh_2d(M, spec.domain), spec.levelset)
    diff = abs(S.A - S.A_std).max() / abs(S.A_std).max()
    u = spsolve(sp.csc_matrix(S.A), S.rhs)
    u_std = spsolve(sp.csc_matrix(S.A_std), S.rhs)
    du = np.abs(u - u_std).max() / max(np.abs(u_std).max(), 1e-300)
    return (PropertyResult("continuous coefficient: IFE matrix equals standard matrix", float(diff), 1e-12),
            PropertyResult("continuous coefficient: identical solutions", float(du), 1e-12))


def check_patch(M: int = 16) -> PropertyResult:
    from .harness import DiscreteField, compute_errors
    spec = patch_problem()
    S = assemble_system(build_uniform_mesh_2d(M, spec.domain), spec.levelset)
    u = spsolve(sp.csc_matrix(S.A), S.rhs)
    l2, h1 = compute_errors(DiscreteField(S, S.full_vector(u)), spec)
    return PropertyResult("piecewise affine solution reproduced", max(l2, h1), 1e-9)


SUITES = {
    "identity": check_gradient_identity,
    "unisolvence": check_unisolvence,
    "kronecker": check_kronecker,
    "cT": lambda quick=False: check_cT_bound(1000 if quick else 10000),
    "correction": check_jump_correction,
    "coercivity": lambda quick=False: check_coercivity(),
    "lifting": lambda quick=False: check_lifting(),
    "reduction": lambda quick=False: check_reduction(),
    "patch": lambda quick=False: check_patch(),
}


def run_properties(names=None, quick: bool = False) -> list:
    """Run the named suites (all by default) and return a flat list of results."""
    out = []
    for name in names or SUITES:
        res = SUITES[name](quick=quick)
        out.extend(res if isinstance(res, tuple) else [res])
    return out
