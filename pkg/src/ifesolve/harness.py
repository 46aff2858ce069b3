"""Run orchestration: solve, measure errors and build convergence tables."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import LinearSystem, assemble_system, default_eta, export_matrix_market
from .errors import MissingExactSolution
from .local import face_moments
from .mesh import Mesh, MeshHierarchy, build_uniform_mesh_2d, build_uniform_mesh_3d, write_vtk
from .problems import ProblemSpec, get_problem
from .quadrature import QuadratureSet, simplex_rule
from .solvers import COARSE_MAX, PcgReport, estimate_cond2, solve_pcg

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _parse_list(text, cast=int):
    if isinstance(text, (list, tuple)):
        return tuple(cast(v) for v in text)
    return tuple(cast(v) for v in str(text).replace(" ", "").split(",") if v)


def _parse_optional_float(text):
    if text is None or str(text).lower() in ("", "none"):
        return None
    return float(text)


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    """Parameters of a solve or convergence study.

    ``M`` lists the subdivisions per axis of the uniform 2D meshes. In 3D the
    meshes are ``levels`` red refinements of a ``base_M``-cube Kuhn mesh.
    """

    problem: str = "example1"
    dim: int = 2
    M: tuple = (16, 32, 64)
    levels: tuple = (0, 1, 2)
    base_M: int = 5
    beta_plus: float = 1.0
    beta_minus: float = 1.0
    stab: str = "lifting"
    eta: float | None = None
    mu: float = 0.5
    tol: float = 1e-8
    inner_tol: float = 1e-8
    maxiter: int = 500
    ns: int = 1
    nu: int = 5
    coarse_max: int = COARSE_MAX
    cond: bool = False
    wall_time: bool = False
    out: str | None = None
    format: str = "md"

    def __post_init__(self):
        self.M = _parse_list(self.M)
        self.levels = _parse_list(self.levels)
        if self.stab not in ("lifting", "penalty"):
            raise ValueError(f"stab must be 'lifting' or 'penalty', got {self.stab!r}")
        if self.format not in ("csv", "md"):
            raise ValueError(f"format must be 'csv' or 'md', got {self.format!r}")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")

    @property
    def sizes(self) -> tuple:
        return self.M if self.dim == 2 else self.levels

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = val
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        out = {}
        for k, v in values.items():
            out[k] = _CASTS[k](v) if isinstance(v, str) else v
        return cls(**out)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


_CASTS = {
    "problem": str, "dim": int, "M": _parse_list, "levels": _parse_list, "base_M": int,
    "beta_plus": float, "beta_minus": float, "stab": str, "eta": _parse_optional_float,
    "mu": float, "tol": float, "inner_tol": float, "maxiter": int, "ns": int, "nu": int,
    "coarse_max": int, "cond": _parse_bool, "wall_time": _parse_bool,
    "out": lambda s: None if s.lower() == "none" else s, "format": str,
}


def load_problem(config: RunConfig) -> ProblemSpec:
    return get_problem(config.problem, config.beta_plus, config.beta_minus, dim=config.dim)


def _free_dofs(M: int, dim: int) -> int:
    if dim == 2:
        return 3 * M * M - 2 * M
    return 12 * M ** 3 - 6 * M * M  # 2D-face count minus boundary faces of the Kuhn mesh


def build_meshes(config: RunConfig, size: int, domain=None) -> list:
    """Nested meshes (coarse to fine) whose finest member realizes ``size``.

    In 2D the uniform mesh with ``M`` subdivisions is obtained by red
    refinement of the coarsest uniform mesh ``M / 2^k`` that still has more
    than ``coarse_max`` free dofs halved away, which yields the same
    triangulation.
    """
    if config.dim == 2:
        base = int(size)
        while base % 2 == 0 and _free_dofs(base, 2) > config.coarse_max:
            base //= 2
        n_ref = int(round(math.log2(size // base)))
        return MeshHierarchy.build(build_uniform_mesh_2d(base, domain), n_ref).levels
    return MeshHierarchy.build(build_uniform_mesh_3d(config.base_M, domain), int(size)).levels


def mesh_h(config: RunConfig, size: int, domain) -> float:
    width = max(b - a for a, b in domain)
    n = size if config.dim == 2 else config.base_M * 2 ** size
    return width / n


# ---------------------------------------------------------------------------
# discrete fields and errors
# ---------------------------------------------------------------------------

@dataclass
class DiscreteField:
    """An IFE function given by its face values (all dofs, boundary included).

    Non-interface elements carry the Crouzeix-Raviart function of their face
    values. Interface elements combine the local basis with the known jump
    correction, giving one affine polynomial per side.
    """

    system: LinearSystem
    values: np.ndarray

    @property
    def mesh(self) -> Mesh:
        return self.system.geometry.mesh

    def element_values(self, elements=None) -> np.ndarray:
        m = self.mesh
        el = np.arange(m.n_elements) if elements is None else np.asarray(elements)
        return self.values[self.system.dofmap.dof_of_face[m.element_faces[el]]]

    def interface_coefficients(self, T: int) -> tuple:
        """``(center, coef)`` with ``coef[s] = [value, grad...]`` at ``center`` for s = plus, minus."""
        spc = self.system.spaces[T]
        c = self.element_values([T])[0]
        coef = np.einsum("k,ksj->sj", c, spc.coefficients) + spc.known
        return spc.basis.basis[0].center, coef

    def centroid_values(self) -> np.ndarray:
        """Value at each element centroid (side of the centroid on interface elements)."""
        m = self.mesh
        out = self.element_values().mean(axis=1)
        prob = self.system.geometry.problem
        for T in self.system.spaces:
            center, coef = self.interface_coefficients(T)
            x = m.element_coords[T].mean(axis=0)
            s = 0 if prob.phi(x[None])[0] > 0 else 1
            out[T] = coef[s, 0] + (x - center) @ coef[s, 1:]
        return out


def compute_errors(solution: DiscreteField, problem=None, mesh: Mesh | None = None,
                   classification=None, order: int = 4) -> tuple:
    """L2 error and broken H1 seminorm error against the exact solution.

    Cut elements are integrated piecewise on both sides of the interface
    chord, each side against its own exact branch.
    """
    geo = solution.system.geometry
    prob = problem.levelset if isinstance(problem, ProblemSpec) else (problem or geo.problem)
    if not prob.has_exact:
        raise MissingExactSolution(f"problem {prob.name!r} has no exact solution")
    mesh = mesh if mesh is not None else geo.mesh
    cls = classification if classification is not None else geo.classification
    N = mesh.dim
    non = cls.noninterface_elements
    rule = simplex_rule(N, order)
    X = np.einsum("qi,eia->eqa", rule.bary, mesh.element_coords[non])
    Ue = solution.element_values(non)
    uh = Ue @ (1.0 - N * rule.bary).T
    guh = np.einsum("ek,eka->ea", Ue, -N * mesh.bary_gradients[non])
    vol = mesh.volumes[non]
    sides = cls.element_side[non]
    e0 = e1 = 0.0
    for s in (1, -1):
        sel = sides == s
        if not sel.any():
            continue
        x = X[sel].reshape(-1, N)
        u = prob.u(x, s).reshape(sel.sum(), -1)
        gu = prob.grad_u(x, s).reshape(sel.sum(), -1, N)
        e0 += np.einsum("q,eq->e", rule.weights, (u - uh[sel]) ** 2) @ vol[sel]
        e1 += np.einsum("q,eq->e", rule.weights, ((gu - guh[sel][:, None]) ** 2).sum(-1)) @ vol[sel]
    for T, spc in solution.system.spaces.items():
        center, coef = solution.interface_coefficients(T)
        for s, pieces in ((1, spc.cut.chord.plus), (-1, spc.cut.chord.minus)):
            if not pieces:
                continue
            q = QuadratureSet.from_simplices(pieces, order, N)
            k = 0 if s > 0 else 1
            v = coef[k, 0] + (q.points - center) @ coef[k, 1:]
            e0 += q.integrate((prob.u(q.points, s) - v) ** 2)
            e1 += q.integrate(((prob.grad_u(q.points, s) - coef[k, 1:]) ** 2).sum(axis=1))
    return float(np.sqrt(e0)), float(np.sqrt(e1))


def interpolant_field(system: LinearSystem, problem=None, order: int = 4) -> DiscreteField:
    """IFE interpolant of the exact solution: face moments plus the jump correction."""
    geo = system.geometry
    prob = problem.levelset if isinstance(problem, ProblemSpec) else (problem or geo.problem)
    if not prob.has_exact:
        raise MissingExactSolution(f"problem {prob.name!r} has no exact solution")
    mesh = geo.mesh
    N = mesh.dim
    rule = simplex_rule(N - 1, order)
    X = np.einsum("qi,fia->fqa", rule.bary, mesh.face_coords).reshape(-1, N)
    s = np.where(prob.phi(X) > 0, 1, -1)
    face_vals = prob.u_sided(X, s).reshape(mesh.n_faces, -1) @ rule.weights
    for T, spc in system.spaces.items():
        face_vals[mesh.element_faces[T]] = face_moments(spc.cut, prob.exact_plus, prob.exact_minus, order)
    return DiscreteField(system, face_vals[system.dofmap.face_of_dof])


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    config: RunConfig
    size: int
    meshes: list
    system: LinearSystem
    u_free: np.ndarray
    report: PcgReport
    field: DiscreteField
    wall_time: float

    @property
    def mesh(self) -> Mesh:
        return self.meshes[-1]


def solve_problem(config: RunConfig, size: int | None = None, spec: ProblemSpec | None = None) -> SolveResult:
    """Full pipeline on one mesh: geometry, local spaces, assembly, preconditioned CG."""
    spec = spec if spec is not None else load_problem(config)
    size = config.sizes[0] if size is None else size
    t0 = time.perf_counter()
    meshes = build_meshes(config, size, spec.domain)
    prob = spec.levelset
    eta = config.eta
    if config.stab == "penalty" and eta is None:
        eta = default_eta(prob, meshes[-1])
    system = assemble_system(meshes[-1], prob, stab=config.stab, eta=eta, mu=config.mu)
    u, rep = solve_pcg(system, meshes, prob, n_s=config.ns, tol=config.tol, inner_tol=config.inner_tol,
                       maxiter=config.maxiter, nu=config.nu, coarse_max=config.coarse_max)
    wall = time.perf_counter() - t0
    log.info("%s size %s: %d dofs, Iter1 %d, Iter2 %s, %.2fs", spec.name, size, u.size,
             rep.iter1, rep.iter2, wall)
    return SolveResult(config, size, meshes, system, u, rep, DiscreteField(system, system.full_vector(u)), wall)


# ---------------------------------------------------------------------------
# convergence tables
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    size: int
    h: float
    ndof: int
    L2_error: float
    L2_rate: float | None
    H1_error: float
    H1_rate: float | None
    iter1: int
    iter2: int | None
    cond_estimate: float | None = None
    wall_time: float | None = None


def rate(prev: float, curr: float) -> float | None:
    """Observed order for one uniform halving of h."""
    if prev is None or curr is None or prev <= 0 or curr <= 0:
        return None
    return math.log2(prev / curr)


def fill_rates(rows: list) -> list:
    for prev, row in zip(rows, rows[1:]):
        row.L2_rate = rate(prev.L2_error, row.L2_error)
        row.H1_rate = rate(prev.H1_error, row.H1_error)
    return rows


@dataclass
class StudyResult:
    config: RunConfig
    rows: list = field(default_factory=list)

    def to_csv(self, wall_time: bool | None = None) -> str:
        return rows_to_csv(self.rows, self.config.dim, self.config.wall_time if wall_time is None else wall_time)

    def to_markdown(self) -> str:
        return rows_to_markdown(self.rows, self.config.dim, self.config.wall_time)

    def render(self, fmt: str | None = None) -> str:
        return self.to_csv() if (fmt or self.config.format) == "csv" else self.to_markdown()

    def last_rates(self) -> tuple:
        r = self.rows[-1]
        return r.L2_rate, r.H1_rate


def convergence_study(config: RunConfig, spec: ProblemSpec | None = None) -> StudyResult:
    """Solve on every size of ``config`` and tabulate errors, rates and iterations."""
    if len(config.sizes) < 2:
        raise ValueError("a convergence study needs at least two mesh sizes")
    spec = spec if spec is not None else load_problem(config)
    rows = []
    for size in config.sizes:
        res = solve_problem(config, size, spec)
        l2, h1 = compute_errors(res.field, spec)
        cond = estimate_cond2(res.system.A)[0] if config.cond else None
        rows.append(ConvergenceRow(int(size), mesh_h(config, size, spec.domain), int(res.u_free.size),
                                   l2, None, h1, None, res.report.iter1, res.report.iter2, cond, res.wall_time))
    return StudyResult(config, fill_rates(rows))


def _fmt_rate(r):
    return "--" if r is None else f"{r:.2f}"


def _fmt_iter2(r):
    return "--" if r.iter2 is None else str(r.iter2)


def _columns(dim: int, wall_time: bool, with_cond: bool) -> list:
    cols = [("M" if dim == 2 else "level", lambda r: str(r.size)), ("ndof", lambda r: str(r.ndof)),
            ("L2_error", lambda r: f"{r.L2_error:.3e}"), ("L2_rate", lambda r: _fmt_rate(r.L2_rate)),
            ("H1_error", lambda r: f"{r.H1_error:.3e}"), ("H1_rate", lambda r: _fmt_rate(r.H1_rate)),
            ("Iter1", lambda r: str(r.iter1)), ("Iter2", _fmt_iter2)]
    if with_cond:
        cols.append(("cond", lambda r: "--" if r.cond_estimate is None else f"{r.cond_estimate:.3e}"))
    if wall_time:
        cols.append(("wall_time", lambda r: f"{r.wall_time:.2f}"))
    return cols


def rows_to_csv(rows: list, dim: int = 2, wall_time: bool = False) -> str:
    cols = _columns(dim, wall_time, any(r.cond_estimate is not None for r in rows))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([c[0] for c in cols])
    for r in rows:
        w.writerow([c[1](r) for c in cols])
    return buf.getvalue()


def rows_to_markdown(rows: list, dim: int = 2, wall_time: bool = False) -> str:
    cols = _columns(dim, wall_time, any(r.cond_estimate is not None for r in rows))
    cells = [[c[0] for c in cols]] + [[c[1](r) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["| " + " | ".join(v.rjust(w) for v, w in zip(row, widths)) + " |" for row in cells]
    lines.insert(1, "|" + "|".join("-" * (w + 1) + ":" for w in widths) + "|")
    return "\n".join(lines) + "\n"


def check_rates(study: StudyResult, l2_window=(1.8, 2.2), h1_window=(0.8, 1.2)) -> list:
    """Messages for every violated rate window on the last refinement step."""
    l2, h1 = study.last_rates()
    bad = []
    if l2 is None or not l2_window[0] <= l2 <= l2_window[1]:
        bad.append(f"L2 rate {_fmt_rate(l2)} outside [{l2_window[0]}, {l2_window[1]}]")
    if h1 is None or not h1_window[0] <= h1 <= h1_window[1]:
        bad.append(f"H1 rate {_fmt_rate(h1)} outside [{h1_window[0]}, {h1_window[1]}]")
    return bad


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_solution(result: SolveResult, out_dir, formats=("vtk", "mtx")) -> list:
    """Write the mesh with element data (VTK) and/or the system matrices (Matrix Market)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    stem = f"{result.config.problem}_{result.size}"
    if "vtk" in formats:
        geo = result.system.geometry
        cls = geo.classification
        side = cls.element_side.astype(float)
        side[cls.interface_elements] = 0.0
        p = out / f"{stem}.vtk"
        write_vtk(result.mesh, p, {"u_h": result.field.centroid_values(), "side": side})
        written.append(p)
    if "mtx" in formats:
        for name, M in (("A", result.system.A), ("A_std", result.system.A_std)):
            if M is None:
                continue
            p = out / f"{stem}_{name}.mtx"
            export_matrix_market(p, M, f"{name} for {result.config.problem}, size {result.size}")
            written.append(p)
        p = out / f"{stem}_rhs.txt"
        np.savetxt(p, result.system.rhs)
        written.append(p)
    return written


def config_summary(config: RunConfig) -> dict:
    return asdict(config)
