"""Acceptance criteria. Each test records one PASS/FAIL line, printed at the end of the run.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from ifesolve.harness import RunConfig, build_meshes, convergence_study, load_problem
from ifesolve.assembly import assemble_system
from ifesolve.props import run_properties
from ifesolve.solvers import InnerSolver, PreconditionerB, SmootherR, build_multigrid, estimate_cond2

REPORT = []

SIZES = (16, 32, 64, 128, 256)

# published reference errors (L2, H1) for M = 16 ... 256
REFERENCE = {
    (1000.0, 1.0): [(3.736e-02, 6.806e-01), (8.981e-03, 3.538e-01), (2.252e-03, 1.701e-01),
                    (5.393e-04, 9.572e-02), (1.307e-04, 4.566e-02)],
    (1.0, 1000.0): [(2.879e-02, 6.076e-01), (7.542e-03, 3.161e-01), (1.886e-03, 1.586e-01),
                    (4.864e-04, 8.014e-02), (1.229e-04, 4.020e-02)],
    (2.0, 1.0): [(3.092e-02, 6.166e-01), (7.950e-03, 3.156e-01), (1.977e-03, 1.595e-01),
                 (5.011e-04, 8.032e-02), (1.253e-04, 4.031e-02)],
}

_STUDIES = {}


def study(bp, bm, stab="lifting"):
    key = (bp, bm, stab)
    if key not in _STUDIES:
        t0 = time.perf_counter()
        _STUDIES[key] = convergence_study(RunConfig(M=SIZES, beta_plus=bp, beta_minus=bm, stab=stab))
        _STUDIES[key].elapsed = time.perf_counter() - t0
    return _STUDIES[key]


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    REPORT.append(line)
    print(line)
    return ok


def _convergence_check(bp, bm):
    st = study(bp, bm)
    last = st.rows[-1]
    msgs = []
    ok = 1.8 <= last.L2_rate <= 2.2 and 0.8 <= last.H1_rate <= 1.2
    msgs.append(f"rates {last.L2_rate:.2f}/{last.H1_rate:.2f}")
    worst = 1.0
    for row, (l2, h1) in zip(st.rows, REFERENCE[(bp, bm)]):
        for got, ref in ((row.L2_error, l2), (row.H1_error, h1)):
            worst = max(worst, got / ref, ref / got)
    ok &= worst <= 2.0
    msgs.append(f"worst ratio to reference {worst:.2f}")
    msgs.append(f"sweep {st.elapsed:.0f}s")
    return ok, f"({bp:g},{bm:g}) " + ", ".join(msgs)


def test_criterion_1_convergence_high_plus():
    ok, msg = _convergence_check(1000.0, 1.0)
    assert record(1, ok and study(1000.0, 1.0).elapsed < 300, msg)


@pytest.mark.parametrize("contrast", [(1.0, 1000.0), (2.0, 1.0)])
def test_criterion_2_convergence_other_contrasts(contrast):
    ok, msg = _convergence_check(*contrast)
    assert record(2, ok, msg)


def test_criterion_3_iteration_counts():
    it = {c: [r.iter1 for r in study(*c).rows] for c in REFERENCE}
    worst = max(max(v) for v in it.values())
    diff = max(abs(a - b) for c in ((1000.0, 1.0), (1.0, 1000.0)) for a, b in zip(it[c], it[(2.0, 1.0)]))
    ok = worst <= 10 and diff <= 4
    assert record(3, ok, f"max Iter1 {worst}, max contrast difference {diff}, "
                         + "; ".join(f"({c[0]:g},{c[1]:g}): {v}" for c, v in it.items()))


def test_criterion_4_condition_scaling():
    hs, conds = [], []
    for M in (16, 32, 64):
        c = RunConfig(M=(M,), beta_plus=2.0, beta_minus=1.0)
        spec = load_problem(c)
        S = assemble_system(build_meshes(c, M, spec.domain)[-1], spec.levelset, with_std=False)
        cond, _, _, converged = estimate_cond2(S.A)
        assert converged
        hs.append(2.0 / M)
        conds.append(cond)
    slope = np.polyfit(np.log(hs), np.log(conds), 1)[0]
    ok = -2.5 <= slope <= -1.5
    assert record(4, ok, f"log-log slope {slope:.2f}, cond {', '.join(f'{c:.3e}' for c in conds)}")


@pytest.mark.parametrize("contrast", [(1.0, 1.0), (10.0, 1.0), (1000.0, 1.0)])
def test_criterion_5_three_dimensional(contrast):
    c = RunConfig(dim=3, problem="example3d", levels=(0, 1, 2), beta_plus=contrast[0], beta_minus=contrast[1])
    st = convergence_study(c)
    rate = st.rows[-1].L2_rate
    iters = [r.iter1 for r in st.rows]
    ok = 1.7 <= rate <= 2.3 and max(iters) <= 10
    assert record(5, ok, f"({contrast[0]:g},{contrast[1]:g}) L2 rate {rate:.2f}, Iter1 {iters}")


def test_criterion_6_property_suite():
    results = run_properties()
    failed = [r.name for r in results if not r.passed]
    for r in results:
        print("   ", r.line())
    assert record(6, not failed, f"{len(results) - len(failed)}/{len(results)} properties hold"
                  + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_criterion_7_preconditioner_and_stabilization():
    rng = np.random.default_rng(7)
    c = RunConfig(M=(32,), beta_plus=1000.0)
    spec = load_problem(c)
    meshes = build_meshes(c, 32, spec.domain)
    S = assemble_system(meshes[-1], spec.levelset)
    mg = build_multigrid(meshes, spec.levelset, finest=(S.A_std, S.dofmap))
    inner = InnerSolver(mg, tol=1e-14, maxiter=200)
    B = PreconditionerB(S.A, SmootherR(S.A, n_near=S.dofmap.n_near), inner, n_s=1)
    x, y = rng.standard_normal((2, S.A.shape[0]))
    bx, by = B(x) @ y, x @ B(y)
    sym = abs(bx - by) / abs(bx)
    B0 = PreconditionerB(S.A_std, SmootherR(S.A_std, n_near=S.dofmap.n_near), inner, n_s=0)
    g = rng.standard_normal(S.A.shape[0])
    ref = inner(g)
    red = np.abs(B0(g) - ref).max() / np.abs(ref).max()

    worst_change, rates_ok = 0.0, True
    for contrast in REFERENCE:
        a, b = study(*contrast), study(*contrast, stab="penalty")
        ra, rb = a.rows[SIZES.index(64)], b.rows[SIZES.index(64)]
        worst_change = max(worst_change, abs(rb.L2_error / ra.L2_error - 1), abs(rb.H1_error / ra.H1_error - 1))
        last = b.rows[-1]
        rates_ok &= 1.8 <= last.L2_rate <= 2.2 and 0.8 <= last.H1_rate <= 1.2
    ok = sym <= 1e-10 and red <= 1e-12 and worst_change < 0.2 and rates_ok
    assert record(7, ok, f"B symmetry {sym:.1e}, n_s=0 reduction {red:.1e}, "
                         f"penalty vs lifting change at M=64 {100 * worst_change:.1f}%, penalty rates in window {rates_ok}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
