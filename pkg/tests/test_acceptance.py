"""Acceptance criteria at desk scale.  Each test prints one PASS/FAIL line."""
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dgtracer.harness.diagnostics import convergence_slope
from dgtracer.harness.runner import run_case, total_mixing_ratio
from dgtracer.harness.scheme import Scheme, SchemeConfig
from dgtracer.physics import apply_chemistry_step

pytestmark = pytest.mark.slow

SWEEP_N = (40, 60, 80)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")

    return emit


def _check(report, n, lines):
    ok = all(flag for flag, _ in lines)
    report(n, ok, "; ".join(text for _, text in lines))
    assert ok, "; ".join(text for flag, text in lines if not flag)


# ----------------------------------------------------------------------
def test_criterion_1_tracer_mass_conservation(report):
    configs = [
        SchemeConfig(case="A1-convergence", placement="co-located", order=1, ne=8, steps=100),
        SchemeConfig(case="A1-convergence", placement="co-located", order=0, ne=8, steps=100),
        SchemeConfig(case="A2-convergence", placement="staggered", order=1, nx=40, steps=200),
        SchemeConfig(case="A2-convergence", placement="staggered", order=0, nx=40, steps=200),
    ]
    lines = []
    for c in configs:
        r = run_case(c)
        d = r.series.max_delta
        lines.append((d <= 1e-11, f"{c.placement} k={c.order}: max drhoX={d:.2e} "
                                  f"({r.metadata['elapsed_seconds']:.0f} s)"))
    _check(report, 1, lines)


# ----------------------------------------------------------------------
def _deviation(res, m0=0.02):
    return float(np.max(np.abs(res.final.tracers["m"].values - m0)) / m0)


def test_criterion_2_consistency(report):
    lines = []
    co = run_case(SchemeConfig(case="A1-consistency", ne=8, steps=100))
    dev = _deviation(co)
    lines.append((dev <= 1e-10, f"co-located k=1 max|m-m0|/m0={dev:.2e}"))
    for order in (1, 0):
        base = dict(case="A2-consistency", placement="staggered", order=order, nx=40, steps=200)
        cons = _deviation(run_case(SchemeConfig(form="conservative", **base)))
        adv = _deviation(run_case(SchemeConfig(form="advective", **base)))
        ratio = cons / adv
        lines.append((ratio <= 1e-3, f"staggered k={order}: conservative {cons:.2e} / advective {adv:.2e} "
                                     f"= {ratio:.2e}"))
    _check(report, 2, lines)


# ----------------------------------------------------------------------
_SWEEPS = {}


def _sweep(order, form):
    key = (order, form)
    if key not in _SWEEPS:
        rows = []
        for n in SWEEP_N:
            r = run_case(SchemeConfig(case="A2-convergence", placement="staggered", order=order, form=form, nx=n))
            rows.append((r.metadata["mesh"]["dx"], r.l2_error))
        _SWEEPS[key] = rows
    return _SWEEPS[key]


def test_criterion_3_convergence(report):
    lines = []
    for order, need in ((0, 1.7), (1, 1.9)):
        cons = _sweep(order, "conservative")
        adv = _sweep(order, "advective")
        slope = convergence_slope(*zip(*cons))
        errs = ", ".join(f"{e:.3e}" for _, e in cons)
        lines.append((slope >= need, f"k={order}: slope {slope:.2f} (need >= {need}; L2 {errs})"))
        rel = max(abs(a[1] - c[1]) / c[1] for a, c in zip(adv, cons))
        lines.append((rel <= 0.1, f"k={order}: advective vs conservative L2 differ by {100 * rel:.1f}%"))
    _check(report, 3, lines)


def test_reference_return_halving_k0(report):
    """Halving dx (N=40 -> 80) cuts the k=0 conservative L2 error at least 3x."""
    cons = _sweep(0, "conservative")
    gain = cons[0][1] / cons[-1][1]
    detail = f"k=0 error ratio N=40/N=80 = {gain:.2f} (need >= 3)"
    report("3 (reference return)", gain >= 3.0, detail)
    assert gain >= 3.0, detail


# ----------------------------------------------------------------------
def test_criterion_4_mmr_limiter(report):
    r = run_case(SchemeConfig(case="A3-slotted", ne=8, steps=200, limiter="mmr"))
    m_min = float(r.series.column("m_min").min())
    d = r.series.max_delta
    _check(report, 4, [(m_min >= -1e-14, f"global min m over all steps {m_min:.2e}"),
                       (d <= 1e-11, f"max drhoX={d:.2e}"),
                       (True, f"limited cells {r.metadata['total_limited_cells']}")])


# ----------------------------------------------------------------------
def test_criterion_5_terminator(report):
    cfg = SchemeConfig(case="A4-terminator", ne=8, dt=900.0, steps=192, limiter="mmr")
    r = run_case(cfg)
    drift = r.series.max_delta
    lo = float(r.series.column("m_min").min())
    x, x2 = r.final.tracers["X"], r.final.tracers["X2"]
    k1f, k2f = Scheme(cfg).chemistry
    # chemistry alone from the final transported state, node by node
    xn, x2n = apply_chemistry_step(x, x2, cfg.dt, k1f.values, k2f.values)
    inv = float(np.max(np.abs((xn.values + 2 * x2n.values) - (x.values + 2 * x2.values))))
    xt = total_mixing_ratio(r.final.tracers)
    _check(report, 5, [(drift <= 1e-11, f"relative drift of int rho X_T {drift:.2e}"),
                       (lo >= -1e-14, f"min(X, X2) over all steps {lo:.2e}"),
                       (inv <= 1e-16, f"chemistry-only X_T change {inv:.1e}"),
                       (True, f"final X_T range [{xt.values.min():.4e}, {xt.values.max():.4e}]")])


# ----------------------------------------------------------------------
def test_criterion_6_operator_property_suites(report):
    here = Path(__file__).parent
    files = [str(here / f"test_{m}.py") for m in ("remap", "transport", "limiter", "physics")]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
                          capture_output=True, text=True, cwd=here.parent)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    _check(report, 6, [(proc.returncode == 0, f"remap/transport/limiter/physics suites: {summary}")])
