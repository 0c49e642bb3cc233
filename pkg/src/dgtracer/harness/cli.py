"""Command line entry point: ``dgtracer run|sweep|check``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .cases import CASES
from .scheme import FORMS, PLACEMENTS, SchemeConfig
from .runner import run_case, run_name, sweep

log = logging.getLogger("dgtracer")

# flag name -> SchemeConfig field
_FLAGS = ("case", "placement", "order", "form", "limiter", "ne", "nx", "nz", "dt", "steps", "solver")


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with SchemeConfig keys; flags override it")
    p.add_argument("--case", choices=CASES)
    p.add_argument("--placement", choices=PLACEMENTS)
    p.add_argument("--order", type=int, choices=(0, 1))
    p.add_argument("--form", choices=FORMS)
    p.add_argument("--limiter", choices=("none", "mmr", "baseline"))
    p.add_argument("--ne", type=int, help="cubed-sphere cells per panel edge")
    p.add_argument("--nx", type=int, help="slice columns (and layers unless --nz)")
    p.add_argument("--nz", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--solver", choices=("direct", "cg"))
    p.add_argument("--out-dir", default="runs")


def config_from_args(args) -> SchemeConfig:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d.update(json.load(fh))
    for name in _FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    return SchemeConfig.from_dict(d)


def cmd_run(args):
    cfg = config_from_args(args)
    every = max(1, cfg.steps // 10)

    def progress(row):
        if row["step"] % every == 0 or row["step"] == cfg.steps:
            log.info("step %d t=%.6g drhoX=%.3e m in [%.4g, %.4g]", row["step"], row["t"],
                     row["delta_rhoX_rel"], row["m_min"], row["m_max"])

    res = run_case(cfg, args.out_dir, progress)
    print(f"{run_name(cfg)}: max drhoX={res.series.max_delta:.3e} final L2={res.l2_error:.6e} "
          f"({res.metadata['elapsed_seconds']:.1f} s) -> {args.out_dir}")
    return 0


def cmd_sweep(args):
    cfg = config_from_args(args)
    summary = sweep(cfg, args.resolutions, args.out_dir,
                    lambda r: log.info("n=%d dx=%.4g L2=%.6e", r["n"], r["dx"], r["l2_error"]))
    for r in summary["runs"]:
        print(f"n={r['n']:4d} dx={r['dx']:.6g} L2={r['l2_error']:.6e} max drhoX={r['max_delta_rhoX_rel']:.3e}")
    if summary["slope"] is not None:
        print(f"slope {summary['slope']:.3f}")
    return 0


# ----------------------------------------------------------------------
# quick self-checks
# ----------------------------------------------------------------------
def _check_ssprk3():
    from ..transport import ssprk3_step

    y = ssprk3_step([np.array([1.0])], lambda s, t: [-s[0]], 0.0, 0.1)[0][0]
    return abs(y - 0.9048333333333334) < 1e-12, f"y(0.1)={y:.10f}"


def _check_chemistry():
    from ..physics import chemistry_tendency

    rng = np.random.default_rng(0)
    x, x2, k1 = rng.uniform(0, 4e-6, 1000), rng.uniform(0, 2e-6, 1000), rng.uniform(0, 1, 1000)
    f = chemistry_tendency(x, x2, k1, np.ones(1000), 900.0)
    drift = np.max(np.abs((x + 2 * 900.0 * f) + 2 * (x2 - 900.0 * f) - (x + 2 * x2)))
    return drift <= 1e-16 and np.all(x + 1800.0 * f >= 0), f"X_T drift {drift:.1e}"


def _check_run(**kw):
    res = run_case(SchemeConfig(**kw))
    return res.series.max_delta <= 1e-11, f"max drhoX={res.series.max_delta:.1e}"


def _check_consistency():
    res = run_case(SchemeConfig(case="A1-consistency", ne=4, steps=10))
    m = res.final.tracers["m"].values
    dev = float(np.max(np.abs(m - 0.02)) / 0.02)
    return dev <= 1e-10, f"max |m-0.02|/0.02={dev:.1e}"


def _check_mmr():
    res = run_case(SchemeConfig(case="A3-slotted", ne=4, limiter="mmr", steps=10))
    lo = float(res.series.column("m_min").min())
    return lo >= -1e-14 and res.series.max_delta <= 1e-11, f"min m={lo:.1e}"


CHECKS = {
    "ssprk3 ODE value": _check_ssprk3,
    "chemistry X_T invariance": _check_chemistry,
    "conservation co-located k=1": lambda: _check_run(case="A1-convergence", ne=4, steps=10),
    "conservation co-located k=0": lambda: _check_run(case="A1-convergence", order=0, ne=4, steps=10),
    "conservation staggered k=1": lambda: _check_run(case="A2-convergence", placement="staggered", nx=8, steps=10),
    "conservation staggered k=0": lambda: _check_run(case="A2-convergence", placement="staggered", order=0, nx=8,
                                                     steps=10),
    "consistency co-located k=1": _check_consistency,
    "mmr non-negativity": _check_mmr,
}


def cmd_check(args):
    failed = 0
    for name, fn in CHECKS.items():
        try:
            ok, info = fn()
        except Exception as exc:  # report and keep going
            ok, info = False, f"{type(exc).__name__}: {exc}"
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {info}")
    print(f"{len(CHECKS) - failed}/{len(CHECKS)} checks passed")
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="dgtracer", description="DG tracer transport experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one case")
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="resolution sweep with a fitted convergence slope")
    _add_config_flags(s)
    s.add_argument("--resolutions", type=int, nargs="+", required=True, help="ne or nx values")
    s.set_defaults(func=cmd_sweep)
    c = sub.add_parser("check", help="quick property checks")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
