"""Command-line entry point.

Subcommands:

* ``run <scenario-file>``: run the flow and verification suite, writing
  history.csv, snapshots, report.json, and summary.txt.
* ``verify <trace-dir>``: re-check invariants from a written history.csv.
* ``report <trace-dir>``: print the stored summary / report.
* ``oracle gradcheck <scenario-file>``: compare the curvature-formula
  gradient against the exact discrete gradient on the initial metric.

Environment overrides: ``L2FLOW_OUTPUT_DIR`` replaces the scenario's
output directory, ``L2FLOW_THREADS`` caps BLAS/compiler threads.

Exit codes: 0 pass, 1 check failure, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_PASS = 0
EXIT_CHECK_FAIL = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3


def _apply_thread_override():
    threads = os.environ.get("L2FLOW_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "XLA_FLAGS"):
            if var == "XLA_FLAGS":
                os.environ.setdefault(
                    var,
                    f"--xla_cpu_multi_thread_eigen=false "
                    f"intra_op_parallelism_threads={threads}",
                )
            else:
                os.environ.setdefault(var, threads)


def _output_dir(scenario):
    return os.environ.get("L2FLOW_OUTPUT_DIR", scenario.output_dir)


def _cmd_run(args) -> int:
    from . import harness
    from .flow import FlowAbort
    from .metric import PositivityError
    try:
        scenario = harness.parse_scenario(args.scenario)
    except harness.ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = harness.run_scenario(scenario, outdir=_output_dir(scenario))
    except harness.ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowAbort, PositivityError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        point = getattr(exc, "point", None) or getattr(exc, "index", None)
        if point is not None:
            print(f"  at grid point {point}", file=sys.stderr)
        return EXIT_ABORT
    print(report.summary(), end="")
    return EXIT_PASS if report.passed else EXIT_CHECK_FAIL


def _cmd_verify(args) -> int:
    from . import serialization as ser
    import numpy as np
    path = Path(args.trace_dir) / "history.csv"
    if not path.exists():
        print(f"no history.csv in {args.trace_dir}", file=sys.stderr)
        return EXIT_CONFIG
    rows = ser.read_history(path)
    if len(rows) < 2:
        print("history too short to verify", file=sys.stderr)
        return EXIT_CONFIG
    F = np.asarray([r["F"] for r in rows])
    vol = np.asarray([r["vol"] for r in rows])
    t = np.asarray([r["t"] for r in rows])
    gsq = np.asarray([r["grad_l2_sq"] for r in rows])
    checks = []
    checks.append(("energy monotone",
                   float(np.max(np.diff(F))) <= 1e-12 + 1e-12 * abs(F[0]),
                   float(np.max(np.diff(F)))))
    drift = float(np.max(np.abs(vol - vol[0])) / vol[0])
    checks.append(("volume invariance", drift <= 1e-3, drift))
    integral = np.concatenate(
        [[0.0], np.cumsum(0.5 * (gsq[1:] + gsq[:-1]) * np.diff(t))]
    )
    drop = F[0] - F
    denom = np.maximum(drop, 1e-12)
    resid = float(np.max(np.abs(drop - integral)[1:] / denom[1:]))
    checks.append(("energy identity", resid <= 0.02, resid))
    ok = True
    for name, passed, value in checks:
        print(f"{'PASS' if passed else 'FAIL':4s} {name:18s} {value:.6g}")
        ok = ok and passed
    return EXIT_PASS if ok else EXIT_CHECK_FAIL


def _cmd_report(args) -> int:
    d = Path(args.trace_dir)
    summary = d / "summary.txt"
    report = d / "report.json"
    if summary.exists():
        print(summary.read_text(), end="")
    if report.exists():
        payload = json.loads(report.read_text())
        if not summary.exists():
            print(json.dumps(payload, indent=2))
        return EXIT_PASS if payload.get("passed", False) else EXIT_CHECK_FAIL
    if not summary.exists():
        print(f"no report artifacts in {args.trace_dir}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_PASS


def _cmd_oracle(args) -> int:
    from . import harness
    if args.oracle_cmd != "gradcheck":
        print(f"unknown oracle subcommand {args.oracle_cmd!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scenario = harness.parse_scenario(args.scenario)
    except harness.ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = harness.gradcheck(scenario)
    print(f"relative error : {out['relative_error']:.6e}")
    print(f"tolerance      : {out['tolerance']:.6e}")
    print(f"gradient norm  : {out['grad_norm']:.6e}")
    print("PASS" if out["passed"] else "FAIL")
    return EXIT_PASS if out["passed"] else EXIT_CHECK_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="l2flow",
        description="Curvature-energy gradient flow laboratory on the 4-torus",
    )
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and its checks")
    run.add_argument("scenario", help="key-value scenario file")
    run.set_defaults(fn=_cmd_run)
    ver = sub.add_parser("verify", help="re-check invariants from history.csv")
    ver.add_argument("trace_dir")
    ver.set_defaults(fn=_cmd_verify)
    rep = sub.add_parser("report", help="print a stored run report")
    rep.add_argument("trace_dir")
    rep.set_defaults(fn=_cmd_report)
    orc = sub.add_parser("oracle", help="standalone numerical oracles")
    orc.add_argument("oracle_cmd", choices=["gradcheck"])
    orc.add_argument("scenario")
    orc.set_defaults(fn=_cmd_oracle)
    return p


def main(argv=None) -> int:
    _apply_thread_override()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize others
        return EXIT_CONFIG if exc.code not in (0,) else 0
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
