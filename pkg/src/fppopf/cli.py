"""Command-line front end: ``fppopf solve | diagnose | validate | convert``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import SolveReport, validate_report
from .casefile import CaseError, convert_case, parse_case
from .conic import DEFAULT_TOL
from .driver import TRACE_HEADER, SolverOptions, TraceRecord, warm_start
from .pipeline import diagnose, exit_code, solve
from .problem import assemble

EXIT_INPUT_ERROR = 4
LOG_ENV = "FPPOPF_LOG"

log = logging.getLogger("fppopf")


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _positive(kind):
    def parse(text: str):
        val = kind(text)
        if val <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fppopf", description="AC optimal power flow by feasible point "
                                     "pursuit and successive convex approximation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("cases", nargs="+", type=Path, help="case files (.m or .json)")
        p.add_argument("--eps1", type=_positive(float), default=1e-11, help="FPP slack threshold")
        p.add_argument("--eps2", type=_positive(float), default=1e-5, help="SCA relative voltage-change threshold")
        p.add_argument("--eps-step", type=_positive(float), default=None,
                       help="FPP voltage-change threshold (defaults to --eps1)")
        p.add_argument("--max-iter", type=_positive(int), default=2000)
        p.add_argument("--tol-conic", type=_positive(float), default=DEFAULT_TOL, help="conic solver tolerance")
        p.add_argument("--warm-start", type=Path, default=None, metavar="REPORT",
                       help="start from the voltages of an earlier report")
        p.add_argument("--out", type=Path, default=None,
                       help="report JSON path (one case) or output directory (several cases)")
        p.add_argument("--trace", action="store_true", help="stream per-iteration records to stderr")
        p.add_argument("--jobs", type=_positive(int), default=1, help="cases solved in parallel")
        p.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSVs")
        p.add_argument("--dump-conic", type=Path, default=None, metavar="PATH",
                       help="write the first FPP subproblem as plain text (one case only)")

    p_solve = sub.add_parser("solve", help="FPP then SCA")
    run_flags(p_solve)
    p_diag = sub.add_parser("diagnose", help="per-constraint slack diagnosis")
    run_flags(p_diag)
    p_diag.add_argument("--top", type=_positive(int), default=10, help="slacks printed")

    p_val = sub.add_parser("validate", help="re-check a report against raw case data")
    p_val.add_argument("report", type=Path)
    p_val.add_argument("--case", type=Path, required=True)
    p_val.add_argument("--tol", type=_positive(float), default=1e-7)

    p_conv = sub.add_parser("convert", help="convert between the tabular .m and JSON case formats")
    p_conv.add_argument("source", type=Path)
    p_conv.add_argument("target", type=Path)
    return parser


def _options(args) -> SolverOptions:
    return SolverOptions(eps1=args.eps1, eps2=args.eps2, eps_step=args.eps_step,
                         max_iter=args.max_iter, conic_tol=args.tol_conic)


def _report_path(args, case: Path) -> Path | None:
    if args.out is None:
        return None
    if len(args.cases) == 1 and args.out.suffix == ".json":
        return args.out
    return args.out / f"{case.stem}.json"


def _print_trace(rec: TraceRecord) -> None:
    print(rec.line(), file=sys.stderr, flush=True)


def _run_case(command: str, case: Path, args) -> tuple[int, str]:
    """Solve or diagnose one case; returns (exit code, summary text)."""
    try:
        net, cost = parse_case(case)
        problem = assemble(net, cost)
        warm = None
        if args.warm_start is not None:
            warm = warm_start(SolveReport.load(args.warm_start), problem)
        opts = _options(args)
    except (CaseError, OSError, ValueError) as exc:
        return EXIT_INPUT_ERROR, f"{case}: {exc}"
    if args.dump_conic is not None:
        from .convexify import build_fpp_subproblem
        from .driver import initial_point

        z0 = warm if warm is not None else initial_point(problem, opts)
        with open(args.dump_conic, "w") as fh:
            build_fpp_subproblem(problem, z0).dump(fh)
    sink = _print_trace if args.trace else None
    run = solve if command == "solve" else diagnose
    report = run(net, cost, opts, warm=warm, sink=sink, problem=problem)
    lines = [_summary(case, report)]
    if command == "diagnose":
        lines += _slack_table(report, args.top)
    elif report.status == "infeasible":
        lines.append(f"  FPP stalled; run `fppopf diagnose {case}` to rank the violated constraints")
    path = _report_path(args, case)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        written = report.write(path)
        if args.figures:
            from .plotting import render_figures

            written += render_figures(report, path.with_suffix(""))
        lines += [f"  wrote {p}" for p in written]
    return exit_code(report), "\n".join(lines)


def _summary(case: Path, r: SolveReport) -> str:
    parts = [f"{case.name}: {r.status}", f"cost {r.cost.get('total', float('nan')):.6f}",
             f"max violation {r.max_violation:.2e} p.u.", f"mismatch {r.mismatch_mva:.2e} MVA",
             "iterations " + ",".join(f"{k}={v}" for k, v in r.iterations.items()),
             f"{r.timings.get('total', 0.0):.2f} s"]
    if r.eps1_effective is not None and r.options.get("eps1") != r.eps1_effective:
        parts.append(f"eps1 relaxed to {r.eps1_effective:.1e}")
    return "; ".join(parts)


def _slack_table(r: SolveReport, top: int) -> list[str]:
    if not r.slacks:
        return []
    width = max(len(c) for c, _ in r.slacks[:top])
    return [f"  {'constraint':<{width}}  slack"] + [f"  {c:<{width}}  {s:.6e}" for c, s in r.slacks[:top]]


def _cmd_run(args) -> int:
    if args.dump_conic is not None and len(args.cases) > 1:
        print("--dump-conic needs exactly one case", file=sys.stderr)
        return EXIT_INPUT_ERROR
    if args.out is not None and len(args.cases) > 1 and args.out.suffix == ".json":
        print("--out must be a directory when several cases are given", file=sys.stderr)
        return EXIT_INPUT_ERROR
    if args.trace:
        print(TRACE_HEADER, file=sys.stderr, flush=True)
    if args.jobs > 1 and len(args.cases) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_case, [args.command] * len(args.cases), args.cases,
                                    [args] * len(args.cases)))
    else:
        results = [_run_case(args.command, case, args) for case in args.cases]
    for _, text in results:
        print(text)
    return max(code for code, _ in results)


def _cmd_validate(args) -> int:
    try:
        report = SolveReport.load(args.report)
        net, _ = parse_case(args.case)
    except (CaseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    result = validate_report(report, net, args.tol)
    print(f"{args.report.name}: {'ok' if result.ok else 'FAILED'}; max violation {result.max_violation:.2e} p.u.; "
          f"mismatch {result.mismatch_mva:.2e} MVA")
    for msg in result.failures:
        print(f"  {msg}")
    return 0 if result.ok else 1


def _cmd_convert(args) -> int:
    try:
        convert_case(args.source, args.target)
    except (CaseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    print(f"wrote {args.target}")
    return 0


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which would collide with "infeasible"
        return EXIT_INPUT_ERROR if exc.code else 0
    if args.command in ("solve", "diagnose"):
        return _cmd_run(args)
    if args.command == "validate":
        return _cmd_validate(args)
    return _cmd_convert(args)


if __name__ == "__main__":
    sys.exit(main())
