"""Command-line interface.

Subcommands: ``simulate`` one episode, ``grid`` the full evaluation grid,
``replay`` a recorded trace against the environment, ``report`` a grid
directory, and ``serve`` the human-play session service.

Exit codes: 0 success, 1 usage error, 2 run failure, 3 acceptance-check
failure (a qualitative check in the report came out FAIL).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .agent import AgentConfig, replay, run_episode
from .config import load_scalars
from .environment import LEVEL_IDS, Level, builtin_levels, load_level
from .harness import GridSpec, run_grid, report_from_dir
from .traces import read_trace, write_trace

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUN_FAILURE = 2
EXIT_CHECK_FAILURE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_level_arg(value: str) -> Level:
    if value in LEVEL_IDS:
        return {lvl.id: lvl for lvl in builtin_levels()}[value]
    return load_level(Path(value).read_text(encoding="utf-8"))


def _parse_k(value: str) -> float | None:
    if value == "dynamic":
        return None
    return float(value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="soclander")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one agent episode")
    sim.add_argument("--level", required=True, help="level file path or builtin id a..f")
    sim.add_argument("--k", default="dynamic", help="dynamic or a fixed gain like 0.5")
    sim.add_argument("--ccl-threshold", type=float, default=0.5)
    sim.add_argument("--no-ccl", action="store_true", help="SCL-only baseline agent")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", type=Path, default=None, help="directory for trace output")

    grid = sub.add_parser("grid", help="run the 60-run evaluation grid")
    grid.add_argument("--repeats", type=int, default=1)
    grid.add_argument("--seed", type=int, default=12345, help="base seed")
    grid.add_argument("--jobs", type=int, default=1)
    grid.add_argument("--out", type=Path, required=True)

    rep = sub.add_parser("replay", help="validate a trace against the environment")
    rep.add_argument("--trace", type=Path, required=True)
    rep.add_argument("--level", required=True, help="level file path or builtin id a..f")

    rpt = sub.add_parser("report", help="summarize a grid output directory")
    rpt.add_argument("--in", dest="in_dir", type=Path, required=True)

    srv = sub.add_parser("serve", help="run the session service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8765, help="NDJSON-over-TCP port")
    srv.add_argument("--ws-port", type=int, default=None, help="WebSocket port (off unless set)")
    srv.add_argument("--out", type=Path, default=Path("sessions"),
                     help="directory for exported session traces")
    return parser


def _cmd_simulate(args) -> int:
    level = _load_level_arg(args.level)
    config = AgentConfig(
        fixed_k=_parse_k(args.k),
        ccl_threshold=args.ccl_threshold,
        ccl_enabled=not args.no_ccl,
        seed=args.seed,
        scalars=load_scalars(),
    )
    trace = run_episode(level, config)
    print(f"level {level.id}: {trace.outcome} after {trace.steps} steps")
    if args.out is not None:
        path = Path(args.out) / f"{level.id}_seed{args.seed}.csv"
        write_trace(trace, path)
        print(f"trace written to {path}")
    return EXIT_OK if trace.outcome == "landed" else EXIT_OK


def _cmd_grid(args) -> int:
    spec = GridSpec(base_seed=args.seed, repeats=args.repeats, scalars=load_scalars())
    result = run_grid(spec, out_dir=args.out, jobs=args.jobs)
    print(result.summary, end="")
    if any(m.error for m in result.metrics):
        return EXIT_RUN_FAILURE
    return EXIT_OK


def _cmd_replay(args) -> int:
    level = _load_level_arg(args.level)
    trace = read_trace(args.trace)
    report = replay(trace, level)
    if report.ok:
        print(f"replay ok: {report.steps_checked} steps, zero divergences")
        return EXIT_OK
    first = report.first
    print(f"replay DIVERGED at step {first.step} ({first.column}): "
          f"recorded {first.recorded!r}, replayed {first.replayed!r}")
    return EXIT_RUN_FAILURE


def _cmd_report(args) -> int:
    try:
        result = report_from_dir(args.in_dir)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_RUN_FAILURE
    print(result.summary, end="")
    return EXIT_OK if result.all_checks_pass else EXIT_CHECK_FAILURE


def _cmd_serve(args) -> int:
    from .server import serve_forever

    serve_forever(host=args.host, tcp_port=args.port, ws_port=args.ws_port,
                  export_dir=args.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handlers = {
        "simulate": _cmd_simulate,
        "grid": _cmd_grid,
        "replay": _cmd_replay,
        "report": _cmd_report,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"soclander: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
