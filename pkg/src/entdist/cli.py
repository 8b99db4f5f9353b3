"""Command-line client.

Each subcommand builds the same request model the HTTP service accepts and
either calls the service layer in-process (default) or POSTs it to a running
server (``--server http://host:port``). Outputs land in ``--out`` only.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exceptions import EntdistError
from .service import core
from .service.models import (RunRequest, RunResponse, RwaSolveRequest,
                             RwaSolveResponse, ValidateTopologyRequest,
                             ValidateTopologyResponse)

GRAMMAR_HELP = """\
file formats:

  topology (one declaration per line, '#' comments):
    node <id> qnode ip=<dotted-quad> channels=<k> encodings=pol,timebin
               [eff=<0..1>] [dark_hz=<x>] [bin_ns=<x>]
    node <id> eps rate=<pairs_per_s> n=<N> band=<O|C> grid=<ch1,ch2,...>
    node <id> switch ports=<M> il_db=<x>
    link <idA> <idB> len_km=<x> fiber_db=<x> il_db=<x> pdl_db=<x> classical=<none|ch list>
  channel tokens: C<n> = 190.0 + 0.1 n THz (C band), O<n> = 222.0 + 0.1 n THz (O band)

  rwa request list (one per line):
    request <eps> <qnode1> <qnode2>

  scenario (one event per line):
    at <t> request qubit=<pol|timebin> from=<qnode> to=<qnode> basis=<label> start=<t1> end=<t2> ebits=<n>
    at <t> drift <link> +<dB>          (link written <idA>-<idB>)
    at <t> down <node>
"""


def _post(server: str, path: str, payload: dict) -> dict:
    import httpx
    response = httpx.post(server.rstrip("/") + path, json=payload, timeout=600.0)
    if response.status_code != 200:
        raise EntdistError(f"server error {response.status_code}: {response.text}")
    return response.json()


def _cmd_validate(args: argparse.Namespace) -> int:
    request = ValidateTopologyRequest(document=Path(args.topology).read_text())
    if args.server:
        result = ValidateTopologyResponse.model_validate(
            _post(args.server, "/topology/validate", request.model_dump()))
    else:
        result = core.validate_topology_op(request)
    if not result.ok:
        print(f"INVALID: {result.error}")
        return 1
    s = result.summary
    print(f"OK: {s.nodes} nodes, {s.links} links "
          f"({s.qnodes} q-nodes, {s.eps} eps, {s.switches} switches)")
    return 0


def _cmd_rwa_solve(args: argparse.Namespace) -> int:
    request = RwaSolveRequest(topology=Path(args.topology).read_text(),
                              requests=Path(args.requests).read_text())
    if args.server:
        result = RwaSolveResponse.model_validate(
            _post(args.server, "/rwa/solve", request.model_dump()))
    else:
        result = core.rwa_solve_op(request)
    for item in result.results:
        print(item.line)
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    request = RunRequest(topology=Path(args.topology).read_text(),
                         scenario=Path(args.scenario).read_text(),
                         seed=args.seed, max_retries=args.max_retries,
                         timeout_s=args.timeout_s,
                         noise_threshold=args.noise_threshold,
                         end_time=args.end_time)
    if args.server:
        result = RunResponse.model_validate(
            _post(args.server, "/simulation/run", request.model_dump()))
    else:
        result = core.run_op(request)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.txt").write_text(result.trace)
    (out / "metrics.txt").write_text(result.metrics)
    (out / "sessions.txt").write_text(result.session_lines)
    sys.stdout.write(result.session_lines)
    print(f"wrote trace.txt, metrics.txt, sessions.txt to {out} "
          f"(wall {result.wall_runtime_s:.3f}s)")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn
    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _cmd_version(args: argparse.Namespace) -> int:
    info = core.version_op()
    print(f"{info.name} {info.version}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entdist", description=__doc__,
        epilog=GRAMMAR_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--server", default="",
                        help="base URL of a running service; default runs in-process")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("validate-topology", help="parse and validate a topology file")
    p.add_argument("topology")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("rwa-solve", help="assign wavelengths for a request list")
    p.add_argument("topology")
    p.add_argument("requests")
    p.set_defaults(func=_cmd_rwa_solve)

    p = sub.add_parser("run", help="run a scenario and write trace/metrics")
    p.add_argument("topology")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="./out")
    p.add_argument("--max-retries", type=int, default=None)
    p.add_argument("--timeout-s", type=float, default=None)
    p.add_argument("--noise-threshold", type=float, default=None,
                   help="verification noise/signal gate (default 1/6)")
    p.add_argument("--end-time", type=float, default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=_cmd_version)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except EntdistError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
