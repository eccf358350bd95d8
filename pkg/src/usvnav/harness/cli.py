"""Command line entry point: ``usvnav run | validate | replay | mock-server``.

Exit codes: 0 task success, 1 task failure, 2 error (bad scenario, I/O).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from ..heartbeat import HeartbeatClient, mock_server_run
from .outputs import emit_outputs, replay
from .scenario import ScenarioError, load_scenario
from .sim import run

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    hb_cfg = sc.heartbeat
    if args.td_host is not None or args.td_port is not None:
        hb_cfg = replace(
            hb_cfg,
            enabled=True,
            host=args.td_host if args.td_host is not None else hb_cfg.host,
            port=args.td_port if args.td_port is not None else hb_cfg.port,
        )
    if args.team_id is not None:
        hb_cfg = replace(hb_cfg, team_id=args.team_id)
    if args.heartbeat_hz is not None:
        hb_cfg = replace(hb_cfg, rate_hz=args.heartbeat_hz)
    client = None
    if hb_cfg.enabled:
        client = HeartbeatClient(hb_cfg.host, hb_cfg.port, hb_cfg.team_id, hb_cfg.rate_hz, hb_cfg.datum).start()
    try:
        result = run(sc, seed=args.seed, duration=args.duration, heartbeat=client)
    finally:
        if client is not None:
            client.stop()
    paths = emit_outputs(result, args.out)
    m = result.metrics
    rmse = "n/a" if m["rmse_position"] is None else f"{m['rmse_position']:.3f} m"
    clear = "n/a" if m["min_clearance"] is None else f"{m['min_clearance']:.2f} m"
    print(
        f"{sc.name}: {'SUCCESS' if result.success else 'FAILURE'}  "
        f"rmse={rmse}  min_clearance={clear}  "
        f"outputs in {paths['log'].parent}"
    )
    return EXIT_OK if result.success else EXIT_FAIL


def _cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({sc.name}, {sc.duration:g} s at dt={sc.dt:g})")
    return EXIT_OK


def _cmd_replay(args) -> int:
    print(json.dumps(replay(args.log, plot=args.plot), indent=2))
    return EXIT_OK


def _cmd_mock_server(args) -> int:
    mock_server_run(args.port, args.host)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="usvnav", description="USV navigation stack simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("scenario")
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float)
    r.add_argument("--td-host")
    r.add_argument("--td-port", type=int)
    r.add_argument("--team-id")
    r.add_argument("--heartbeat-hz", type=float)
    r.set_defaults(fn=_cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(fn=_cmd_validate)

    rp = sub.add_parser("replay", help="summarise a saved log.csv")
    rp.add_argument("log")
    rp.add_argument("--plot", action="store_true")
    rp.set_defaults(fn=_cmd_replay)

    ms = sub.add_parser("mock-server", help="run the mock Technical Director server")
    ms.add_argument("--port", type=int, default=9000)
    ms.add_argument("--host", default="0.0.0.0")
    ms.set_defaults(fn=_cmd_mock_server)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
