"""Command-line client of the lab service.

Every subcommand talks to the HTTP API: against a remote server when
--server (or U2FLOW_SERVER) is given, otherwise against an in-process
instance of the service, so no daemon is needed for local work. ``serve``
starts a standalone server for multi-client use.

Environment overrides use the U2FLOW_ prefix: U2FLOW_SERVER, U2FLOW_OUT,
U2FLOW_SEED.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_REFUTED = 1
EXIT_CONFIG = 2
EXIT_OUTPUT = 3
EXIT_ERROR = 4

ENV_PREFIX = "U2FLOW_"


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _fail(detail, code: int) -> int:
    print(f"error: {detail}", file=sys.stderr)
    return code


def _post(client, path: str, payload: dict):
    resp = client.post(path, json=payload)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        return None, detail, resp.status_code
    return resp.json(), None, resp.status_code


def cmd_run(args, client) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        return _fail(f"config file {cfg_path} not found", EXIT_CONFIG)
    payload = {"config_text": cfg_path.read_text(), "out_dir": str(Path(args.out).resolve())}
    data, detail, status = _post(client, "/runs", payload)
    if data is None:
        return _fail(detail, EXIT_OUTPUT if status == 403 else EXIT_CONFIG)
    print(json.dumps({k: data[k] for k in (
        "run_id", "stop_reason", "t_end", "t_sing", "b_tip_final", "n_snapshots",
        "boundary_contaminated")}, indent=1, sort_keys=True))
    print(f"outputs in {data['out_dir']}: {', '.join(data['files'][:4])} ...")
    return EXIT_OK


def cmd_analyze(args, client) -> int:
    payload = {
        "trajectory_dir": str(Path(args.traj).resolve()),
        "out_dir": str(Path(args.out).resolve()) if args.out else None,
        "theta": args.theta,
        "residual_laws": args.laws or [],
    }
    data, detail, status = _post(client, "/analyze", payload)
    if data is None:
        return _fail(detail, EXIT_ERROR)
    print(json.dumps({
        "singularity": data["singularity"],
        "blowup_regime": data["blowup"].get("regime"),
        "eh_distance": data["eh_distance"],
        "worst_margin": min(
            ((k, v["margin"]) for k, v in data["inequality_margins"].items()),
            key=lambda kv: kv[1], default=None),
    }, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_certify(args, client) -> int:
    thetas = [float(t) for t in args.theta_ladder.split(",")] if args.theta_ladder else None
    payload = {"lattice_resolution": args.resolution,
               "out_dir": str(Path(args.out).resolve()) if args.out else None}
    if thetas:
        payload["theta_ladder"] = thetas
    data, detail, status = _post(client, "/certify", payload)
    if data is None:
        return _fail(detail, EXIT_ERROR)
    print(f"exact claims: {data['n_claims']}, all verified: {data['all_exact_verified']}")
    for q in data["quadratic_reports"]:
        print(f"  {q['claim']}: {q['verdict']}")
    if not data["all_exact_verified"]:
        refuted = [r for r in data["reports"] if r["verdict"] != "verified"]
        for r in refuted:
            print(f"REFUTED: {r['claim']} witness={r['witness']}", file=sys.stderr)
        return EXIT_REFUTED
    return EXIT_OK


def cmd_eh(args, client) -> int:
    payload = {"s_max": args.s_max, "ds": args.ds,
               "out_dir": str(Path(args.out).resolve()) if args.out else None}
    data, detail, status = _post(client, "/eh", payload)
    if data is None:
        return _fail(detail, EXIT_CONFIG)
    print(json.dumps(data, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_soliton(args, client) -> int:
    payload = {
        "k": args.k, "rho": args.rho, "b0": [float(v) for v in args.b0.split(",")],
        "s_max": args.s_max,
        "out_dir": str(Path(args.out).resolve()) if args.out else None,
    }
    data, detail, status = _post(client, "/soliton", payload)
    if data is None:
        return _fail(detail, EXIT_CONFIG)
    for rec in data["runs"]:
        print(json.dumps(rec, sort_keys=True))
    return EXIT_OK


def cmd_serve(args, client) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="u2flow",
                                description="lab client for the reduced Ricci flow service")
    p.add_argument("--server", default=os.environ.get(ENV_PREFIX + "SERVER"),
                   help="base URL of a running service; default is in-process")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="integrate a flow configuration")
    pr.add_argument("--config", required=True)
    pr.add_argument("--out", default=os.environ.get(ENV_PREFIX + "OUT", "runs/out"))
    pr.set_defaults(fn=cmd_run)

    pa = sub.add_parser("analyze", help="diagnostics and blow-up reports for a stored run")
    pa.add_argument("--traj", required=True, help="trajectory directory")
    pa.add_argument("--out", default=None)
    pa.add_argument("--theta", type=float, default=0.5)
    pa.add_argument("--laws", nargs="*", help="evolution laws to residual-test")
    pa.set_defaults(fn=cmd_analyze)

    pc = sub.add_parser("certify", help="exact polynomial certificates")
    pc.add_argument("--theta-ladder", default=None, help="comma-separated thetas")
    pc.add_argument("--resolution", type=int, default=256,
                    help="denominator of the exact rational lattice")
    pc.add_argument("--seed", type=int,
                    default=int(os.environ.get(ENV_PREFIX + "SEED", "0")),
                    help="reserved for sampling lattices; certificates are deterministic")
    pc.add_argument("--out", default=None)
    pc.set_defaults(fn=cmd_certify)

    pe = sub.add_parser("eh", help="integrate the Ricci-flat reference profile")
    pe.add_argument("--s-max", type=float, default=50.0)
    pe.add_argument("--ds", type=float, default=1e-3)
    pe.add_argument("--out", default=None)
    pe.set_defaults(fn=cmd_eh)

    ps = sub.add_parser("soliton", help="shrinking-soliton shooting sweep")
    ps.add_argument("--k", type=int, default=2)
    ps.add_argument("--rho", type=float, default=1.0)
    ps.add_argument("--b0", default="1.0", help="comma-separated tip sizes")
    ps.add_argument("--s-max", type=float, default=50.0)
    ps.add_argument("--out", default=None)
    ps.set_defaults(fn=cmd_soliton)

    pv = sub.add_parser("serve", help="start a standalone service")
    pv.add_argument("--host", default="127.0.0.1")
    pv.add_argument("--port", type=int, default=8321)
    pv.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return args.fn(args, None)
    client = _client(args.server)
    try:
        return args.fn(args, client)
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
