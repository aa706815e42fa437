"""Command line entry point: validate, fk, workspace, serve, scenario."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .. import __version__, workspace
from ..errors import InvalidParamsError, KinesimError, URDFError
from ..kinematics import canonical_mode, chain_fk
from ..simcore import JOINT_CONTROLLER, Registry
from ..urdf import extract_chain, load_model, parse_urdf, resolve_model_path, validate_model
from .protocol import encode_response, handle_request

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _chain_arg(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError(f"expected base,tip but got {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinesim", description="Headless robot kinematics simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a URDF and print the validation report")
    v.add_argument("urdf")

    f = sub.add_parser("fk", help="tip pose of a chain at a joint vector")
    f.add_argument("urdf")
    f.add_argument("--chain", type=_chain_arg, required=True, metavar="BASE,TIP")
    f.add_argument("--q", type=float, nargs="*", default=[], metavar="RAD")

    w = sub.add_parser("workspace", help="sample, normalize and export manipulability workspaces")
    w.add_argument("urdf")
    w.add_argument("--chain", type=_chain_arg, action="append", required=True, metavar="BASE,TIP",
                   help="repeat for several chains")
    w.add_argument("--instances", type=int, required=True)
    w.add_argument("--per-instance", type=int, required=True)
    w.add_argument("--seed", type=int, required=True)
    w.add_argument("--out", action="append", required=True, metavar="PLY",
                   help="one path per chain, or one path that gets a _<tip> suffix per chain")
    w.add_argument("--csv", action="append", default=[], metavar="CSV")
    w.add_argument("--mode", choices=("full6", "pos3", "full_6", "position_3"), default="full6")
    w.add_argument("--joint-normalization", action="store_true",
                   help="normalize all chains against their common maximum")
    w.add_argument("--posture", default="Stand", help="pose of non-chain joints during the collision check")
    w.add_argument("--workers", type=int, default=1, help="instances sampled concurrently (output is unaffected)")
    w.add_argument("--audit", action="store_true", help="replay every sample through kinematics and collision")
    w.add_argument("--figure", metavar="PNG", help="also render a scatter/histogram figure")

    s = sub.add_parser("serve", help="run the TCP control server")
    s.add_argument("--bind", default="127.0.0.1:8765", metavar="HOST:PORT")

    c = sub.add_parser("scenario", help="replay a command script against a fresh instance")
    c.add_argument("script")
    c.add_argument("--out", metavar="JSON", help="write the full transcript here")
    return p


def _per_chain_paths(paths: list, chains: list, label: str) -> list:
    if not paths:
        return [None] * len(chains)
    if len(paths) == len(chains):
        return [Path(p) for p in paths]
    if len(paths) == 1:
        base = Path(paths[0])
        return [base.with_name(f"{base.stem}_{tip}{base.suffix}") for _, tip in chains]
    raise InvalidParamsError(f"give one {label} path or one per chain ({len(chains)})")


def cmd_validate(args) -> int:
    try:
        path = resolve_model_path(args.urdf)
        model = parse_urdf(path.read_bytes(), strict=False)
    except URDFError as exc:
        print(json.dumps({"ok": False, "findings": [
            {"severity": "error", "element": "urdf", "message": str(exc)}]}, indent=2))
        return EXIT_INVALID
    report = validate_model(model)
    print(report.to_json())
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_fk(args) -> int:
    model = load_model(args.urdf)
    chain = extract_chain(model, *args.chain)
    pose = chain_fk(chain, args.q)
    out = {
        "base": chain.base_link,
        "tip": chain.tip_link,
        "joints": chain.joint_names,
        "q": list(args.q),
        "translation": [float(v) for v in pose.translation],
        "rpy": [float(v) for v in pose.rpy],
        "matrix": pose.as_matrix().tolist(),
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_workspace(args) -> int:
    model = load_model(args.urdf)
    mode = canonical_mode(args.mode)
    outs = _per_chain_paths(args.out, args.chain, "--out")
    csvs = _per_chain_paths(args.csv, args.chain, "--csv")
    clouds, status = [], EXIT_OK
    for chain in args.chain:
        t0 = time.perf_counter()
        raw = workspace.sample_workspace(model, chain, args.per_instance, args.instances, args.seed,
                                         mode=mode, workers=args.workers, posture=args.posture)
        print(f"sampled {chain[0]},{chain[1]}: {len(raw)} samples in {time.perf_counter() - t0:.2f} s",
              file=sys.stderr)
        clouds.append(raw)
    if args.joint_normalization:
        clouds = workspace.normalize_jointly(clouds)
    else:
        clouds = [workspace.normalize_workspace(c) for c in clouds]
    for cloud, ply, csv_path in zip(clouds, outs, csvs):
        workspace.export_cloud(cloud, "ply", ply)
        if csv_path is not None:
            workspace.export_cloud(cloud, "csv", csv_path)
        summary = {
            "chain": f"{cloud.base_link},{cloud.tip_link}",
            "samples": len(cloud),
            "rejections": cloud.provenance.get("rejections", 0),
            "w_raw_max": float(cloud.provenance["w_raw_max"]),
            "w_norm_max": float(cloud.w_norm.max()),
            "ply": str(ply),
            "csv": None if csv_path is None else str(csv_path),
        }
        if args.audit:
            report = workspace.audit_cloud(model, cloud, posture=args.posture)
            summary["audit"] = {"checked": report.checked, "limit_violations": len(report.limit_violations),
                                "self_collisions": len(report.self_collisions)}
            if not report.ok:
                status = EXIT_RUNTIME
        print(json.dumps(summary))
    if args.figure:
        from ..plotting import plot_workspace

        plot_workspace(clouds, args.figure, title=f"{model.name} workspace ({mode})")
        print(json.dumps({"figure": args.figure}))
    return status


def cmd_serve(args) -> int:
    from .server import serve

    server = serve(args.bind)
    host, port = server.address
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def run_scenario(script: dict, registry: Registry = None) -> dict:
    """Create an instance from ``script["config"]`` and replay ``script["commands"]``.

    Commands without an ``instance`` parameter target the fresh instance.
    """
    if not isinstance(script, dict) or not isinstance(script.get("commands", []), list):
        raise InvalidParamsError("scenario must be an object with a 'commands' list")
    registry = registry or Registry()
    iid = registry.create_instance(script.get("config") or {})
    transcript = []
    for k, cmd in enumerate(script.get("commands", []), start=1):
        if not isinstance(cmd, dict):
            raise InvalidParamsError(f"command {k} is not an object")
        params = dict(cmd.get("params") or {})
        params.setdefault("instance", iid)
        transcript.append(handle_request({"id": k, "method": cmd.get("method"), "params": params}, registry))
    digest = registry.get(iid).digest()
    return {"instance": iid, "digest": digest, "joint_controller": JOINT_CONTROLLER,
            "responses": transcript, "errors": sum("error" in r for r in transcript)}


def cmd_scenario(args) -> int:
    try:
        script = json.loads(Path(args.script).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidParamsError(f"cannot read scenario {args.script}: {exc}") from None
    result = run_scenario(script)
    if args.out:
        Path(args.out).write_text(encode_response(result) + "\n")
    print(json.dumps({"digest": result["digest"], "commands": len(result["responses"]),
                      "errors": result["errors"]}))
    return EXIT_RUNTIME if result["errors"] else EXIT_OK


COMMANDS = {"validate": cmd_validate, "fk": cmd_fk, "workspace": cmd_workspace,
            "serve": cmd_serve, "scenario": cmd_scenario}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except KinesimError as exc:
        print(f"kinesim {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"kinesim {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
