"""Operator command line: validate configs, run the service, drive experiments.

Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 runtime
failure. Machine-readable output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from pathlib import Path

import yaml

from . import builtin_config_path
from .errors import ConfigError, HarnessError, QkdNetworkError
from .harness import Harness, validate_spec
from .network import Network
from .topology import describe_topology, load_topology

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _err(msg: str) -> None:
    print(f"qkdnet: {msg}", file=sys.stderr)


def _resolve_config(arg: str) -> str:
    if arg == "madqci" or not arg:
        return builtin_config_path()
    return arg


def _load_yaml(path: str):
    try:
        return yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        topo = load_topology(_resolve_config(args.config))
        report = describe_topology(topo)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(f"network: {report['name']}")
        print(f"nodes: {report['nodes']}  links: {report['links']}  "
              f"switches: {report['switches']}  modules: {report['modules']}")
        print(f"domains: {', '.join(report['domains'])}")
        print(f"border nodes: {', '.join(report['border_nodes'])}")
        if report["relay_nodes"]:
            print(f"relay nodes: {', '.join(report['relay_nodes'])}")
        print(f"{report['feasible_channels_any']} feasible channels "
              f"({report['feasible_channels_default_state']} under the boot switch state)")
        for vendor, count in report["feasible_channels_by_vendor"].items():
            print(f"  {vendor}: {count}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _write_outputs(outdir: Path, net: Network, harness: Harness | None,
                   summaries: list) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "audit.jsonl").write_bytes(net.audit.dump_jsonl())
    if harness is not None:
        for experiment_id in harness.metrics.experiments():
            for fmt in ("csv", "jsonl"):
                path = outdir / f"metrics-{experiment_id}.{fmt}"
                path.write_text(harness.metrics.export(experiment_id, fmt))
    (outdir / "summary.json").write_text(
        json.dumps(summaries, indent=2, sort_keys=True) + "\n"
    )


def _schedule_scenario(net: Network, harness: Harness, scenario: dict,
                       summaries: list) -> float:
    events = scenario.get("events", []) or []
    horizon = float(scenario.get("run_until", 0.0))
    for i, ev in enumerate(events):
        at = float(ev.get("at", 0.0))
        horizon = max(horizon, at)
        action = ev.get("action")
        if action == "switch":
            def do_switch(ev=ev):
                cmd = net.apply_switch(
                    ev["switch_id"], [tuple(c) for c in ev["cross_connects"]]
                )
                summaries.append(
                    {"action": "switch", "switch_id": ev["switch_id"],
                     "result": cmd.result, "reason": cmd.reason,
                     "affected": list(cmd.affected_channels)}
                )
            net.engine.call_at(at, do_switch)
        elif action == "provision":
            def do_provision(ev=ev):
                prov = net.provision(
                    ev["src"], ev["dst"], int(ev.get("size_bytes", 32)),
                    ev.get("policy", "single"),
                )
                summaries.append({"action": "provision", **prov.receipt})
            net.engine.call_at(at, do_provision)
        elif action == "experiment":
            spec = validate_spec(ev["spec"], net.topo)
            def do_experiment(spec=spec):
                summaries.append({"action": "experiment", **harness.run(spec)})
            net.engine.call_at(at, do_experiment)
        else:
            raise ConfigError(f"unknown scenario action '{action}' (events[{i}])")
    return horizon


def cmd_run(args) -> int:
    mode = args.mode.upper()
    if mode == "SIMULATED" and args.seed is None:
        _err("SIMULATED mode requires --seed")
        return EXIT_USAGE
    if mode == "LIVE_CLOCK" and args.seed is not None:
        _err("LIVE_CLOCK mode ignores --seed (wall clock drives the run)")
    seed = args.seed if args.seed is not None else 0
    try:
        config = _resolve_config(args.config)
        net = Network(config, seed=seed, mode=mode)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG

    harness = Harness(net)
    summaries: list = []

    if mode == "SIMULATED":
        if not args.script:
            _err("SIMULATED mode requires --script (a timed command list)")
            return EXIT_USAGE
        try:
            scenario = _load_yaml(args.script)
            net.start()
            horizon = _schedule_scenario(net, harness, scenario, summaries)
        except (ConfigError, HarnessError) as exc:
            _err(str(exc))
            return EXIT_CONFIG
        try:
            net.run_until(horizon + float(scenario.get("settle_s", 120.0)))
        except QkdNetworkError as exc:
            _err(f"runtime failure: {exc}")
            return EXIT_RUNTIME
        _write_outputs(Path(args.out), net, harness, summaries)
        print(json.dumps({"mode": mode, "sim_time_s": net.engine.now,
                          "audit_records": len(net.audit),
                          "outputs": str(Path(args.out))}, sort_keys=True))
        return EXIT_OK

    # LIVE_CLOCK
    from .northbound import ServiceBundle

    try:
        net.start_live()
        bundle = ServiceBundle(
            net,
            harness.entropy_service,
            host=args.host,
            controller_port=args.port,
            kms_base_port=args.kms_base_port,
            session_base_port=args.session_base_port,
        )
    except OSError as exc:
        _err(f"cannot bind listeners: {exc}")
        return EXIT_RUNTIME
    ports = bundle.port_map()
    print(json.dumps({"mode": mode, "listening": ports}, sort_keys=True), flush=True)

    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    try:
        while not stop.wait(0.2):
            pass
    finally:
        bundle.close()
        net.stop()
        _write_outputs(Path(args.out), net, harness, summaries)
        _err("shut down; audit flushed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def cmd_experiment(args) -> int:
    try:
        raw = _load_yaml(args.spec)
        config = _resolve_config(args.config)
        topo = load_topology(config)
        spec = validate_spec(raw, topo)
    except (ConfigError, HarnessError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    try:
        net = Network(config, seed=seed).start()
        net.warm_up()
        harness = Harness(net)
        summary = harness.run(spec)
    except QkdNetworkError as exc:
        _err(f"runtime failure: {exc}")
        return EXIT_RUNTIME
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for fmt in ("csv", "jsonl"):
        path = outdir / f"metrics-{spec.experiment_id}.{fmt}"
        path.write_text(harness.export_metrics(spec.experiment_id, fmt))
    for key in sorted(summary):
        print(f"{spec.experiment_id} {key}={summary[key]}")
    if "audit_ok" in summary:
        print(f"{spec.experiment_id} unique-key-audit "
              f"{'PASS' if summary['audit_ok'] else 'FAIL'}")
    return EXIT_OK if summary.get("audit_ok", True) else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# route / switch / status against a running service
# ---------------------------------------------------------------------------


def _http_json(method: str, url: str, body=None):
    import urllib.request

    req = urllib.request.Request(
        url,
        data=json.dumps(body).encode() if body is not None else None,
        headers={"Content-Type": "application/json"},
        method=method,
    )
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return json.loads(exc.read())


def cmd_route(args) -> int:
    if args.url:
        result = _http_json(
            "POST", f"{args.url}/routes",
            {"src": args.src, "dst": args.dst, "qos": {"max_bps": args.max_bps}},
        )
        print(json.dumps(result, sort_keys=True))
        return EXIT_OK if "nodes" in result else EXIT_RUNTIME
    try:
        net = Network(_resolve_config(args.config), seed=args.seed or 0).start()
        net.warm_up()
        plan = net.controller.compute_route(args.src, args.dst, qos_max_bps=args.max_bps)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except QkdNetworkError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(json.dumps({"nodes": list(plan.nodes), "bottleneck_kbps": plan.bottleneck_kbps,
                      "domains": list(plan.domains)}, sort_keys=True))
    return EXIT_OK


def cmd_switch(args) -> int:
    if not args.url:
        _err("switch requires --url of a running service")
        return EXIT_USAGE
    result = _http_json(
        "POST", f"{args.url}/switch/{args.switch_id}/config",
        {"cross_connects": [c.split(":") for c in args.connect]},
    )
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK if result.get("result") == "APPLIED" else EXIT_RUNTIME


def cmd_status(args) -> int:
    if not args.url:
        _err("status requires --url of a running service")
        return EXIT_USAGE
    metrics = _http_json("GET", f"{args.url}/metrics")
    channels = _http_json("GET", f"{args.url}/channels")
    print(json.dumps({"metrics": metrics, "channels": channels}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdnet",
        description="Software-defined QKD network emulator and control plane.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a network description file")
    p.add_argument("config", nargs="?", default="madqci",
                   help="path to a network file, or 'madqci' for the built-in one")
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="run the network service or a scripted scenario")
    p.add_argument("--config", default="madqci")
    p.add_argument("--mode", choices=["simulated", "live_clock", "SIMULATED", "LIVE_CLOCK"],
                   default="simulated")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--script", help="timed command list (SIMULATED mode)")
    p.add_argument("--out", default="./qkdnet-out", help="output directory")
    # listen addresses: flags win, QKDNET_* environment variables override defaults
    p.add_argument("--host", default=os.environ.get("QKDNET_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("QKDNET_PORT", "8080")),
                   help="controller API port")
    p.add_argument("--kms-base-port", type=int,
                   default=int(os.environ.get("QKDNET_KMS_BASE_PORT", "8101")))
    p.add_argument("--session-base-port", type=int,
                   default=int(os.environ.get("QKDNET_SESSION_BASE_PORT", "8201")))
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("experiment", help="run one use-case workload")
    p.add_argument("spec", help="experiment spec file")
    p.add_argument("--config", default="madqci")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="./qkdnet-out")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("route", help="compute a relay route")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--max-bps", type=float, default=0.0)
    p.add_argument("--config", default="madqci")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--url", help="query a running controller instead of embedding")
    p.set_defaults(fn=cmd_route)

    p = sub.add_parser("switch", help="apply a cross-connect configuration")
    p.add_argument("switch_id")
    p.add_argument("--connect", action="append", default=[],
                   metavar="PORT:PORT", help="repeatable port pairing")
    p.add_argument("--url", required=False)
    p.set_defaults(fn=cmd_switch)

    p = sub.add_parser("status", help="summarize a running service")
    p.add_argument("--url", required=False)
    p.set_defaults(fn=cmd_status)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0,) else EXIT_OK
    try:
        return args.fn(args)
    except QkdNetworkError as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
