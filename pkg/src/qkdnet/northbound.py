"""HTTP and socket surfaces: controller API, per-node key delivery, entropy.

Every handler serializes against the event-engine lock so API threads and
the clock driver never interleave inside the core. Bodies are JSON; key
octets travel base64-encoded, and REST sizes are expressed in bits while the
stores account in bytes.
"""

from __future__ import annotations

import base64
import json
import re
import socket
import struct
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .errors import KmsError, QkdNetworkError
from .kms import QoS

_SESSION_HEADER = struct.Struct(">I")


def _choose_status(exc: QkdNetworkError) -> int:
    from . import errors

    if isinstance(exc, (errors.UnknownPeerError, errors.UnknownNodeError,
                        errors.UnknownSessionError, errors.UnknownExperimentError)):
        return 404
    if isinstance(exc, (errors.KeyExhaustedError, errors.InsufficientKeyError)):
        return 503
    if isinstance(exc, errors.RateLimitedError):
        return 429
    if isinstance(exc, (errors.QosUnsatisfiableError, errors.QosInfeasibleError,
                        errors.NoFeasibleRouteError)):
        return 409
    return 400


class _Router:
    def __init__(self):
        self.routes = []

    def add(self, method: str, pattern: str, fn) -> None:
        self.routes.append((method, re.compile(f"^{pattern}$"), fn))

    def dispatch(self, method: str, path: str, body: dict, query: dict):
        for m, rx, fn in self.routes:
            if m != method:
                continue
            match = rx.match(path)
            if match:
                return fn(body=body, query=query, **match.groupdict())
        raise KmsError(f"no route for {method} {path}")


def _make_handler(router: _Router):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet; diagnostics go to app logs
            pass

        def _reply(self, code: int, payload: dict) -> None:
            raw = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(raw)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def _serve(self, method: str) -> None:
            parsed = urlparse(self.path)
            query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
            body = {}
            length = int(self.headers.get("Content-Length") or 0)
            if length:
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._reply(400, {"error": "malformed JSON body", "code": "bad-json"})
                    return
            try:
                # handlers take the engine lock themselves: blocking calls
                # (provision, switch apply) must not hold it while waiting
                result = router.dispatch(method, parsed.path, body, query)
            except QkdNetworkError as exc:
                self._reply(_choose_status(exc), {"error": str(exc), "code": exc.code})
                return
            except Exception as exc:  # pragma: no cover - defensive
                self._reply(500, {"error": str(exc), "code": "internal"})
                return
            if isinstance(result, tuple):
                self._reply(result[0], result[1])
            else:
                self._reply(200, result)

        def do_GET(self):
            self._serve("GET")

        def do_POST(self):
            self._serve("POST")

    return Handler


class ApiServer:
    def __init__(self, host: str, port: int, router: _Router):
        self.httpd = ThreadingHTTPServer((host, port), _make_handler(router))
        self.httpd.daemon_threads = True
        self.port = self.httpd.server_address[1]
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def start(self) -> "ApiServer":
        self._thread.start()
        return self

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


# ---------------------------------------------------------------------------
# Controller (northbound) API
# ---------------------------------------------------------------------------


def controller_router(net, entropy_service=None) -> _Router:
    from .controller import SwitchCommand

    router = _Router()
    lock = net.engine.lock

    def topology(**_):
        topo = net.topo
        with lock:
            return _topology_body(topo, net)

    def _topology_body(topo, net):
        return {
            "name": topo.name,
            "domains": sorted(topo.domains()),
            "nodes": [
                {
                    "node_id": n.node_id,
                    "domain": n.domain,
                    "has_optical_switch": n.has_optical_switch,
                    "is_border": n.is_border,
                    "kms_enabled": n.kms_enabled,
                    "modules": [
                        {
                            "module_id": m.module_id,
                            "vendor": topo.module_specs[m.spec_id].vendor,
                            "technology": topo.module_specs[m.spec_id].technology,
                            "role": topo.module_specs[m.spec_id].role,
                        }
                        for m in topo.modules_at(n.node_id)
                    ],
                }
                for n in sorted(topo.nodes.values(), key=lambda n: n.node_id)
            ],
            "links": [
                {
                    "link_id": l.link_id,
                    "endpoint_a": l.endpoint_a,
                    "endpoint_b": l.endpoint_b,
                    "length_km": l.length_km,
                    "loss_db_c_band": l.loss_db_c_band,
                    "loss_db_o_band": l.loss_db_o_band,
                    "inter_domain": topo.nodes[l.endpoint_a].domain
                    != topo.nodes[l.endpoint_b].domain,
                }
                for l in sorted(topo.links.values(), key=lambda l: l.link_id)
            ],
            "switches": [
                {
                    "switch_id": s.switch_id,
                    "host_node": s.host_node,
                    "ports": sorted(s.port_map()),
                    "cross_connects": sorted(
                        map(list, net.current_state()[s.switch_id])
                    ),
                }
                for s in sorted(topo.switches.values(), key=lambda s: s.switch_id)
            ],
        }

    def channels(**_):
        with lock:
            return {"channels": net.channels_snapshot()}

    def switch_config(switch_id: str, body: dict, **_):
        command = SwitchCommand(
            switch_id=switch_id,
            cross_connects=tuple(tuple(c) for c in body.get("cross_connects", [])),
        )
        with lock:
            net.controller.apply_switch_config(command)
        if command.result is None:
            net.resolve(command)  # waits lock-free in live mode
        with lock:
            return {
                "switch_id": switch_id,
                "result": command.result,
                "reason": command.reason,
                "affected_channels": list(command.affected_channels),
            }

    def routes(body: dict, **_):
        with lock:
            qos = body.get("qos") or {}
            plan = net.controller.compute_route(
                body["src"], body["dst"], qos_max_bps=float(qos.get("max_bps", 0.0))
            )
        return {
            "nodes": list(plan.nodes),
            "hop_channels": [list(h) for h in plan.hop_channels],
            "hop_vendors": [list(h) for h in plan.hop_vendors],
            "domains": list(plan.domains),
            "bottleneck_kbps": plan.bottleneck_kbps,
            "epoch": plan.epoch,
        }

    def provision(body: dict, **_):
        with lock:
            prov = net.controller.provision_e2e_key(
                body["src"],
                body["dst"],
                int(body.get("size_bytes", 32)),
                body.get("policy", "single"),
            )
        net.resolve(prov)  # waits lock-free in live mode
        with lock:
            return prov.receipt

    def metrics(**_):
        with lock:
            return {
                "controller": net.controller.metrics,
                "buffers": {
                    node: dict(sorted(levels.items()))
                    for node, levels in sorted(net.controller.buffer_levels.items())
                },
                "audit_records": len(net.audit),
                "sim_time_s": net.engine.now,
                "epoch": net.epoch,
            }

    def entropy(query: dict, **_):
        if entropy_service is None:
            raise KmsError("no entropy service configured")
        n = int(query.get("bytes", "0"))
        with lock:
            octets, ready_at = entropy_service.request(n)
        return {
            "bytes": base64.b64encode(octets).decode(),
            "size": n,
            "ready_at": ready_at,
        }

    router.add("GET", r"/topology", topology)
    router.add("GET", r"/channels", channels)
    router.add("POST", r"/switch/(?P<switch_id>[^/]+)/config", switch_config)
    router.add("POST", r"/routes", routes)
    router.add("POST", r"/keys/provision", provision)
    router.add("GET", r"/metrics", metrics)
    router.add("GET", r"/entropy", entropy)
    return router


# ---------------------------------------------------------------------------
# Per-node key delivery API (request interface wire format)
# ---------------------------------------------------------------------------


def kms_router(kms, lock) -> _Router:
    router = _Router()

    def status(slave_id: str, query: dict, **_):
        master = query.get("master", f"caller@{kms.node_id}")
        with lock:
            return kms.etsi14_status(master, slave_id)

    def enc_keys(slave_id: str, body: dict, query: dict, **_):
        master = body.get("master_SAE_ID", f"caller@{kms.node_id}")
        with lock:
            keys = kms.etsi14_get_enc_keys(
                master,
                slave_id,
                int(body.get("number", 1)),
                int(body["size"]) if "size" in body else None,
            )
        return {
            "keys": [
                {"key_ID": k["key_ID"], "key": base64.b64encode(k["key"]).decode()}
                for k in keys
            ]
        }

    def dec_keys(master_id: str, body: dict, **_):
        ids = [entry["key_ID"] for entry in body.get("key_IDs", [])]
        slave = body.get("slave_SAE_ID", f"caller@{kms.node_id}")
        with lock:
            keys, errors = kms.etsi14_get_keys_with_ids(slave, master_id, ids)
        payload = {
            "keys": [
                {"key_ID": k["key_ID"], "key": base64.b64encode(k["key"]).decode()}
                for k in keys
            ]
        }
        if errors:
            payload["key_errors"] = errors
        if not keys and errors:
            return 400, payload
        return payload

    router.add("GET", r"/api/v1/keys/(?P<slave_id>[^/]+)/status", status)
    router.add("POST", r"/api/v1/keys/(?P<slave_id>[^/]+)/enc_keys", enc_keys)
    router.add("POST", r"/api/v1/keys/(?P<master_id>[^/]+)/dec_keys", dec_keys)
    return router


# ---------------------------------------------------------------------------
# Session interface over a local socket
# ---------------------------------------------------------------------------


class SessionSocketServer:
    """OPEN_CONNECT / GET_KEY / CLOSE verbs, length-prefixed JSON frames."""

    def __init__(self, kms, host: str, port: int, lock):
        self.kms = kms
        self.lock = lock
        self._sock = socket.create_server((host, port))
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> "SessionSocketServer":
        self._thread.start()
        return self

    def close(self) -> None:
        self._stop.set()
        self._sock.close()

    def _accept_loop(self) -> None:
        self._sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        with conn:
            buf = bytearray()
            while not self._stop.is_set():
                try:
                    chunk = conn.recv(65536)
                except OSError:
                    return
                if not chunk:
                    return
                buf.extend(chunk)
                while len(buf) >= _SESSION_HEADER.size:
                    (length,) = _SESSION_HEADER.unpack_from(buf)
                    if len(buf) < _SESSION_HEADER.size + length:
                        break
                    body = bytes(buf[_SESSION_HEADER.size : _SESSION_HEADER.size + length])
                    del buf[: _SESSION_HEADER.size + length]
                    reply = self._handle(json.loads(body))
                    raw = json.dumps(reply).encode()
                    conn.sendall(_SESSION_HEADER.pack(len(raw)) + raw)

    def _handle(self, msg: dict) -> dict:
        verb = msg.get("verb")
        try:
            with self.lock:
                if verb == "OPEN_CONNECT":
                    qos_in = msg.get("qos") or {}
                    ksid = self.kms.open_connect(
                        msg["source"],
                        msg["destination"],
                        QoS(
                            key_chunk_size_bytes=int(qos_in.get("key_chunk_size", 32)),
                            max_bps=float(qos_in.get("max_bps", 0.0)),
                            ttl_s=float(qos_in.get("ttl", 3600.0)),
                        ),
                    )
                    return {"ok": True, "ksid": ksid}
                if verb == "GET_KEY":
                    chunk = self.kms.get_key(msg["ksid"], msg.get("index"))
                    return {
                        "ok": True,
                        "ksid": chunk.handle,
                        "index": chunk.index,
                        "key": base64.b64encode(chunk.bits).decode(),
                    }
                if verb == "CLOSE":
                    self.kms.close(msg["ksid"])
                    return {"ok": True}
        except QkdNetworkError as exc:
            return {"ok": False, "error": str(exc), "code": exc.code}
        return {"ok": False, "error": f"unknown verb {verb}", "code": "bad-verb"}


def session_client_call(host: str, port: int, msg: dict, timeout: float = 10.0) -> dict:
    with socket.create_connection((host, port), timeout=timeout) as conn:
        raw = json.dumps(msg).encode()
        conn.sendall(_SESSION_HEADER.pack(len(raw)) + raw)
        buf = b""
        while True:
            need = _SESSION_HEADER.size if len(buf) < _SESSION_HEADER.size else None
            chunk = conn.recv(65536)
            if not chunk:
                raise ConnectionError("session socket closed early")
            buf += chunk
            if len(buf) >= _SESSION_HEADER.size:
                (length,) = _SESSION_HEADER.unpack_from(buf)
                if len(buf) >= _SESSION_HEADER.size + length:
                    return json.loads(buf[_SESSION_HEADER.size : _SESSION_HEADER.size + length])


# ---------------------------------------------------------------------------
# Service bundle
# ---------------------------------------------------------------------------


class ServiceBundle:
    """All listeners of a running deployment, with their port map."""

    def __init__(self, net, entropy_service=None, host: str = "127.0.0.1",
                 controller_port: int = 0, kms_base_port: int = 0,
                 session_base_port: int = 0):
        self.net = net
        lock = net.engine.lock
        self.controller_api = ApiServer(
            host, controller_port, controller_router(net, entropy_service)
        ).start()
        self.kms_apis = {}
        self.session_sockets = {}
        offset = 0
        for node_id in sorted(net.kms):
            if net.fabric.get(node_id).store.forwarding_only:
                continue
            kport = kms_base_port + offset if kms_base_port else 0
            sport = session_base_port + offset if session_base_port else 0
            self.kms_apis[node_id] = ApiServer(
                host, kport, kms_router(net.kms[node_id], lock)
            ).start()
            self.session_sockets[node_id] = SessionSocketServer(
                net.kms[node_id], host, sport, lock
            ).start()
            offset += 1
        self.host = host

    def port_map(self) -> dict:
        return {
            "controller": self.controller_api.port,
            "kms": {n: s.port for n, s in sorted(self.kms_apis.items())},
            "session": {n: s.port for n, s in sorted(self.session_sockets.items())},
        }

    def close(self) -> None:
        self.controller_api.close()
        for server in self.kms_apis.values():
            server.close()
        for server in self.session_sockets.values():
            server.close()
