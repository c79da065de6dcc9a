"""Logically centralized SDN controller.

Holds the network view built from agent registrations, telemetry and channel
events; computes relay routes; drives optical-switch reconfiguration; and
orchestrates end-to-end key provisioning. The controller exchanges frames
with per-node agents and never sees key material: its entire state is the
inventory, rates, journal and bookkeeping serialized by ``to_state_dict``.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from . import southbound as sb
from .errors import (
    ControllerError,
    DuplicateRegistrationError,
    NoFeasibleRouteError,
    QosInfeasibleError,
    UnknownNodeError,
)
from .topology import Topology

ACTIVE = "ACTIVE"
SUSPECT = "SUSPECT"

APPLIED = "APPLIED"
REJECTED = "REJECTED"


@dataclass
class AgentRegistration:
    node_id: str
    capabilities: dict
    heartbeat_interval_s: float
    registered_at: float
    last_seen: float
    status: str = ACTIVE


@dataclass(frozen=True)
class RoutePlan:
    nodes: tuple[str, ...]
    hop_channels: tuple[tuple[str, ...], ...]  # channel ids usable per hop
    hop_vendors: tuple[tuple[str, ...], ...]
    domains: tuple[str, ...]
    bottleneck_kbps: float
    epoch: int

    def hops(self) -> int:
        return len(self.nodes) - 1


@dataclass
class SwitchCommand:
    switch_id: str
    cross_connects: tuple[tuple[str, str], ...]
    issued_at: float = 0.0
    result: str | None = None
    reason: str | None = None
    affected_channels: tuple[str, ...] = ()
    done: threading.Event = field(default_factory=threading.Event, repr=False)


@dataclass
class Provision:
    provision_id: str
    src: str
    dst: str
    size_bytes: int
    policy: str
    routes: tuple[RoutePlan, ...]
    status: str = "PENDING"
    receipt: dict | None = None
    done: threading.Event = field(default_factory=threading.Event, repr=False)


class _ChannelView:
    __slots__ = ("channel_id", "emitter_node", "receiver_node", "vendor", "path",
                 "state", "rate_hint_kbps", "samples")

    def __init__(self, channel_id, emitter_node, receiver_node, vendor, path,
                 state, rate_hint_kbps):
        self.channel_id = channel_id
        self.emitter_node = emitter_node
        self.receiver_node = receiver_node
        self.vendor = vendor
        self.path = tuple(path)
        self.state = state
        self.rate_hint_kbps = rate_hint_kbps
        self.samples: deque[tuple[float, float]] = deque()


class Controller:
    ENDPOINT = "controller"

    def __init__(self, topo: Topology, engine, transport, config: dict | None = None):
        cfg = dict(config or {})
        self.topo = topo
        self.engine = engine
        self.transport = transport
        self.heartbeat_interval_s = float(cfg.get("heartbeat_interval_s", 5.0))
        self.suspect_after_missed = int(cfg.get("suspect_after_missed", 3))
        self.rate_window_s = float(cfg.get("rate_window_s", 300.0))
        self.registrations: dict[str, AgentRegistration] = {}
        self.channels: dict[str, _ChannelView] = {}
        self.buffer_levels: dict[str, dict[str, int]] = {}  # node -> peer -> bytes
        self.reservations: dict[frozenset, float] = {}  # pair -> reserved bps
        self.journal: list[dict] = []
        self.pending_switch: dict[str, SwitchCommand] = {}
        self.pending_provisions: dict[str, Provision] = {}
        self.metrics = {
            "registrations": 0,
            "rejected_registrations": 0,
            "heartbeats": 0,
            "telemetry_frames": 0,
            "channel_events": 0,
            "switch_commands": 0,
            "switch_rejected": 0,
            "routes_computed": 0,
            "provisions_requested": 0,
            "provisions_delivered": 0,
            "provisions_failed": 0,
        }
        self._epoch = 0
        self._cmd_seq = 0
        transport.attach(self.ENDPOINT, self._on_frame)
        engine.spawn(self._sweep_loop(), delay=self.heartbeat_interval_s)

    # ------------------------------------------------------------------
    # Southbound frame handling
    # ------------------------------------------------------------------

    def _on_frame(self, msg_type: int, payload: dict) -> None:
        if msg_type == sb.REGISTER:
            self._handle_register(payload)
        elif msg_type == sb.HEARTBEAT:
            self._handle_heartbeat(payload)
        elif msg_type == sb.TELEMETRY:
            self._handle_telemetry(payload)
        elif msg_type == sb.CHANNEL_EVENT:
            self._handle_channel_event(payload)
        elif msg_type == sb.SWITCH_CMD:
            self._handle_switch_reply(payload)
        elif msg_type == sb.RELAY_RESULT:
            self._handle_relay_result(payload)

    def register_agent(self, node_id: str, capabilities: dict,
                       heartbeat_interval_s: float | None = None) -> AgentRegistration:
        if node_id not in self.topo.nodes:
            raise UnknownNodeError(f"unknown node '{node_id}'")
        existing = self.registrations.get(node_id)
        if existing is not None and existing.status == ACTIVE:
            self.metrics["rejected_registrations"] += 1
            raise DuplicateRegistrationError(f"node '{node_id}' already registered")
        reg = AgentRegistration(
            node_id=node_id,
            capabilities=capabilities,
            heartbeat_interval_s=heartbeat_interval_s or self.heartbeat_interval_s,
            registered_at=self.engine.now,
            last_seen=self.engine.now,
        )
        self.registrations[node_id] = reg
        self.metrics["registrations"] += 1
        return reg

    def _handle_register(self, payload: dict) -> None:
        try:
            self.register_agent(
                payload["node_id"],
                payload.get("capabilities", {}),
                payload.get("heartbeat_interval_s"),
            )
        except ControllerError:
            pass  # metric already counted; agent keeps its old registration

    def _handle_heartbeat(self, payload: dict) -> None:
        reg = self.registrations.get(payload.get("node_id"))
        if reg is None:
            return
        reg.last_seen = self.engine.now
        if reg.status == SUSPECT:
            reg.status = ACTIVE
        self.metrics["heartbeats"] += 1

    def _handle_telemetry(self, payload: dict) -> None:
        self.metrics["telemetry_frames"] += 1
        now = self.engine.now
        for sample in payload.get("channels", ()):
            view = self.channels.get(sample["channel_id"])
            if view is None:
                continue
            view.samples.append((now, float(sample["skr_kbps"])))
            cutoff = now - self.rate_window_s
            while view.samples and view.samples[0][0] < cutoff:
                view.samples.popleft()
        node = payload.get("node_id")
        if node is not None:
            self.buffer_levels[node] = {
                b["peer"]: int(b["bytes"]) for b in payload.get("buffers", ())
            }

    def _handle_channel_event(self, payload: dict) -> None:
        self.metrics["channel_events"] += 1
        cid = payload["channel_id"]
        event = payload["event"]
        if cid not in self.channels:
            self.channels[cid] = _ChannelView(
                cid,
                payload["emitter_node"],
                payload["receiver_node"],
                payload.get("vendor", ""),
                payload.get("path", ()),
                "SYNCING",
                float(payload.get("rate_hint_kbps", 0.0)),
            )
        view = self.channels[cid]
        view.state = "DOWN" if event.startswith("DOWN") else event

    def _sweep_loop(self):
        while True:
            horizon = self.suspect_after_missed * self.heartbeat_interval_s
            for reg in self.registrations.values():
                if reg.status == ACTIVE and self.engine.now - reg.last_seen > horizon:
                    reg.status = SUSPECT
            yield self.heartbeat_interval_s

    # ------------------------------------------------------------------
    # Rate estimation and routing
    # ------------------------------------------------------------------

    def channel_mean_kbps(self, view: _ChannelView) -> float:
        if view.samples:
            return sum(v for _, v in view.samples) / len(view.samples)
        return view.rate_hint_kbps

    def estimate_pair_rate_kbps(self, a: str, b: str) -> float | None:
        """Deliverable rate between adjacent nodes: windowed channel mean
        minus admitted reservations. None when no live channel exists."""
        pair = frozenset((a, b))
        total = 0.0
        seen = False
        for view in self.channels.values():
            if view.state != "UP":
                continue
            if frozenset((view.emitter_node, view.receiver_node)) != pair:
                continue
            total += self.channel_mean_kbps(view)
            seen = True
        if not seen:
            return None
        reserved_kbps = self.reservations.get(pair, 0.0) / 1000.0
        return max(0.0, total - reserved_kbps)

    def estimate_route_rate_kbps(self, src: str, dst: str) -> float | None:
        """Bottleneck deliverable rate along the best current route."""
        try:
            plan = self.compute_route(src, dst, qos_max_bps=0.0)
        except ControllerError:
            return None
        return plan.bottleneck_kbps

    def reserve(self, a: str, b: str, bps: float) -> None:
        pair = frozenset((a, b))
        self.reservations[pair] = self.reservations.get(pair, 0.0) + bps

    def release(self, a: str, b: str, bps: float) -> None:
        pair = frozenset((a, b))
        self.reservations[pair] = max(0.0, self.reservations.get(pair, 0.0) - bps)

    def _routable_node(self, node_id: str, endpoint: bool) -> bool:
        reg = self.registrations.get(node_id)
        if reg is None or reg.status != ACTIVE:
            return False
        if endpoint and not self.topo.nodes[node_id].kms_enabled:
            return False
        return True

    def _adjacency(self, vendors: set[str] | None):
        adj: dict[str, dict[str, list[_ChannelView]]] = {}
        for view in self.channels.values():
            if view.state != "UP":
                continue
            if vendors is not None and view.vendor not in vendors:
                continue
            a, b = view.emitter_node, view.receiver_node
            adj.setdefault(a, {}).setdefault(b, []).append(view)
            adj.setdefault(b, {}).setdefault(a, []).append(view)
        return adj

    def compute_route(
        self,
        src: str,
        dst: str,
        qos_max_bps: float = 0.0,
        vendors: set[str] | None = None,
    ) -> RoutePlan:
        """Minimal-hop route whose bottleneck meets the requested rate.

        Ties break toward the highest bottleneck, then lexicographic node
        order. Domain crossings must happen over border nodes.
        """
        for node, endpoint in ((src, True), (dst, True)):
            if node not in self.topo.nodes:
                raise UnknownNodeError(f"unknown node '{node}'")
            if not self._routable_node(node, endpoint):
                raise NoFeasibleRouteError(
                    f"node '{node}' not registered/active/kms-enabled"
                )
        if src == dst:
            raise ControllerError("degenerate endpoints: src == dst")
        adj = self._adjacency(vendors)
        paths = self._simple_paths(adj, src, dst, max_hops=len(self.topo.nodes) - 1)
        if not paths:
            raise NoFeasibleRouteError(f"no live channel path {src} -> {dst}")
        scored = []
        for nodes in paths:
            bottleneck = min(
                sum(self.channel_mean_kbps(v) for v in adj[a][b])
                - self.reservations.get(frozenset((a, b)), 0.0) / 1000.0
                for a, b in zip(nodes, nodes[1:])
            )
            scored.append((nodes, bottleneck))
        feasible = [
            (nodes, rate) for nodes, rate in scored if rate * 1000.0 >= qos_max_bps
        ]
        if not feasible:
            raise QosInfeasibleError(
                f"{len(scored)} route(s) exist {src} -> {dst} but none sustains "
                f"{qos_max_bps} bps"
            )
        feasible.sort(key=lambda item: (len(item[0]), -item[1], item[0]))
        nodes, bottleneck = feasible[0]
        for a, b in zip(nodes, nodes[1:]):
            da, db = self.topo.nodes[a].domain, self.topo.nodes[b].domain
            if da != db:
                assert self.topo.nodes[a].is_border and self.topo.nodes[b].is_border
        self.metrics["routes_computed"] += 1
        return RoutePlan(
            nodes=tuple(nodes),
            hop_channels=tuple(
                tuple(sorted(v.channel_id for v in adj[a][b]))
                for a, b in zip(nodes, nodes[1:])
            ),
            hop_vendors=tuple(
                tuple(sorted({v.vendor for v in adj[a][b]}))
                for a, b in zip(nodes, nodes[1:])
            ),
            domains=tuple(
                dict.fromkeys(self.topo.nodes[n].domain for n in nodes)
            ),
            bottleneck_kbps=bottleneck,
            epoch=self._epoch,
        )

    def _simple_paths(self, adj, src, dst, max_hops):
        out = []

        def dfs(at, path):
            if len(path) - 1 > max_hops:
                return
            if at == dst:
                out.append(list(path))
                return
            for nxt in sorted(adj.get(at, ())):
                if nxt in path:
                    continue
                if nxt != dst and not self._routable_node(nxt, endpoint=False):
                    continue
                path.append(nxt)
                dfs(nxt, path)
                path.pop()

        if src in adj:
            dfs(src, [src])
        return out

    # ------------------------------------------------------------------
    # Switch reconfiguration
    # ------------------------------------------------------------------

    @property
    def epoch(self) -> int:
        return self._epoch

    def apply_switch_config(self, command: SwitchCommand) -> SwitchCommand:
        """Validate, journal, and dispatch a cross-connect replacement."""
        self.metrics["switch_commands"] += 1
        command.issued_at = self.engine.now
        sw = self.topo.switches.get(command.switch_id)
        if sw is None:
            return self._reject(command, f"unknown switch '{command.switch_id}'")
        ports = set(sw.port_map())
        used = set()
        for a, b in command.cross_connects:
            if a not in ports or b not in ports:
                return self._reject(command, f"unknown port in ({a}, {b})")
            if a == b or a in used or b in used:
                return self._reject(command, f"port reuse in ({a}, {b})")
            used.update((a, b))
        self._epoch += 1
        self.journal.append(
            {
                "epoch": self._epoch,
                "t": self.engine.now,
                "switch_id": command.switch_id,
                "cross_connects": sorted(map(list, command.cross_connects)),
            }
        )
        self.pending_switch[command.switch_id] = command
        self.transport.send(
            f"agent:{sw.host_node}",
            sb.SWITCH_CMD,
            {
                "switch_id": command.switch_id,
                "cross_connects": [list(c) for c in command.cross_connects],
                "epoch": self._epoch,
            },
        )
        return command

    def _reject(self, command: SwitchCommand, reason: str) -> SwitchCommand:
        command.result = REJECTED
        command.reason = reason
        command.done.set()
        self.metrics["switch_rejected"] += 1
        return command

    def _handle_switch_reply(self, payload: dict) -> None:
        command = self.pending_switch.pop(payload["switch_id"], None)
        if command is None:
            return
        command.result = payload.get("result", APPLIED)
        command.affected_channels = tuple(payload.get("affected_channels", ()))
        command.done.set()

    # ------------------------------------------------------------------
    # End-to-end provisioning
    # ------------------------------------------------------------------

    def provision_e2e_key(
        self, src: str, dst: str, size_bytes: int, policy: str = "single"
    ) -> Provision:
        self.metrics["provisions_requested"] += 1
        if src == dst:
            raise ControllerError("degenerate endpoints: src == dst")
        if size_bytes < 1:
            raise ControllerError("size must be >= 1 byte")
        if policy not in ("single", "independent-sources"):
            raise ControllerError(f"unknown policy '{policy}'")
        if policy == "single":
            routes = (self.compute_route(src, dst),)
        else:
            routes = self._independent_routes(src, dst)
        self._cmd_seq += 1
        provision_id = f"prov-{self._cmd_seq:06d}"
        jobs = []
        for i, plan in enumerate(routes):
            jobs.append(
                {
                    "job_id": f"{provision_id}-{i}",
                    "route": list(plan.nodes),
                    "vendor": "+".join(sorted(set().union(*map(set, plan.hop_vendors))))
                    if policy == "single"
                    else plan.hop_vendors[0][0],
                    "epoch": plan.epoch,
                }
            )
        provision = Provision(
            provision_id=provision_id,
            src=src,
            dst=dst,
            size_bytes=size_bytes,
            policy=policy,
            routes=routes,
        )
        self.pending_provisions[provision_id] = provision
        self.transport.send(
            f"agent:{src}",
            sb.RELAY_CMD,
            {
                "provision_id": provision_id,
                "size_bytes": size_bytes,
                "combine": policy == "independent-sources",
                "jobs": jobs,
            },
        )
        return provision

    def _independent_routes(self, src: str, dst: str) -> tuple[RoutePlan, ...]:
        plans = []
        for vendor in sorted({v.vendor for v in self.channels.values()}):
            try:
                plans.append((vendor, self.compute_route(src, dst, vendors={vendor})))
            except ControllerError:
                continue
        if len(plans) < 2:
            raise NoFeasibleRouteError(
                f"independent-sources needs two single-vendor routes {src} -> {dst}, "
                f"found {len(plans)}"
            )
        plans.sort(key=lambda item: (item[1].hops(), -item[1].bottleneck_kbps, item[0]))
        return tuple(plan for _, plan in plans[:2])

    def _handle_relay_result(self, payload: dict) -> None:
        provision = self.pending_provisions.pop(payload.get("provision_id"), None)
        if provision is None:
            return
        provision.status = payload["status"]
        provision.receipt = {
            "provision_id": provision.provision_id,
            "status": payload["status"],
            "src": provision.src,
            "dst": provision.dst,
            "size_bytes": provision.size_bytes,
            "policy": provision.policy,
            "routes": [list(p.nodes) for p in provision.routes],
            "jobs": payload.get("jobs", []),
            "latency_s": payload.get("latency_s"),
            "failure": payload.get("failure"),
        }
        if payload["status"] == "DELIVERED":
            self.metrics["provisions_delivered"] += 1
        else:
            self.metrics["provisions_failed"] += 1
        provision.done.set()

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def to_state_dict(self) -> dict:
        """The controller's complete serializable state (no key material)."""
        return {
            "epoch": self._epoch,
            "registrations": {
                n: {
                    "status": r.status,
                    "last_seen": r.last_seen,
                    "heartbeat_interval_s": r.heartbeat_interval_s,
                    "capabilities": r.capabilities,
                }
                for n, r in sorted(self.registrations.items())
            },
            "channels": {
                cid: {
                    "emitter_node": v.emitter_node,
                    "receiver_node": v.receiver_node,
                    "vendor": v.vendor,
                    "path": list(v.path),
                    "state": v.state,
                    "mean_kbps": round(self.channel_mean_kbps(v), 6),
                }
                for cid, v in sorted(self.channels.items())
            },
            "reservations": {
                "|".join(sorted(p)): bps for p, bps in sorted(
                    self.reservations.items(), key=lambda kv: sorted(kv[0])
                )
            },
            "journal": self.journal,
            "metrics": dict(self.metrics),
        }
