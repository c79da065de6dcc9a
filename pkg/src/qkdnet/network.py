"""Assembles a running network from a topology: nodes, channels, controller.

The runtime owns the optical truth (switch states, live channels) and wires
the per-node components together. Everything runs on one event engine; in
SIMULATED mode the caller drives it, in LIVE_CLOCK mode a wall-clock driver
thread replays it in real time.
"""

from __future__ import annotations

from .agent import NodeAgent
from .audit import AuditLog
from .controller import APPLIED, Controller, Provision, SwitchCommand
from .errors import ControllerError
from .eventsim import EventEngine, WallClockDriver
from .forwarding import ForwardingPlane, NodeBus
from .kms import KeyStore, KmsFabric, LocalKms
from .linksim import UP, ChannelManager
from .southbound import LoopbackTransport
from .topology import Topology, enumerate_feasible_channels, load_topology


class Network:
    def __init__(self, topo, seed: int = 0, mode: str = "SIMULATED"):
        self.topo: Topology = load_topology(topo)
        self.seed = seed
        self.mode = mode
        self.engine = EventEngine()
        self.audit = AuditLog(now_fn=lambda: self.engine.now)
        self.fabric = KmsFabric()
        self.bus = NodeBus(self.engine)
        self.transport = LoopbackTransport(self.engine)
        self.switch_states = {
            sid: set(ccs) for sid, ccs in self.topo.default_switch_state().items()
        }
        self._epoch = 0
        self.health: dict[str, dict] = {}  # channel_id -> latest health sample
        settings = self.topo.settings
        kms_cfg = dict(settings.get("kms") or {})
        fwd_cfg = dict(settings.get("forwarding") or {})
        ctl_cfg = dict(settings.get("controller") or {})

        self.manager = ChannelManager(
            self.topo, self.engine, seed, epoch_provider=lambda: self._epoch
        )
        self.manager.on_blocks(self._on_blocks)
        self.manager.on_event(self._on_channel_event)

        self.controller = Controller(self.topo, self.engine, self.transport, ctl_cfg)

        self.kms: dict[str, LocalKms] = {}
        self.agents: dict[str, NodeAgent] = {}
        for node_id in sorted(self.topo.nodes):
            node = self.topo.nodes[node_id]
            store = KeyStore(
                node_id,
                int(kms_cfg.get("capacity_bytes", 8 << 20)),
                lambda: self.engine.now,
                audit=self.audit,
                forwarding_only=not node.kms_enabled,
            )
            self.kms[node_id] = LocalKms(
                node_id,
                store,
                self.fabric,
                now_fn=lambda: self.engine.now,
                seed=seed,
                audit=self.audit,
                rate_estimator=self.controller.estimate_route_rate_kbps,
                config=kms_cfg,
            )
            plane = ForwardingPlane(
                node_id,
                self.fabric,
                self.engine,
                self.audit,
                self.bus,
                hop_delay_s=float(fwd_cfg.get("hop_delay_ms", 0.5)) / 1000.0,
                retry_base_s=float(fwd_cfg.get("retry_base_s", 0.5)),
                retry_cap_s=float(fwd_cfg.get("retry_cap_s", 8.0)),
                retry_deadline_s=float(fwd_cfg.get("retry_deadline_s", 60.0)),
                on_exhaustion="park" if fwd_cfg.get("park_on_exhaustion") else "fail",
                validity_check=self._job_still_routable,
            )
            self.bus.register(plane)
            self.agents[node_id] = NodeAgent(
                node_id,
                self.transport,
                self.engine,
                plane,
                seed=seed,
                heartbeat_interval_s=float(ctl_cfg.get("heartbeat_interval_s", 5.0)),
                telemetry_interval_s=float(ctl_cfg.get("telemetry_interval_s", 5.0)),
                switch_executor=self._switch_executor,
                channel_health=self._node_channel_health,
                buffer_levels=self._node_buffer_levels,
                capabilities={
                    "modules": sorted(node.installed_modules),
                    "kms_enabled": node.kms_enabled,
                    "switch_ports": sorted(
                        self.topo.switch_at(node_id).port_map()
                    )
                    if self.topo.switch_at(node_id)
                    else [],
                },
            )
        self._wall_driver: WallClockDriver | None = None

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    def start(self) -> "Network":
        for node_id in sorted(self.agents):
            self.agents[node_id].start()
        self.engine.call_after(0.0, self.establish_current_candidates)
        return self

    def start_live(self) -> "Network":
        self.start()
        self._wall_driver = WallClockDriver(self.engine)
        self._wall_driver.start()
        return self

    def stop(self) -> None:
        if self._wall_driver is not None:
            self._wall_driver.stop()

    def run_until(self, t: float) -> None:
        self.engine.run_until(t)

    def run_for(self, dt: float) -> None:
        self.engine.run_until(self.engine.now + dt)

    def resolve(self, obj, timeout_s: float = 30.0, horizon_s: float = 600.0):
        """Drive (sim) or wait (live) until a Provision/SwitchCommand settles.

        Callers must not hold the engine lock in live mode: the clock driver
        needs it to execute the events being waited on.
        """
        if self._wall_driver is not None:
            if not obj.done.wait(timeout_s):
                raise ControllerError("operation did not settle in time")
            return obj
        with self.engine.lock:
            deadline = self.engine.now + horizon_s
            while not obj.done.is_set():
                if self.engine.peek_time() is None or self.engine.now > deadline:
                    raise ControllerError("operation cannot settle: engine idle")
                self.engine.step()
        return obj

    # ------------------------------------------------------------------
    # Optical truth
    # ------------------------------------------------------------------

    @property
    def epoch(self) -> int:
        return self._epoch

    def current_state(self) -> dict[str, frozenset]:
        return {sid: frozenset(ccs) for sid, ccs in self.switch_states.items()}

    def candidates_now(self):
        return enumerate_feasible_channels(self.topo, self.current_state())

    def establish_current_candidates(self) -> list:
        """Bring up every candidate realizable under the present switch state."""
        live = {
            (c.emitter, c.receiver, c.path)
            for c in (s.channel for s in self.manager.channels.values())
            if c.state != "DOWN"
        }
        started = []
        for cand in sorted(
            self.candidates_now(), key=lambda c: (c.emitter, c.receiver, c.path)
        ):
            if (cand.emitter, cand.receiver, cand.path) in live:
                continue
            started.append(self.manager.establish_channel(cand, self._epoch))
        return started

    def _switch_executor(self, switch_id, cross_connects):
        """Runs inside the host node's agent on a SWITCH_CMD frame."""
        if switch_id not in self.switch_states:
            return "REJECTED", []
        self._epoch += 1
        self.switch_states[switch_id] = set(map(tuple, cross_connects))
        new_set = {
            (c.emitter, c.receiver, c.path) for c in self.candidates_now()
        }
        affected = []
        for sim in list(self.manager.channels.values()):
            ch = sim.channel
            if ch.state == "DOWN":
                continue
            if (ch.emitter, ch.receiver, ch.path) not in new_set:
                self.manager.teardown(ch.channel_id, reason="switch-reconfig")
                affected.append(ch.channel_id)
        self.establish_current_candidates()
        self.audit.append(
            "switch",
            switch_id=switch_id,
            epoch=self._epoch,
            cross_connects=sorted(map(list, cross_connects)),
            affected=sorted(affected),
        )
        return APPLIED, affected

    def _job_still_routable(self, job) -> bool:
        """A hop stays viable while a live channel or enough buffered link
        key remains for the pair."""
        need = len(job.payload_key)
        for a, b in zip(job.route[job.hop_cursor :], job.route[job.hop_cursor + 1 :]):
            if self.manager.channels_between(a, b, UP):
                continue
            if self.fabric.get(a).store.buffered_bytes(b, "link") >= need:
                continue
            return False
        return True

    # ------------------------------------------------------------------
    # Channel plumbing
    # ------------------------------------------------------------------

    def _on_blocks(self, channel, blocks, health) -> None:
        self.health[channel.channel_id] = {
            "channel_id": channel.channel_id,
            "skr_kbps": round(health.current_skr_kbps, 6),
            "qber_pct": health.current_qber_pct,
            "t": health.window_end,
        }
        if not blocks:
            return
        a = self.fabric.get(channel.emitter_node).store
        b = self.fabric.get(channel.receiver_node).store
        for block in blocks:
            a.ingest(block, channel.receiver_node)
            b.ingest(block.twin(), channel.emitter_node)

    def _on_channel_event(self, channel, event) -> None:
        agent = self.agents.get(channel.emitter_node)
        if agent is None:
            return
        agent.send_channel_event(
            {
                "channel_id": channel.channel_id,
                "event": event,
                "emitter_node": channel.emitter_node,
                "receiver_node": channel.receiver_node,
                "vendor": channel.vendor,
                "path": list(channel.path),
                "rate_hint_kbps": self.manager.channels[channel.channel_id].base_rate_kbps,
            }
        )

    def _node_channel_health(self, node_id: str) -> list[dict]:
        out = []
        for sim in self.manager.channels.values():
            ch = sim.channel
            if ch.state != UP or ch.emitter_node != node_id:
                continue
            sample = self.health.get(ch.channel_id)
            if sample is not None:
                out.append(
                    {
                        "channel_id": ch.channel_id,
                        "skr_kbps": sample["skr_kbps"],
                        "qber_pct": sample["qber_pct"],
                    }
                )
        return out

    def _node_buffer_levels(self, node_id: str) -> list[dict]:
        store = self.fabric.get(node_id).store
        return [
            {"peer": peer, "bytes": store.buffered_bytes(peer)}
            for peer in store.peers()
        ]

    # ------------------------------------------------------------------
    # Operator conveniences
    # ------------------------------------------------------------------

    def apply_switch(self, switch_id: str, cross_connects) -> SwitchCommand:
        command = SwitchCommand(
            switch_id=switch_id,
            cross_connects=tuple(tuple(c) for c in cross_connects),
        )
        self.controller.apply_switch_config(command)
        return self.resolve(command)

    def provision(self, src, dst, size_bytes, policy="single") -> Provision:
        provision = self.controller.provision_e2e_key(src, dst, size_bytes, policy)
        return self.resolve(provision)

    def warm_up(self, settle_s: float = 5.0) -> None:
        """Run past channel sync so key material is flowing."""
        self.run_for(self.manager.sync_delay_s + settle_s)

    def channels_snapshot(self) -> list[dict]:
        out = []
        for sim in self.manager.channels.values():
            ch = sim.channel
            sample = self.health.get(ch.channel_id, {})
            out.append(
                {
                    "channel_id": ch.channel_id,
                    "emitter": ch.emitter,
                    "receiver": ch.receiver,
                    "emitter_node": ch.emitter_node,
                    "receiver_node": ch.receiver_node,
                    "path": list(ch.path),
                    "band": ch.band,
                    "dwdm_channel": ch.dwdm_channel,
                    "state": ch.state,
                    "effective_loss_db": ch.effective_loss_db,
                    "skr_kbps": sample.get("skr_kbps", 0.0),
                    "qber_pct": sample.get("qber_pct"),
                }
            )
        return sorted(out, key=lambda c: c["channel_id"])
