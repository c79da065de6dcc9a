"""Per-node SDN agent: the controller's counterpart inside each node.

Speaks the southbound frame protocol only; bridges controller commands to
the node-local switch hardware and forwarding module, and pushes heartbeat
and telemetry the other way. Key octets never enter a frame to the
controller.
"""

from __future__ import annotations

from . import southbound as sb
from .eventsim import EntropyStream
from .forwarding import DELIVERED, FAILED, ForwardingPlane, TransportJob


class NodeAgent:
    def __init__(
        self,
        node_id: str,
        transport,
        engine,
        plane: ForwardingPlane,
        *,
        seed,
        heartbeat_interval_s: float = 5.0,
        telemetry_interval_s: float = 5.0,
        switch_executor=None,  # fn(switch_id, cross_connects) -> (result, affected)
        channel_health=None,  # fn(node_id) -> list of health dicts
        buffer_levels=None,  # fn(node_id) -> list of {peer, bytes}
        capabilities=None,
    ):
        self.node_id = node_id
        self.transport = transport
        self.engine = engine
        self.plane = plane
        self.heartbeat_interval_s = heartbeat_interval_s
        self.telemetry_interval_s = telemetry_interval_s
        self.switch_executor = switch_executor
        self.channel_health = channel_health or (lambda node: [])
        self.buffer_levels = buffer_levels or (lambda node: [])
        self.capabilities = capabilities or {}
        self._payload_rng = EntropyStream(seed, f"payload:{node_id}")
        self._groups: dict[str, dict] = {}
        transport.attach(self.endpoint, self._on_frame)

    @property
    def endpoint(self) -> str:
        return f"agent:{self.node_id}"

    # -- lifecycle -------------------------------------------------------

    def start(self) -> None:
        self.transport.send(
            "controller",
            sb.REGISTER,
            {
                "node_id": self.node_id,
                "capabilities": self.capabilities,
                "heartbeat_interval_s": self.heartbeat_interval_s,
            },
        )
        self.engine.spawn(self._heartbeat_loop(), delay=self.heartbeat_interval_s)
        self.engine.spawn(self._telemetry_loop(), delay=self.telemetry_interval_s)

    def _heartbeat_loop(self):
        while True:
            self.transport.send("controller", sb.HEARTBEAT, {"node_id": self.node_id})
            yield self.heartbeat_interval_s

    def _telemetry_loop(self):
        while True:
            self.transport.send(
                "controller",
                sb.TELEMETRY,
                {
                    "node_id": self.node_id,
                    "channels": self.channel_health(self.node_id),
                    "buffers": self.buffer_levels(self.node_id),
                },
            )
            yield self.telemetry_interval_s

    def send_channel_event(self, payload: dict) -> None:
        self.transport.send("controller", sb.CHANNEL_EVENT, payload)

    # -- frame handling -----------------------------------------------------

    def _on_frame(self, msg_type: int, payload: dict) -> None:
        if msg_type == sb.SWITCH_CMD:
            self._exec_switch(payload)
        elif msg_type == sb.RELAY_CMD:
            self._exec_relay(payload)

    def _exec_switch(self, payload: dict) -> None:
        result, affected = "REJECTED", []
        if self.switch_executor is not None:
            result, affected = self.switch_executor(
                payload["switch_id"],
                tuple((a, b) for a, b in payload["cross_connects"]),
            )
        self.transport.send(
            "controller",
            sb.SWITCH_CMD,
            {
                "switch_id": payload["switch_id"],
                "result": result,
                "affected_channels": list(affected),
            },
        )

    def _exec_relay(self, payload: dict) -> None:
        provision_id = payload["provision_id"]
        jobs = payload["jobs"]
        group = {
            "provision_id": provision_id,
            "pending": len(jobs),
            "t0": self.engine.now,
            "jobs": [],
            "failed": None,
        }
        self._groups[provision_id] = group
        combine = payload.get("combine", False)
        for spec in jobs:
            payload_key = self._payload_rng.take(payload["size_bytes"])
            job = TransportJob(
                job_id=spec["job_id"],
                src_node=self.node_id,
                dst_node=spec["route"][-1],
                payload_key=payload_key,
                route=tuple(spec["route"]),
                group_id=provision_id if combine else None,
                group_size=len(jobs) if combine else 1,
                vendor=spec.get("vendor"),
                on_done=lambda job, g=group: self._job_done(g, job),
            )
            self.plane.submit(job)

    def _job_done(self, group: dict, job: TransportJob) -> None:
        group["pending"] -= 1
        group["jobs"].append(
            {
                "job_id": job.job_id,
                "status": job.status,
                "route": list(job.route),
                "vendor": job.vendor,
                "hops": len(job.route) - 1,
            }
        )
        if job.status == FAILED and group["failed"] is None:
            group["failed"] = job.failure
        if group["pending"] > 0:
            return
        del self._groups[group["provision_id"]]
        status = DELIVERED if group["failed"] is None else FAILED
        self.transport.send(
            "controller",
            sb.RELAY_RESULT,
            {
                "provision_id": group["provision_id"],
                "status": status,
                "jobs": sorted(group["jobs"], key=lambda j: j["job_id"]),
                "latency_s": round(self.engine.now - group["t0"], 9),
                "failure": group["failed"],
            },
        )
