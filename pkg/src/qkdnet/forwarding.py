"""Trusted-relay key transport: hop-by-hop one-time-pad over link keys.

Each hop consumes exactly payload-length bytes of the hop pair's link key,
sends payload XOR pad, and the far side strips the pad with its mirrored
copy. Intermediate nodes see the payload only in transit memory, never in a
persistent store. Multi-source combination XORs per-vendor deliveries so one
honest supplier is enough.
"""

from __future__ import annotations

from dataclasses import dataclass

from .audit import AuditLog, bits_digest
from .errors import (
    ForwardingError,
    KeyExhaustedError,
)
from .kms import KmsFabric

PENDING = "PENDING"
IN_FLIGHT = "IN_FLIGHT"
DELIVERED = "DELIVERED"
FAILED = "FAILED"


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ForwardingError(f"xor length mismatch: {len(a)} vs {len(b)}")
    return (
        int.from_bytes(a, "big") ^ int.from_bytes(b, "big")
    ).to_bytes(len(a), "big")


@dataclass(frozen=True)
class CombinedKeySpec:
    component_sources: tuple  # ((pair, vendor), ...)
    output_size_bytes: int
    require_independent: bool = True


def combine_keys(spec: CombinedKeySpec, fetched_components: list[bytes]) -> bytes:
    """Bytewise XOR of all components; secure while any one source is honest."""
    if len(fetched_components) < len(spec.component_sources):
        raise ForwardingError(
            f"{len(spec.component_sources)} sources required, "
            f"{len(fetched_components)} supplied"
        )
    if spec.require_independent:
        vendors = {vendor for _, vendor in spec.component_sources}
        if len(vendors) < 2:
            raise ForwardingError("independence requires >= 2 distinct vendors")
    out = bytes(spec.output_size_bytes)
    for comp in fetched_components:
        if len(comp) != spec.output_size_bytes:
            raise ForwardingError(
                f"component length {len(comp)} != {spec.output_size_bytes}"
            )
        out = xor_bytes(out, comp)
    return out


def estimate_delivery_latency(
    route_nodes: list[str],
    payload_size_bytes: int,
    buffer_states: dict,
    link_rates_kbps: dict,
    hop_delay_s: float,
) -> float:
    """Fixed per-hop processing plus refill wait on short buffers.

    ``buffer_states`` and ``link_rates_kbps`` are keyed by the unordered hop
    pair frozenset({a, b}).
    """
    total = 0.0
    for a, b in zip(route_nodes, route_nodes[1:]):
        pair = frozenset((a, b))
        total += hop_delay_s
        available = buffer_states.get(pair, 0)
        deficit = max(0, payload_size_bytes - available)
        if deficit:
            rate = link_rates_kbps.get(pair, 0.0)
            if rate <= 0:
                raise ForwardingError(f"hop {a}-{b} has no key generation")
            total += deficit * 8 / (rate * 1000.0)
    return total


@dataclass
class TransportJob:
    job_id: str
    src_node: str
    dst_node: str
    payload_key: bytes
    route: tuple[str, ...]  # node sequence, src first
    hop_cursor: int = 0
    status: str = PENDING
    failure: str | None = None
    submitted_at: float = 0.0
    delivered_at: float | None = None
    # group fields for multi-source combination
    group_id: str | None = None
    group_size: int = 1
    vendor: str | None = None
    deposit: bool = True
    on_done: object = None


class ForwardingPlane:
    """One forwarding module per node; hop frames travel over the node bus.

    ``bus.send_hop(frame)`` must deliver the dict to the next node's plane
    via ``receive_hop`` after the configured hop delay.
    """

    def __init__(
        self,
        node_id: str,
        fabric: KmsFabric,
        engine,
        audit: AuditLog,
        bus,
        *,
        hop_delay_s: float = 0.0005,
        retry_base_s: float = 0.5,
        retry_cap_s: float = 8.0,
        retry_deadline_s: float = 60.0,
        on_exhaustion: str = "fail",  # fail | park
        validity_check=None,
    ):
        self.node_id = node_id
        self.fabric = fabric
        self.engine = engine
        self.audit = audit
        self.bus = bus
        self.hop_delay_s = hop_delay_s
        self.retry_base_s = retry_base_s
        self.retry_cap_s = retry_cap_s
        self.retry_deadline_s = retry_deadline_s
        self.on_exhaustion = on_exhaustion
        self.validity_check = validity_check
        self._staging: dict[str, list] = {}  # group_id -> [(idx, payload, vendor)]
        self.jobs: dict[str, TransportJob] = {}

    # -- submission ----------------------------------------------------------

    def submit(self, job: TransportJob) -> TransportJob:
        if job.route[0] != self.node_id:
            raise ForwardingError(f"job {job.job_id} does not start at {self.node_id}")
        if len(job.route) < 2:
            raise ForwardingError("route needs at least one hop")
        job.submitted_at = self.engine.now
        job.status = IN_FLIGHT
        self.jobs[job.job_id] = job
        self.engine.call_after(0.0, self._send_hop, job, job.payload_key)
        return job

    # -- hop machinery ---------------------------------------------------------

    def _send_hop(self, job: TransportJob, payload: bytes) -> None:
        """Runs at the node job.route[job.hop_cursor]; pads and forwards."""
        here = job.route[job.hop_cursor]
        nxt = job.route[job.hop_cursor + 1]
        if self.validity_check is not None and not self.validity_check(job):
            self._fail(job, "route invalidated", resumable=False)
            return
        store = self.fabric.get(here).store
        try:
            pad = store.consume_for_relay(nxt, len(payload))
        except KeyExhaustedError:
            self._handle_exhaustion(job, payload)
            return
        self.audit.append(
            "relay_hop",
            job_id=job.job_id,
            hop=job.hop_cursor,
            node=here,
            peer=nxt,
            bytes=len(payload),
            pad_hash=bits_digest(pad),
        )
        ciphertext = xor_bytes(payload, pad)
        frame = {
            "job_id": job.job_id,
            "hop": job.hop_cursor,
            "ciphertext": ciphertext.hex(),
            "route": list(job.route),
            "src": job.src_node,
            "dst": job.dst_node,
            "t0": job.submitted_at,
            "group_id": job.group_id,
            "group_size": job.group_size,
            "vendor": job.vendor,
            "deposit": job.deposit,
        }
        self.bus.send_hop(here, nxt, frame, self.hop_delay_s)

    def _handle_exhaustion(self, job: TransportJob, payload: bytes) -> None:
        if self.on_exhaustion != "park":
            self._fail(job, "hop key exhausted", resumable=False)
            return
        waited = self.engine.now - job.submitted_at
        if waited >= self.retry_deadline_s:
            self._fail(job, "hop key exhausted (deadline)", resumable=False)
            return
        attempt = getattr(job, "_attempt", 0) + 1
        job._attempt = attempt
        delay = min(self.retry_base_s * (2 ** (attempt - 1)), self.retry_cap_s)
        self.engine.call_after(delay, self._send_hop, job, payload)

    def receive_hop(self, frame: dict) -> None:
        """Strip this hop's pad; deliver here or forward onward."""
        route = tuple(frame["route"])
        hop = frame["hop"]
        here = route[hop + 1]
        prev = route[hop]
        assert here == self.node_id
        store = self.fabric.get(here).store
        ciphertext = bytes.fromhex(frame["ciphertext"])
        try:
            pad = store.consume_for_relay(prev, len(ciphertext))
        except KeyExhaustedError:
            # mirrored stores cannot diverge: the sender consumed its copy
            raise ForwardingError(
                f"mirror pad missing at {here} for job {frame['job_id']}"
            )
        payload = xor_bytes(ciphertext, pad)
        job = self._job_view(frame, payload)
        if here == route[-1]:
            self._deliver(job, payload)
        else:
            job.hop_cursor = hop + 1
            self.jobs[job.job_id] = job
            self.engine.call_after(0.0, self._send_hop, job, payload)

    def _job_view(self, frame: dict, payload: bytes) -> TransportJob:
        job = self.jobs.get(frame["job_id"])
        if job is None:
            job = TransportJob(
                job_id=frame["job_id"],
                src_node=frame["src"],
                dst_node=frame["dst"],
                payload_key=payload,
                route=tuple(frame["route"]),
                hop_cursor=frame["hop"],
                status=IN_FLIGHT,
                submitted_at=frame.get("t0", self.engine.now),
                group_id=frame.get("group_id"),
                group_size=frame.get("group_size", 1),
                vendor=frame.get("vendor"),
                deposit=frame.get("deposit", True),
            )
        return job

    # -- completion ----------------------------------------------------------------

    def _deliver(self, job: TransportJob, payload: bytes) -> None:
        self.audit.append(
            "relay_result",
            job_id=job.job_id,
            status=DELIVERED,
            hops=len(job.route) - 1,
            bytes=len(payload),
        )
        if job.group_id is not None:
            self._stage_component(job, payload)
        elif job.deposit:
            self._deposit_pair_key(job.src_node, job.dst_node, payload, f"e2e-{job.job_id}")
        self._finalize(job, DELIVERED)

    def _stage_component(self, job: TransportJob, payload: bytes) -> None:
        staged = self._staging.setdefault(job.group_id, [])
        staged.append((job.job_id, payload, job.vendor))
        if len(staged) == job.group_size:
            staged.sort(key=lambda item: item[0])
            spec = CombinedKeySpec(
                component_sources=tuple(
                    ((job.src_node, job.dst_node), vendor) for _, _, vendor in staged
                ),
                output_size_bytes=len(payload),
                require_independent=True,
            )
            combined = combine_keys(spec, [p for _, p, _ in staged])
            self._deposit_pair_key(
                job.src_node, job.dst_node, combined, f"e2e-{job.group_id}"
            )
            del self._staging[job.group_id]
            self.audit.append(
                "relay_result",
                job_id=job.group_id,
                status="COMBINED",
                components=len(staged),
                bytes=len(combined),
            )

    def _deposit_pair_key(self, src: str, dst: str, bits: bytes, key_id: str) -> None:
        self.fabric.get(dst).store.deposit_e2e(src, bits, key_id)
        self.fabric.get(src).store.deposit_e2e(dst, bits, key_id)

    def _fail(self, job: TransportJob, reason: str, resumable: bool) -> None:
        self.audit.append(
            "relay_result",
            job_id=job.job_id,
            status=FAILED,
            reason=reason,
            resumable=resumable,
            hop=job.hop_cursor,
        )
        self._finalize(job, FAILED, reason)

    def _finalize(self, job: TransportJob, status: str, reason: str | None = None) -> None:
        """Resolve the submitter's job record, wherever completion happened."""
        origin = self.bus.planes.get(job.src_node) if self.bus else None
        master = (origin.jobs.get(job.job_id) if origin else None) or job
        master.status = status
        master.failure = reason
        master.hop_cursor = job.hop_cursor
        if status == DELIVERED:
            master.delivered_at = self.engine.now
        if master.on_done is not None:
            master.on_done(master)


class NodeBus:
    """Inter-node control channel carrying hop frames with a fixed delay."""

    def __init__(self, engine):
        self.engine = engine
        self.planes: dict[str, ForwardingPlane] = {}

    def register(self, plane: ForwardingPlane) -> None:
        self.planes[plane.node_id] = plane

    def send_hop(self, src: str, dst: str, frame: dict, delay_s: float) -> None:
        plane = self.planes.get(dst)
        if plane is None:
            raise ForwardingError(f"no forwarding module at {dst}")
        self.engine.call_after(delay_s, plane.receive_hop, frame)
