"""Per-node local key management: storage, lifecycle, application interfaces.

Each node runs a ``LocalKms`` over one ``KeyStore``. The peer stores of a
key-generation pair hold mirrored byte streams (same blocks, same order), so
both ends can carve identical chunks without talking to each other; the
``KmsFabric`` registry stands in for the KME-to-KME synchronisation channel
where the request/response interfaces need it (served-key handoff).
"""

from __future__ import annotations

import threading
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field

from .audit import AuditLog, PairCounters, bits_digest
from .errors import (
    InsufficientKeyError,
    IntegrityFault,
    KeyExhaustedError,
    KeyIdError,
    KmsError,
    QosUnsatisfiableError,
    RateLimitedError,
    SessionClosedError,
    SizeOutOfBoundsError,
    UnknownPeerError,
    UnknownSessionError,
    UnreachableDestinationError,
)
from .eventsim import derive_rng

OPEN = "OPEN"
CLOSED = "CLOSED"


@dataclass(frozen=True)
class QoS:
    key_chunk_size_bytes: int = 32
    max_bps: float = 0.0  # 0 = best effort, no reservation
    ttl_s: float = 3600.0


@dataclass(frozen=True)
class KeyChunk:
    handle: str  # ksid or key_id
    index: int
    bits: bytes


@dataclass
class KeySession:
    ksid: str
    source: str
    destination: str
    qos: QoS
    state: str = OPEN
    next_index: int = 0  # this side's read cursor
    carve_cursor: int = 0  # shared with the twin session at the peer node
    retained: dict = field(default_factory=dict)  # index -> (bits, expires_at)
    bucket_tokens: float = 0.0
    bucket_stamp: float = 0.0


LINK_KEY = "link"
E2E_KEY = "e2e"


class _BufferEntry:
    __slots__ = ("block", "offset", "seq", "cls")

    def __init__(self, block, seq, cls):
        self.block = block
        self.offset = 0
        self.seq = seq
        self.cls = cls

    def remaining(self) -> int:
        return self.block.size_bytes - self.offset


@dataclass
class _ServedChunk:
    key_id: str
    bits: bytes
    peer_node: str
    expires_at: float
    identity: str


class KeyStore:
    """Byte-accurate per-peer FIFO of unconsumed key material.

    All mutating operations serialize through one lock, which makes the store
    linearizable; cross-store operations must take locks in canonical node
    order (see KmsFabric.pairwise).
    """

    def __init__(
        self,
        owner_node: str,
        capacity_bytes: int,
        now_fn,
        audit: AuditLog | None = None,
        forwarding_only: bool = False,
    ):
        self.owner_node = owner_node
        self.capacity_bytes = int(capacity_bytes)
        self.now = now_fn
        self.audit = audit
        self.forwarding_only = forwarding_only
        self.lock = threading.RLock()
        self._buffers: dict[str, deque[_BufferEntry]] = {}
        self._counters: dict[str, PairCounters] = {}
        self._served: dict[str, _ServedChunk] = {}
        self._consumed_ids: set[str] = set()
        self._live_ids: set[str] = set()
        self._seq = 0
        self._total_buffered = 0

    # -- bookkeeping -------------------------------------------------------

    def counters(self, peer: str) -> PairCounters:
        return self._counters.setdefault(peer, PairCounters())

    def peers(self) -> list[str]:
        return sorted(self._buffers)

    def buffered_bytes(self, peer: str, cls: str | None = None) -> int:
        with self.lock:
            if cls is None:
                return self.counters(peer).buffered
            return sum(e.remaining() for e in self._class_buf(peer, cls))

    def total_buffered(self) -> int:
        with self.lock:
            return self._total_buffered

    def _class_buf(self, peer: str, cls: str) -> deque:
        return self._buffers.setdefault(peer, {LINK_KEY: deque(), E2E_KEY: deque()})[cls]

    def _iter_oldest(self, peer: str, cls: str | None):
        """Entries toward a peer in consumption order (global FIFO by seq)."""
        buckets = self._buffers.get(peer)
        if not buckets:
            return
        if cls is not None:
            yield from buckets[cls]
            return
        link, e2e = list(buckets[LINK_KEY]), list(buckets[E2E_KEY])
        i = j = 0
        while i < len(link) or j < len(e2e):
            if j >= len(e2e) or (i < len(link) and link[i].seq < e2e[j].seq):
                yield link[i]
                i += 1
            else:
                yield e2e[j]
                j += 1

    def peek(self, peer: str, nbytes: int, cls: str | None = None) -> bytes:
        """Next nbytes toward a peer without consuming them."""
        with self.lock:
            out = bytearray()
            for entry in self._iter_oldest(peer, cls):
                if len(out) >= nbytes:
                    break
                take = min(nbytes - len(out), entry.remaining())
                out += entry.block.bits[entry.offset : entry.offset + take]
            if len(out) < nbytes:
                raise InsufficientKeyError(f"cannot peek {nbytes} B toward {peer}")
            return bytes(out)

    def persistent_octets(self):
        """Every byte string this store currently persists (audit surface)."""
        with self.lock:
            for buckets in self._buffers.values():
                for buf in buckets.values():
                    for entry in buf:
                        yield entry.block.bits[entry.offset :]
            for chunk in self._served.values():
                yield chunk.bits

    # -- ingest ------------------------------------------------------------

    def ingest(self, block, peer: str, cls: str = LINK_KEY) -> str:
        """Queue a fresh block under a peer; returns accepted|evicted_older.

        Capacity applies per pair buffer: both ends of a generation pair see
        the same inflow and outflow, so per-pair eviction keeps the mirrored
        buffers bit-identical, which a store-global high-water mark would not.
        """
        with self.lock:
            if block.consumed:
                raise IntegrityFault(f"block {block.key_id} arrived pre-consumed")
            if block.key_id in self._live_ids:
                raise IntegrityFault(f"duplicate key id {block.key_id}")
            self._live_ids.add(block.key_id)
            self._seq += 1
            self._class_buf(peer, cls).append(_BufferEntry(block, self._seq, cls))
            c = self.counters(peer)
            c.ingested += block.size_bytes
            c.buffered += block.size_bytes
            self._total_buffered += block.size_bytes
            evicted = self._enforce_capacity(peer)
            return "evicted_older" if evicted else "accepted"

    def deposit_e2e(self, peer: str, bits: bytes, key_id: str) -> None:
        """Deposit a delivered end-to-end key; never usable as relay pad."""
        from .linksim import KeyBlock  # local import to avoid a cycle

        block = KeyBlock(
            key_id=key_id,
            bits=bits,
            size_bytes=len(bits),
            channel_id="e2e",
            created_at=self.now(),
        )
        self.ingest(block, peer, cls=E2E_KEY)

    def _oldest_entry(self, peer: str):
        best = None
        for buf in self._buffers[peer].values():
            if buf and (best is None or buf[0].seq < best[0].seq):
                best = buf
        return best

    def _enforce_capacity(self, peer: str) -> bool:
        evicted = False
        c = self.counters(peer)
        while c.buffered > self.capacity_bytes:
            buf = self._oldest_entry(peer)
            n = buf[0].remaining()
            self._drop_entry(buf)
            c.expired += n
            c.buffered -= n
            self._total_buffered -= n
            evicted = True
        return evicted

    def _drop_entry(self, buf: deque) -> None:
        entry = buf.popleft()
        self._live_ids.discard(entry.block.key_id)
        if not entry.block.consumed:
            entry.block.mark_consumed()

    # -- consumption -------------------------------------------------------

    def _take(self, peer: str, nbytes: int, cls: str | None) -> bytes:
        buckets = self._buffers[peer]
        out = bytearray()
        while nbytes > 0:
            if cls is not None:
                buf = buckets[cls]
            else:
                candidates = [b for b in buckets.values() if b]
                buf = min(candidates, key=lambda b: b[0].seq)
            entry = buf[0]
            take = min(nbytes, entry.remaining())
            out += entry.block.bits[entry.offset : entry.offset + take]
            entry.offset += take
            nbytes -= take
            if entry.remaining() == 0:
                self._drop_entry(buf)
        return bytes(out)

    def carve(self, peer: str, nbytes: int) -> bytes:
        """Consume exactly nbytes toward serving; all-or-nothing."""
        with self.lock:
            if self.buffered_bytes(peer) < nbytes:
                raise InsufficientKeyError(
                    f"{self.owner_node}: {nbytes} B requested toward {peer}, "
                    f"{self.buffered_bytes(peer)} B buffered"
                )
            bits = self._take(peer, nbytes, None)
            c = self.counters(peer)
            c.served += nbytes
            c.buffered -= nbytes
            self._total_buffered -= nbytes
            return bits

    def consume_for_relay(self, peer: str, nbytes: int) -> bytes:
        """Draw one-time-pad material; only link-generated key qualifies."""
        with self.lock:
            if self.buffered_bytes(peer, LINK_KEY) < nbytes:
                raise KeyExhaustedError(
                    f"{self.owner_node}: relay needs {nbytes} B toward {peer}, "
                    f"{self.buffered_bytes(peer, LINK_KEY)} B of link key buffered"
                )
            bits = self._take(peer, nbytes, LINK_KEY)
            c = self.counters(peer)
            c.relay_consumed += nbytes
            c.buffered -= nbytes
            self._total_buffered -= nbytes
            return bits

    # -- served-key handoff (request interface) ------------------------------

    def register_served(self, key_id: str, bits: bytes, peer_node: str, ttl_s: float, identity: str) -> None:
        with self.lock:
            if key_id in self._served or key_id in self._live_ids:
                raise IntegrityFault(f"duplicate served key id {key_id}")
            self._served[key_id] = _ServedChunk(
                key_id, bits, peer_node, self.now() + ttl_s, identity
            )
            self._live_ids.add(key_id)

    def retrieve_served(self, key_id: str) -> _ServedChunk:
        with self.lock:
            chunk = self._served.get(key_id)
            if chunk is None:
                if key_id in self._consumed_ids:
                    raise KeyIdError(key_id, "consumed")
                raise KeyIdError(key_id, "unknown")
            if self.now() > chunk.expires_at:
                self._expire_served(key_id, chunk)
                raise KeyIdError(key_id, "expired")
            del self._served[key_id]
            self._live_ids.discard(key_id)
            self._consumed_ids.add(key_id)
            return chunk

    def _expire_served(self, key_id: str, chunk: _ServedChunk) -> None:
        del self._served[key_id]
        self._live_ids.discard(key_id)
        c = self.counters(chunk.peer_node)
        c.served -= len(chunk.bits)
        c.expired += len(chunk.bits)
        c.reserved -= len(chunk.bits)

    def sweep(self) -> int:
        """Expire overdue served entries; returns count removed."""
        with self.lock:
            now = self.now()
            stale = [k for k, ch in self._served.items() if now > ch.expires_at]
            for k in stale:
                self._expire_served(k, self._served[k])
            return len(stale)


class KmsFabric:
    """Registry of the per-node KMS instances (the network-wide KMS view)."""

    def __init__(self):
        self.nodes: dict[str, "LocalKms"] = {}

    def register(self, kms: "LocalKms") -> None:
        self.nodes[kms.node_id] = kms

    def get(self, node_id: str) -> "LocalKms":
        if node_id not in self.nodes:
            raise UnknownPeerError(f"no KMS at node '{node_id}'")
        return self.nodes[node_id]

    @contextmanager
    def pairwise(self, node_a: str, node_b: str):
        """Both stores locked, in canonical order (deadlock-free)."""
        stores = sorted(
            (self.get(node_a).store, self.get(node_b).store),
            key=lambda s: s.owner_node,
        )
        with stores[0].lock:
            with stores[1].lock:
                yield


def sae_node(sae_id: str) -> str:
    """Application endpoint ids take the form name@node."""
    if "@" not in sae_id:
        raise KmsError(f"application id '{sae_id}' must look like name@node")
    return sae_id.rsplit("@", 1)[1]


class LocalKms:
    """Application-facing key delivery at one node.

    Two interfaces: session-style (open/get/close with per-session QoS) and
    request-style (status / enc_keys / dec_keys with single-use key ids).
    """

    def __init__(
        self,
        node_id: str,
        store: KeyStore,
        fabric: KmsFabric,
        *,
        now_fn,
        seed,
        audit: AuditLog,
        rate_estimator=None,
        config: dict | None = None,
    ):
        cfg = dict(config or {})
        self.node_id = node_id
        self.store = store
        self.fabric = fabric
        self.now = now_fn
        self.audit = audit
        self.rate_estimator = rate_estimator
        self.default_chunk_bytes = int(cfg.get("default_chunk_bytes", 32))
        self.max_key_per_request = int(cfg.get("max_key_per_request", 128))
        self.min_key_bits = int(cfg.get("min_key_bits", 8))
        self.max_key_bits = int(cfg.get("max_key_bits", 8192))
        self.admission_fraction = float(cfg.get("admission_fraction", 0.8))
        self.ttl_s = float(cfg.get("ttl_s", 3600.0))
        self.sessions: dict[str, KeySession] = {}
        self._rng = derive_rng(seed, f"kms:{node_id}")
        self._lock = threading.RLock()
        fabric.register(self)

    # -- guards ---------------------------------------------------------------

    def _application_interface(self) -> None:
        if self.store.forwarding_only:
            raise KmsError(
                f"node {self.node_id} is a pure relay: no application interfaces"
            )

    def _fresh_id(self) -> str:
        with self._lock:
            return self._rng.getrandbits(128).to_bytes(16, "big").hex()

    # -- session interface ------------------------------------------------------

    def open_connect(self, src: str, dst: str, qos: QoS | None = None) -> str:
        self._application_interface()
        qos = qos or QoS(key_chunk_size_bytes=self.default_chunk_bytes, ttl_s=self.ttl_s)
        if sae_node(src) != self.node_id:
            raise KmsError(f"source {src} is not local to {self.node_id}")
        dst_node = sae_node(dst)
        if dst_node == self.node_id:
            raise UnreachableDestinationError("source and destination share a node")
        peer_kms = self.fabric.get(dst_node)  # UnknownPeerError if absent
        if peer_kms.store.forwarding_only:
            raise UnreachableDestinationError(f"{dst_node} is a relay node")
        estimate_kbps = None
        if self.rate_estimator is not None:
            estimate_kbps = self.rate_estimator(self.node_id, dst_node)
        if estimate_kbps is None and self.store.buffered_bytes(dst_node) == 0:
            raise UnreachableDestinationError(
                f"no key path from {self.node_id} to {dst_node}"
            )
        if qos.max_bps > 0 and estimate_kbps is not None:
            if qos.max_bps > self.admission_fraction * estimate_kbps * 1000.0:
                raise QosUnsatisfiableError(
                    f"requested {qos.max_bps} bps exceeds admissible share of "
                    f"{estimate_kbps} kbps deliverable"
                )
        ksid = self._fresh_id()
        self._install_session(ksid, src, dst, qos)
        peer_kms._install_session(ksid, src, dst, qos)  # KME-synchronised twin
        return ksid

    def _install_session(self, ksid: str, src: str, dst: str, qos: QoS) -> None:
        session = KeySession(
            ksid=ksid,
            source=src,
            destination=dst,
            qos=qos,
            bucket_tokens=float(qos.max_bps),
            bucket_stamp=self.now(),
        )
        with self._lock:
            self.sessions[ksid] = session

    def _session(self, ksid: str) -> KeySession:
        session = self.sessions.get(ksid)
        if session is None:
            raise UnknownSessionError(f"unknown ksid {ksid}")
        return session

    def _rate_limit(self, session: KeySession, nbits: int) -> None:
        if session.qos.max_bps <= 0:
            return
        now = self.now()
        session.bucket_tokens = min(
            float(session.qos.max_bps),
            session.bucket_tokens + (now - session.bucket_stamp) * session.qos.max_bps,
        )
        session.bucket_stamp = now
        if session.bucket_tokens < nbits:
            raise RateLimitedError(
                f"session {session.ksid} exceeded {session.qos.max_bps} bps"
            )
        session.bucket_tokens -= nbits

    def _session_peer(self, session: KeySession) -> str:
        peer = sae_node(session.destination)
        return peer if peer != self.node_id else sae_node(session.source)

    def get_key(self, ksid: str, index: int | None = None) -> KeyChunk:
        """Serve the chunk at next_index (or an already-carved earlier index).

        Chunk octets are carved from the mirrored pair buffers exactly once,
        by whichever endpoint asks first; the twin session retains the same
        octets for the other side. Serialised through the pair's store locks.
        """
        self._application_interface()
        with self._lock:
            session = self._session(ksid)
        peer_node = self._session_peer(session)
        with self.fabric.pairwise(self.node_id, peer_node):
            if session.state == CLOSED:
                raise SessionClosedError(f"session {ksid} is closed")
            size = session.qos.key_chunk_size_bytes
            now = self.now()
            idx = session.next_index if index is None else index
            held = session.retained.get(idx)
            if held is not None:
                bits, expires_at = held
                if now > expires_at:
                    raise KeyIdError(str(idx), "expired")
            elif idx == session.carve_cursor:
                self._rate_limit(session, size * 8)
                bits = self._carve_session_chunk(session, peer_node, idx, size, now)
            elif idx > session.carve_cursor:
                raise KmsError(
                    f"chunk {idx} not yet served (next is {session.carve_cursor})"
                )
            else:
                raise KeyIdError(str(idx), "expired")
            if idx == session.next_index:
                session.next_index += 1
            side = "src" if sae_node(session.source) == self.node_id else "dst"
            self.audit.append(
                "serve",
                identity=f"session:{ksid}:{idx}",
                side=side,
                node=self.node_id,
                key_id=None,
                bits_hash=bits_digest(bits),
                size=size,
            )
            return KeyChunk(ksid, idx, bits)

    def _carve_session_chunk(
        self, session: KeySession, peer_node: str, idx: int, size: int, now: float
    ) -> bytes:
        peer_kms = self.fabric.get(peer_node)
        try:
            bits = self.store.carve(peer_node, size)
        except InsufficientKeyError as exc:
            raise KeyExhaustedError(str(exc)) from exc
        twin_bits = peer_kms.store.carve(self.node_id, size)
        if twin_bits != bits:
            raise IntegrityFault(
                f"peer stores desynchronised between {self.node_id} and {peer_node}"
            )
        expires_at = now + session.qos.ttl_s
        session.retained[idx] = (bits, expires_at)
        session.carve_cursor = idx + 1
        twin = peer_kms.sessions.get(session.ksid)
        if twin is not None and twin.state == OPEN:
            twin.retained[idx] = (bits, expires_at)
            twin.carve_cursor = idx + 1
        return bits

    def close(self, ksid: str, _propagate: bool = True) -> str:
        self._application_interface()
        with self._lock:
            session = self._session(ksid)
            if session.state == OPEN:
                session.state = CLOSED
                session.retained.clear()  # reserved-but-unfetched is discarded
        if _propagate:
            for node in (sae_node(session.source), sae_node(session.destination)):
                if node != self.node_id and ksid in self.fabric.get(node).sessions:
                    self.fabric.get(node).close(ksid, _propagate=False)
        return "ok"

    # -- request interface -------------------------------------------------------

    def _check_size_bits(self, size_bits: int) -> int:
        if size_bits % 8 != 0:
            raise SizeOutOfBoundsError(f"size {size_bits} bits is not a whole byte count")
        if not (self.min_key_bits <= size_bits <= self.max_key_bits):
            raise SizeOutOfBoundsError(
                f"size {size_bits} bits outside [{self.min_key_bits}, {self.max_key_bits}]"
            )
        return size_bits // 8

    def etsi14_status(self, master_sae: str, slave_sae: str) -> dict:
        self._application_interface()
        slave_node = sae_node(slave_sae)
        self.fabric.get(slave_node)  # must exist and run a KMS
        stored = self.store.buffered_bytes(slave_node)
        return {
            "source_KME_ID": self.node_id,
            "target_KME_ID": slave_node,
            "master_SAE_ID": master_sae,
            "slave_SAE_ID": slave_sae,
            "stored_key_count": stored // self.default_chunk_bytes,
            "max_key_count": self.store.capacity_bytes // self.default_chunk_bytes,
            "key_size": self.default_chunk_bytes * 8,
            "max_key_per_request": self.max_key_per_request,
            "max_key_size": self.max_key_bits,
            "min_key_size": self.min_key_bits,
        }

    def etsi14_get_enc_keys(
        self, master_sae: str, slave_sae: str, number: int, size_bits: int | None = None
    ) -> list[dict]:
        self._application_interface()
        if number < 1:
            raise SizeOutOfBoundsError("number must be >= 1")
        if number > self.max_key_per_request:
            raise SizeOutOfBoundsError(
                f"number {number} exceeds max_key_per_request {self.max_key_per_request}"
            )
        size_bytes = self._check_size_bits(
            size_bits if size_bits is not None else self.default_chunk_bytes * 8
        )
        slave_node = sae_node(slave_sae)
        slave = self.fabric.get(slave_node)
        slave._application_interface()
        total = number * size_bytes
        with self.fabric.pairwise(self.node_id, slave_node):
            if self.store.buffered_bytes(slave_node) < total:
                raise InsufficientKeyError(
                    f"{number} x {size_bytes} B requested, "
                    f"{self.store.buffered_bytes(slave_node)} B buffered"
                )
            out = []
            for _ in range(number):
                bits = self.store.carve(slave_node, size_bytes)
                mirror = slave.store.carve(self.node_id, size_bytes)
                if mirror != bits:
                    raise IntegrityFault(
                        f"peer stores desynchronised between {self.node_id} and {slave_node}"
                    )
                key_id = self._fresh_id()
                identity = f"etsi14:{master_sae}:{slave_sae}:{key_id}"
                slave.store.register_served(key_id, bits, self.node_id, self.ttl_s, identity)
                # registration keeps the octets reserved at the slave store
                slave.store.counters(self.node_id).reserved += size_bytes
                self.audit.append(
                    "serve",
                    identity=identity,
                    side="master",
                    node=self.node_id,
                    key_id=key_id,
                    bits_hash=bits_digest(bits),
                    size=size_bytes,
                )
                out.append({"key_ID": key_id, "key": bits})
            return out

    def etsi14_get_keys_with_ids(
        self, slave_sae: str, master_sae: str, key_ids: list[str]
    ) -> tuple[list[dict], list[dict]]:
        """Slave-side retrieval; returns (keys, per-id errors)."""
        self._application_interface()
        keys, errors = [], []
        for key_id in key_ids:
            try:
                chunk = self.store.retrieve_served(key_id)
            except KeyIdError as exc:
                errors.append({"key_ID": key_id, "error": exc.reason})
                continue
            self.store.counters(chunk.peer_node).reserved -= len(chunk.bits)
            self.audit.append(
                "serve",
                identity=chunk.identity,
                side="slave",
                node=self.node_id,
                key_id=key_id,
                bits_hash=bits_digest(chunk.bits),
                size=len(chunk.bits),
            )
            keys.append({"key_ID": key_id, "key": chunk.bits})
        return keys, errors
