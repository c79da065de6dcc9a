"""Append-only audit log plus the oracles that consume it.

Every key-serving and key-forwarding action lands here as one record. The
single-use auditor and the conservation checker are intentionally dumb
replays of those records, independent of the store implementation they
check.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass


def bits_digest(bits: bytes) -> str:
    return hashlib.sha256(bits).hexdigest()


class AuditLog:
    """Ordered, append-only event log. Records are plain JSON-able dicts."""

    def __init__(self, now_fn=None):
        self._records: list[dict] = []
        self._seq = 0
        self._now = now_fn or (lambda: 0.0)
        self._lock = threading.Lock()

    def append(self, kind: str, **fields) -> dict:
        with self._lock:
            self._seq += 1
            rec = {"seq": self._seq, "t": round(self._now(), 6), "kind": kind}
            rec.update(fields)
            self._records.append(rec)
            return rec

    def records(self, kind: str | None = None) -> list[dict]:
        with self._lock:
            if kind is None:
                return list(self._records)
            return [r for r in self._records if r["kind"] == kind]

    def dump_jsonl(self) -> bytes:
        with self._lock:
            return (
                "\n".join(json.dumps(r, sort_keys=True) for r in self._records) + "\n"
            ).encode() if self._records else b""

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


@dataclass
class AuditViolation:
    rule: str
    detail: str
    record: dict


class SingleUseAuditor:
    """Checks that no key id and no key octets are ever served twice.

    Rules, replayed over `serve` records:
      * a key_id binds to exactly one delivery identity and one payload hash;
      * each (identity, side) is served at most once, except idempotent
        re-reads carrying the identical payload hash;
      * a payload hash never appears under two identities;
      * octets consumed by the relay layer never surface as served chunks.
    """

    def __init__(self):
        self.violations: list[AuditViolation] = []
        self._id_owner: dict[str, tuple[str, str]] = {}  # key_id -> (identity, hash)
        self._hash_owner: dict[str, str] = {}  # bits hash -> identity
        self._sides: dict[tuple[str, str], str] = {}  # (identity, side) -> hash
        self._relay_hashes: set[str] = set()

    def feed(self, record: dict) -> None:
        kind = record.get("kind")
        if kind == "relay_hop":
            h = record.get("pad_hash")
            if h:
                if h in self._hash_owner:
                    self._fail("relay-reuse", f"relay pad also served as {self._hash_owner[h]}", record)
                self._relay_hashes.add(h)
            return
        if kind != "serve":
            return
        identity, side, key_id, h = (
            record["identity"],
            record.get("side", "-"),
            record.get("key_id"),
            record["bits_hash"],
        )
        if key_id is not None:
            owner = self._id_owner.get(key_id)
            if owner is None:
                self._id_owner[key_id] = (identity, h)
            elif owner != (identity, h):
                self._fail("key-id-reuse", f"key_id {key_id} under {owner[0]} and {identity}", record)
        prev = self._hash_owner.get(h)
        if prev is None:
            self._hash_owner[h] = identity
        elif prev != identity:
            self._fail("octet-reuse", f"same octets under {prev} and {identity}", record)
        if h in self._relay_hashes:
            self._fail("relay-reuse", "served octets were consumed as relay pad", record)
        seen = self._sides.get((identity, side))
        if seen is None:
            self._sides[(identity, side)] = h
        elif seen != h:
            self._fail("side-mismatch", f"{identity}/{side} re-served different octets", record)

    def _fail(self, rule: str, detail: str, record: dict) -> None:
        self.violations.append(AuditViolation(rule, detail, record))

    def run(self, log: AuditLog) -> list[AuditViolation]:
        for rec in log.records():
            self.feed(rec)
        return self.violations

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class PairCounters:
    ingested: int = 0
    served: int = 0
    expired: int = 0
    relay_consumed: int = 0
    buffered: int = 0
    reserved: int = 0  # in served_index awaiting peer retrieval; subset of served


def check_conservation(counters: PairCounters) -> bool:
    """ingested = served + buffered + expired + relay_consumed, exactly."""
    return (
        counters.ingested
        == counters.served + counters.buffered + counters.expired + counters.relay_consumed
    )
