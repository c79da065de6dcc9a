"""Use-case workloads and metric collection.

Reproduces the application-level measurement style: packet-attestation
latency overhead, cloud key-request load, encrypted-stream feeding, key
combination latencies, gated key-as-a-service access, and a rate-capped
entropy service. Every workload is a deterministic function of
(seed, spec, config) running on the shared event engine.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .audit import SingleUseAuditor
from .errors import (
    HarnessError,
    InsufficientKeyError,
    KeyExhaustedError,
    KmsError,
    SizeOutOfBoundsError,
    UnknownExperimentError,
)
from .eventsim import EntropyStream, derive_rng
from .kms import QoS
from .linksim import KeyBlock

OPOT = "OPOT"
CLOUD_LOAD = "CLOUD_LOAD"
EHEALTH_STREAM = "EHEALTH_STREAM"
INDEPENDENT_SOURCES = "INDEPENDENT_SOURCES"
KAAS = "KAAS"

USE_CASES = (OPOT, CLOUD_LOAD, EHEALTH_STREAM, INDEPENDENT_SOURCES, KAAS)


@dataclass(frozen=True)
class MetricRecord:
    experiment_id: str
    timestamp: float
    metric_name: str
    value: float
    unit: str
    tags: tuple[tuple[str, str], ...] = ()

    def tag_dict(self) -> dict:
        return dict(self.tags)


@dataclass(frozen=True)
class WorkloadSpec:
    experiment_id: str
    use_case: str
    duration_s: float
    endpoints: tuple[str, str]
    params: dict = field(default_factory=dict)


def validate_spec(raw: dict, topo=None) -> WorkloadSpec:
    for fieldname in ("experiment_id", "use_case", "duration_s"):
        if fieldname not in raw:
            raise HarnessError(f"experiment spec missing field '{fieldname}'")
    if raw["use_case"] not in USE_CASES:
        raise HarnessError(
            f"unknown use_case '{raw['use_case']}' (field 'use_case'; "
            f"expected one of {', '.join(USE_CASES)})"
        )
    endpoints = tuple(raw.get("endpoints", ()))
    if raw["use_case"] != INDEPENDENT_SOURCES and len(endpoints) != 2:
        raise HarnessError("experiment spec field 'endpoints' must name two nodes")
    if topo is not None:
        for node in endpoints:
            if node not in topo.nodes:
                raise HarnessError(f"endpoint '{node}' not in topology (field 'endpoints')")
            if not topo.nodes[node].kms_enabled:
                raise HarnessError(
                    f"endpoint '{node}' is a relay without application interfaces "
                    f"(field 'endpoints')"
                )
    known = {"experiment_id", "use_case", "duration_s", "endpoints", "params", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise HarnessError(f"unknown spec field '{sorted(unknown)[0]}'")
    return WorkloadSpec(
        experiment_id=str(raw["experiment_id"]),
        use_case=raw["use_case"],
        duration_s=float(raw["duration_s"]),
        endpoints=endpoints,
        params=dict(raw.get("params", {})),
    )


class MetricsStore:
    """Per-experiment append-only metric records with stable export order."""

    COLUMNS = ("experiment_id", "timestamp", "metric_name", "value", "unit", "tags")

    def __init__(self):
        self._by_experiment: dict[str, list[MetricRecord]] = {}

    def append(self, record: MetricRecord) -> None:
        records = self._by_experiment.setdefault(record.experiment_id, [])
        if records and record.timestamp < records[-1].timestamp:
            raise HarnessError("metric timestamps must be monotone per experiment")
        records.append(record)

    def add(self, experiment_id, timestamp, metric_name, value, unit, **tags):
        self.append(
            MetricRecord(
                experiment_id,
                float(timestamp),
                metric_name,
                float(value),
                unit,
                tuple(sorted((k, str(v)) for k, v in tags.items())),
            )
        )

    def records(self, experiment_id: str) -> list[MetricRecord]:
        if experiment_id not in self._by_experiment:
            raise UnknownExperimentError(f"unknown experiment '{experiment_id}'")
        return list(self._by_experiment[experiment_id])

    def experiments(self) -> list[str]:
        return sorted(self._by_experiment)

    def export(self, experiment_id: str, fmt: str = "csv") -> str:
        records = self.records(experiment_id)
        if fmt == "csv":
            out = io.StringIO()
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(self.COLUMNS)
            for r in records:
                writer.writerow(
                    [
                        r.experiment_id,
                        repr(r.timestamp),
                        r.metric_name,
                        repr(r.value),
                        r.unit,
                        json.dumps(dict(r.tags), sort_keys=True),
                    ]
                )
            return out.getvalue()
        if fmt == "jsonl":
            lines = [
                json.dumps(
                    {
                        "experiment_id": r.experiment_id,
                        "timestamp": r.timestamp,
                        "metric_name": r.metric_name,
                        "value": r.value,
                        "unit": r.unit,
                        "tags": dict(r.tags),
                    },
                    sort_keys=True,
                )
                for r in records
            ]
            return "\n".join(lines) + "\n"
        raise HarnessError(f"unknown export format '{fmt}'")

    @staticmethod
    def parse(text: str, fmt: str = "csv") -> list[MetricRecord]:
        records = []
        if fmt == "csv":
            reader = csv.reader(io.StringIO(text))
            header = next(reader)
            if tuple(header) != MetricsStore.COLUMNS:
                raise HarnessError("unexpected CSV header")
            for row in reader:
                records.append(
                    MetricRecord(
                        row[0],
                        float(row[1]),
                        row[2],
                        float(row[3]),
                        row[4],
                        tuple(sorted(json.loads(row[5]).items())),
                    )
                )
            return records
        if fmt == "jsonl":
            for line in text.splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                records.append(
                    MetricRecord(
                        obj["experiment_id"],
                        float(obj["timestamp"]),
                        obj["metric_name"],
                        float(obj["value"]),
                        obj["unit"],
                        tuple(sorted((k, str(v)) for k, v in obj["tags"].items())),
                    )
                )
            return records
        raise HarnessError(f"unknown export format '{fmt}'")


# ---------------------------------------------------------------------------
# Entropy service stub
# ---------------------------------------------------------------------------


class EntropyService:
    """On-demand random octets, service rate capped at the configured Gbps.

    Requests queue FIFO: each is ready once the shared service line has
    processed its bits.
    """

    def __init__(self, engine, seed, rate_gbps: float = 4.0,
                 max_request_bytes: int = 1 << 20, host_node: str | None = None):
        self.engine = engine
        self.rate_bits_per_s = rate_gbps * 1e9
        self.max_request_bytes = int(max_request_bytes)
        self.host_node = host_node
        self._stream = EntropyStream(seed, f"qrng:{host_node or 'svc'}")
        self._line_free_at = 0.0
        self.served_requests = 0
        self.served_bytes = 0

    def request(self, n_bytes: int) -> tuple[bytes, float]:
        """Returns (octets, ready_at). ready_at respects the rate cap."""
        if n_bytes < 1:
            raise SizeOutOfBoundsError("entropy request must be >= 1 byte")
        if n_bytes > self.max_request_bytes:
            raise SizeOutOfBoundsError(
                f"entropy request {n_bytes} B exceeds maximum {self.max_request_bytes} B"
            )
        start = max(self.engine.now, self._line_free_at)
        ready_at = start + n_bytes * 8 / self.rate_bits_per_s
        self._line_free_at = ready_at
        self.served_requests += 1
        self.served_bytes += n_bytes
        return self._stream.take(n_bytes), ready_at


def entropy_request(service: EntropyService, n_bytes: int) -> bytes:
    octets, _ = service.request(n_bytes)
    return octets


# ---------------------------------------------------------------------------
# Workloads
# ---------------------------------------------------------------------------


class Harness:
    def __init__(self, net, metrics: MetricsStore | None = None):
        self.net = net
        self.metrics = metrics or MetricsStore()
        qrng_cfg = dict(net.topo.settings.get("qrng") or {})
        self.entropy_service = EntropyService(
            net.engine,
            net.seed,
            rate_gbps=float(qrng_cfg.get("rate_gbps", 4.0)),
            max_request_bytes=int(qrng_cfg.get("max_request_bytes", 1 << 20)),
            host_node=qrng_cfg.get("host_node"),
        )

    def run(self, spec: WorkloadSpec) -> dict:
        runner = {
            OPOT: self.run_opot,
            CLOUD_LOAD: self.run_cloud_load,
            EHEALTH_STREAM: self.run_ehealth_stream,
            INDEPENDENT_SOURCES: self.run_independent_sources,
            KAAS: self.run_kaas,
        }[spec.use_case]
        return runner(spec)

    # -- OPoT-style packet attestation -------------------------------------

    def run_opot(self, spec: WorkloadSpec) -> dict:
        """Tagged vs untagged packet latency with key-fetch coupling.

        The tag step consumes ``tag_bytes`` per traversed node from the
        endpoint pair's store, which the workload feeds at
        ``supply_factor`` x demand; exhaustion shows up as latency spikes.
        """
        p = spec.params
        pps = float(p.get("packet_rate_pps", 50.0))
        base_ms = float(p.get("base_ms", 3.26))
        fetch_ms = float(p.get("fetch_ms", 0.20))
        tag_cost_ms = float(p.get("tag_cost_ms", 2.40))
        tag_bytes = int(p.get("tag_bytes", 16))
        supply_factor = float(p.get("supply_factor", 1.2))
        warm_s = float(p.get("warm_start_s", 2.0))
        jitter_sigma = float(p.get("jitter_sigma", 0.0))

        drain_s = float(p.get("drain_s", 10.0))

        src, dst = spec.endpoints
        plan = self.net.controller.compute_route(src, dst)
        need = tag_bytes * len(plan.nodes)
        demand_bps = need * pps  # bytes per second
        supply_bps = demand_bps * supply_factor

        rng = derive_rng(self.net.seed, f"opot:{spec.experiment_id}")
        feed = _PairFeed(self.net, src, dst, f"opot:{spec.experiment_id}")
        feed.deposit(int(supply_bps * warm_s))
        engine = self.net.engine
        t0 = engine.now
        horizon = t0 + spec.duration_s

        ksid = self.net.kms[src].open_connect(
            f"opot@{src}", f"opot@{dst}", QoS(key_chunk_size_bytes=need)
        )
        count = int(pps * spec.duration_s)
        store_kms = self.net.kms[src]
        results = {"tagged": [], "untagged": [], "spikes": 0, "dropped": 0}
        waiters: list[tuple[float, float]] = []  # (t_send, base_ms), FIFO

        def finish(t_send, base, waited_s):
            tagged = base + fetch_ms + tag_cost_ms + waited_s * 1000.0
            if waited_s > 0:
                results["spikes"] += 1
            results["tagged"].append(tagged)
            self.metrics.add(
                spec.experiment_id, engine.now, "latency_tagged_ms", tagged, "ms",
                route="-".join(plan.nodes), waited="1" if waited_s > 0 else "0",
            )

        def drain():
            while waiters:
                try:
                    store_kms.get_key(ksid)
                except KeyExhaustedError:
                    return
                t_send, base = waiters.pop(0)
                finish(t_send, base, engine.now - t_send)

        def feeder():
            carry = 0.0
            while engine.now < horizon:
                carry += supply_bps * 0.01
                whole = int(carry)
                carry -= whole
                if whole:
                    feed.deposit(whole)
                    drain()
                yield 0.01

        engine.spawn(feeder(), delay=0.01)

        def packet(t_send):
            def fire():
                base = base_ms * (
                    rng.lognormvariate(0.0, jitter_sigma) if jitter_sigma else 1.0
                )
                self.metrics.add(
                    spec.experiment_id, engine.now, "latency_untagged_ms", base, "ms",
                    route="-".join(plan.nodes),
                )
                results["untagged"].append(base)
                if not waiters:  # no queue: try the store directly
                    try:
                        store_kms.get_key(ksid)
                        finish(t_send, base, 0.0)
                        return
                    except KeyExhaustedError:
                        pass
                waiters.append((t_send, base))

            engine.call_at(t_send, fire)

        for i in range(count):
            packet(t0 + i / pps)
        engine.run_until(horizon + drain_s)
        results["dropped"] = len(waiters)
        results["spikes"] += len(waiters)  # starved packets are spikes too
        waiters.clear()

        tagged, untagged = results["tagged"], results["untagged"]
        summary = {
            "experiment_id": spec.experiment_id,
            "use_case": OPOT,
            "packets": count,
            "mean_tagged_ms": sum(tagged) / len(tagged) if tagged else 0.0,
            "mean_untagged_ms": sum(untagged) / len(untagged) if untagged else 0.0,
            "spikes": results["spikes"],
            "dropped": results["dropped"],
            "route": list(plan.nodes),
        }
        if summary["mean_untagged_ms"]:
            summary["overhead_ratio"] = (
                summary["mean_tagged_ms"] / summary["mean_untagged_ms"]
            )
        self.net.kms[src].close(ksid)
        return summary

    # -- cloud key-request load ------------------------------------------------

    def run_cloud_load(self, spec: WorkloadSpec) -> dict:
        p = spec.params
        n_clients = int(p.get("n_clients", 10))
        rate = float(p.get("request_rate_per_client", 1.0))
        number = int(p.get("keys_per_request", 1))
        size_bits = int(p.get("key_size_bits", 256))
        master, slave = spec.endpoints
        engine = self.net.engine
        kms = self.net.kms[master]
        slave_kms = self.net.kms[slave]
        t0 = engine.now
        horizon = t0 + spec.duration_s
        stats = {"issued": 0, "served": 0, "rejected": {}, "in_flight": 0}

        def client(idx):
            crng = derive_rng(self.net.seed, f"cloud:{spec.experiment_id}:{idx}")
            sae_m = f"cloud-{idx}@{master}"
            sae_s = f"cloud-{idx}@{slave}"
            while engine.now < horizon:
                yield crng.expovariate(rate)
                if engine.now >= horizon:
                    return
                stats["issued"] += 1
                stats["in_flight"] += 1
                try:
                    keys = kms.etsi14_get_enc_keys(sae_m, sae_s, number, size_bits)
                    slave_kms.etsi14_get_keys_with_ids(
                        sae_s, sae_m, [k["key_ID"] for k in keys]
                    )
                    stats["served"] += 1
                    outcome = "served"
                except (InsufficientKeyError, KeyExhaustedError):
                    stats["rejected"]["insufficient-key"] = (
                        stats["rejected"].get("insufficient-key", 0) + 1
                    )
                    outcome = "rejected"
                except KmsError as exc:
                    stats["rejected"][exc.code] = stats["rejected"].get(exc.code, 0) + 1
                    outcome = "rejected"
                stats["in_flight"] -= 1
                self.metrics.add(
                    spec.experiment_id, engine.now, "request", 1.0, "count",
                    client=str(idx), outcome=outcome,
                )

        for idx in range(n_clients):
            engine.spawn(client(idx), delay=0.0)
        engine.run_until(horizon + 1.0)

        auditor = SingleUseAuditor()
        auditor.run(self.net.audit)
        elapsed = max(engine.now - t0, 1e-9)
        summary = {
            "experiment_id": spec.experiment_id,
            "use_case": CLOUD_LOAD,
            "clients": n_clients,
            "issued": stats["issued"],
            "served": stats["served"],
            "rejected": dict(sorted(stats["rejected"].items())),
            "in_flight": stats["in_flight"],
            "served_per_s": stats["served"] / spec.duration_s,
            "audit_ok": auditor.ok,
            "audit_violations": len(auditor.violations),
        }
        self.metrics.add(
            spec.experiment_id, engine.now, "served_per_s",
            summary["served_per_s"], "1/s", clients=str(n_clients),
        )
        return summary

    # -- encrypted stream feeding ----------------------------------------------

    def run_ehealth_stream(self, spec: WorkloadSpec) -> dict:
        """A virtual encryptor refreshing its key while pushing a stream."""
        p = spec.params
        target_mbps = float(p.get("target_mbps", 100.0))
        refresh_s = float(p.get("key_refresh_s", 1.0))
        key_bits = int(p.get("key_size_bits", 256))
        src, dst = spec.endpoints
        engine = self.net.engine
        kms = self.net.kms[src]
        t0 = engine.now
        horizon = t0 + spec.duration_s
        state = {"bytes": 0.0, "refreshes": 0, "stalls": 0}

        def encryptor():
            sae_m, sae_s = f"ehealth@{src}", f"ehealth@{dst}"
            while engine.now < horizon:
                try:
                    kms.etsi14_get_enc_keys(sae_m, sae_s, 1, key_bits)
                    state["refreshes"] += 1
                    state["bytes"] += target_mbps * 1e6 / 8 * refresh_s
                    self.metrics.add(
                        spec.experiment_id, engine.now, "stream_bytes",
                        state["bytes"], "B",
                    )
                except (InsufficientKeyError, KeyExhaustedError):
                    state["stalls"] += 1
                yield refresh_s

        engine.spawn(encryptor(), delay=0.0)
        engine.run_until(horizon + 0.5)
        achieved = state["bytes"] * 8 / 1e6 / spec.duration_s
        return {
            "experiment_id": spec.experiment_id,
            "use_case": EHEALTH_STREAM,
            "achieved_mbps": achieved,
            "refreshes": state["refreshes"],
            "stalls": state["stalls"],
        }

    # -- multi-source combination latency ---------------------------------------

    def run_independent_sources(self, spec: WorkloadSpec) -> dict:
        p = spec.params
        rounds = int(p.get("rounds", 10))
        size = int(p.get("size_bytes", 32))
        src, dst = spec.endpoints or ("quevedo", "norte")
        lat = {"single": [], "independent-sources": []}
        for policy in ("single", "independent-sources"):
            for _ in range(rounds):
                prov = self.net.provision(src, dst, size, policy=policy)
                if prov.status != "DELIVERED":
                    raise HarnessError(f"provisioning failed: {prov.receipt}")
                lat[policy].append(prov.receipt["latency_s"])
                self.metrics.add(
                    spec.experiment_id, self.net.engine.now, "provision_latency_s",
                    prov.receipt["latency_s"], "s", policy=policy,
                )
        mean = lambda xs: sum(xs) / len(xs)
        return {
            "experiment_id": spec.experiment_id,
            "use_case": INDEPENDENT_SOURCES,
            "rounds": rounds,
            "mean_latency_single_s": mean(lat["single"]),
            "mean_latency_combined_s": mean(lat["independent-sources"]),
            "combination_overhead_s": mean(lat["independent-sources"]) - mean(lat["single"]),
        }

    # -- gated node-local access ------------------------------------------------

    def run_kaas(self, spec: WorkloadSpec) -> dict:
        """Clients without QKD hardware draw keys from their trusted node;
        access requires the pre-shared master credential."""
        p = spec.params
        credential = str(p.get("credential", "kaas-master-key"))
        n_clients = int(p.get("n_clients", 4))
        bad_every = int(p.get("bad_credential_every", 4))
        fetches = int(p.get("fetches_per_client", 8))
        src, dst = spec.endpoints
        gate = KaasGate(credential)
        kms = self.net.kms[src]
        served = rejected = 0
        for idx in range(n_clients):
            offered = "wrong" if bad_every and idx % bad_every == bad_every - 1 else credential
            if not gate.admit(offered):
                rejected += fetches
                self.metrics.add(
                    spec.experiment_id, self.net.engine.now, "kaas_rejected",
                    1.0, "count", client=str(idx),
                )
                continue
            ksid = kms.open_connect(f"kaas-{idx}@{src}", f"kaas-{idx}@{dst}")
            for _ in range(fetches):
                try:
                    kms.get_key(ksid)
                    served += 1
                except KeyExhaustedError:
                    rejected += 1
            kms.close(ksid)
        self.metrics.add(
            spec.experiment_id, self.net.engine.now, "kaas_served", served, "count"
        )
        return {
            "experiment_id": spec.experiment_id,
            "use_case": KAAS,
            "served": served,
            "rejected": rejected,
        }

    # -- export -------------------------------------------------------------------

    def export_metrics(self, experiment_id: str, fmt: str = "csv") -> str:
        return self.metrics.export(experiment_id, fmt)


class KaasGate:
    """Pre-shared master credential gating node-local key access."""

    def __init__(self, credential: str):
        self._credential = credential

    def admit(self, offered: str) -> bool:
        return offered == self._credential


class _PairFeed:
    """Deterministic key-material injector for a node pair (both stores)."""

    def __init__(self, net, a: str, b: str, label: str):
        self.net = net
        self.a, self.b = a, b
        self._stream = EntropyStream(net.seed, f"feed:{label}")
        self._count = 0
        self.label = label

    def deposit(self, nbytes: int, block: int = 1024) -> None:
        while nbytes > 0:
            size = min(block, nbytes)
            self._count += 1
            blk = KeyBlock(
                key_id=f"feed-{self.label}-{self._count:08d}",
                bits=self._stream.take(size),
                size_bytes=size,
                channel_id=f"feed:{self.label}",
                created_at=self.net.engine.now,
            )
            self.net.fabric.get(self.a).store.ingest(blk, self.b)
            self.net.fabric.get(self.b).store.ingest(blk.twin(), self.a)
            nbytes -= size
