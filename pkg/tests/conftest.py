import pytest

from qkdnet import builtin_config_path
from qkdnet.topology import load_topology


@pytest.fixture(scope="session")
def madqci():
    return load_topology(builtin_config_path())


def opot_spike_oracle(t0, pps, duration_s, need_bytes, supply_factor, warm_s):
    """Analytic replay of the packet-attestation key-queueing process.

    Mirrors the documented workload schedule: a warm-start deposit, then a
    floor-accumulated feed every 10 ms (same-instant feeds land after the
    packet's first availability check). Returns the spike count.
    """
    demand_bps = need_bytes * pps
    supply_bps = demand_bps * supply_factor
    events = []
    carry, t = 0.0, t0 + 0.01
    while t <= t0 + duration_s + 120.0:
        carry += supply_bps * 0.01
        whole = int(carry)
        carry -= whole
        if whole:
            events.append((t, whole))
        t += 0.01
    spikes = 0
    cum = float(int(supply_bps * warm_s))
    idx = 0
    packets = int(pps * duration_s)
    for j in range(packets):
        t_j = t0 + j / pps
        needed = (j + 1) * need_bytes
        while cum < needed and idx < len(events) and events[idx][0] < t_j:
            cum += events[idx][1]
            idx += 1
        if cum < needed:
            spikes += 1
            while cum < needed and idx < len(events):
                cum += events[idx][1]
                idx += 1
    return spikes


def toy_config(**overrides):
    """Two sites joined by one fiber, one fixed pair. Base for small tests."""
    cfg = {
        "name": "toy",
        "optics": {
            "switch_insertion_db": 1.0,
            "tunable_channels": ["C-36", "C-37", "C-38", "C-39"],
        },
        "nodes": [
            {
                "node_id": "a",
                "domain": "X",
                "modules": [{"module_id": "tx-a", "spec": "acme-tx", "link": 1}],
            },
            {
                "node_id": "b",
                "domain": "X",
                "modules": [{"module_id": "rx-b", "spec": "acme-rx", "link": 1}],
            },
        ],
        "links": [
            {
                "link_id": 1,
                "endpoint_a": "a",
                "endpoint_b": "b",
                "length_km": 5.0,
                "loss_db_c_band": 2.0,
                "loss_db_o_band": 3.0,
            }
        ],
        "switches": [],
        "module_specs": [
            {
                "spec_id": "acme-tx",
                "vendor": "ACME",
                "technology": "CV",
                "role": "emitter",
                "band": "C",
                "channel": "C-37",
                "wavelength_tunable": True,
                "max_tolerated_loss_db": 20.0,
                "rate_profile": [[2.0, 8.0], [15.0, 0.5]],
            },
            {
                "spec_id": "acme-rx",
                "vendor": "ACME",
                "technology": "CV",
                "role": "receiver",
                "band": "C",
                "channel": "C-37",
                "wavelength_tunable": True,
                "max_tolerated_loss_db": 20.0,
                "rate_profile": [[2.0, 8.0], [15.0, 0.5]],
            },
        ],
        "simulation": {
            "sync_delay_s": 5.0,
            "tick_s": 1.0,
            "block_bytes": 256,
            "rate_jitter_sigma": 0.1,
            "qber_abort_pct": 11.0,
        },
        "kms": {
            "capacity_bytes": 1 << 20,
            "ttl_s": 3600.0,
            "default_chunk_bytes": 32,
            "max_key_per_request": 128,
            "min_key_bits": 8,
            "max_key_bits": 8192,
            "admission_fraction": 0.8,
        },
        "forwarding": {"hop_delay_ms": 0.5},
        "controller": {
            "heartbeat_interval_s": 5.0,
            "suspect_after_missed": 3,
            "rate_window_s": 300.0,
            "telemetry_interval_s": 5.0,
        },
    }
    cfg.update(overrides)
    return cfg


def chain_config(loss_db=2.0, budget=20.0, rx_at_middle=True):
    """a --1-- b --2-- c with an optical switch at b; emitter at a."""
    cfg = toy_config()
    cfg["nodes"] = [
        {
            "node_id": "a",
            "domain": "X",
            "modules": [{"module_id": "tx-a", "spec": "acme-tx", "link": 1}],
        },
        {
            "node_id": "b",
            "domain": "X",
            "has_optical_switch": True,
            "modules": (
                [{"module_id": "rx-b", "spec": "acme-rx", "link": 1}] if rx_at_middle else []
            ),
        },
        {
            "node_id": "c",
            "domain": "X",
            "modules": [{"module_id": "rx-c", "spec": "acme-rx", "link": 2}],
        },
    ]
    cfg["links"] = [
        {
            "link_id": 1,
            "endpoint_a": "a",
            "endpoint_b": "b",
            "length_km": 5.0,
            "loss_db_c_band": loss_db,
            "loss_db_o_band": loss_db * 1.5,
        },
        {
            "link_id": 2,
            "endpoint_a": "b",
            "endpoint_b": "c",
            "length_km": 5.0,
            "loss_db_c_band": loss_db,
            "loss_db_o_band": loss_db * 1.5,
        },
    ]
    cfg["switches"] = [
        {
            "switch_id": "sw-b",
            "host_node": "b",
            "ports": [{"port": "p1", "link": 1}, {"port": "p2", "link": 2}],
            "cross_connects": [],
        }
    ]
    for spec in cfg["module_specs"]:
        spec["max_tolerated_loss_db"] = budget
        spec["rate_profile"] = [p for p in spec["rate_profile"] if p[0] <= budget]
    return cfg
