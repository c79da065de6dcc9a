"""Structural queries: loading, path loss, feasibility enumeration."""

import itertools
import random

import pytest

from qkdnet.errors import (
    ConfigError,
    DisconnectedPathError,
    InvariantViolation,
    ReferentialIntegrityError,
    UnknownLinkError,
)
from qkdnet.topology import (
    ANY_STATE,
    enumerate_feasible_channels,
    load_topology,
    path_loss,
)

from conftest import chain_config, toy_config


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def test_shipped_config_shape(madqci):
    assert len(madqci.nodes) == 9
    assert sorted(madqci.links) == list(range(1, 10))
    assert len(madqci.modules) == 28
    assert madqci.domains() == {"RM", "TID"}


def test_empty_node_list_rejected():
    cfg = toy_config(nodes=[])
    with pytest.raises(ConfigError, match="no nodes"):
        load_topology(cfg)


def test_dangling_link_reference_rejected():
    cfg = toy_config()
    cfg["links"][0]["endpoint_b"] = "nowhere"
    with pytest.raises(ReferentialIntegrityError, match="nowhere"):
        load_topology(cfg)


def test_unknown_spec_rejected():
    cfg = toy_config()
    cfg["nodes"][0]["modules"][0]["spec"] = "missing-spec"
    with pytest.raises(ReferentialIntegrityError, match="missing-spec"):
        load_topology(cfg)


def test_o_band_below_c_band_rejected():
    cfg = toy_config()
    cfg["links"][0]["loss_db_o_band"] = 1.0
    with pytest.raises(InvariantViolation, match="loss_db_o_band"):
        load_topology(cfg)


def test_implausible_loss_rejected():
    cfg = toy_config()
    cfg["links"][0]["loss_db_c_band"] = 55.0
    cfg["links"][0]["loss_db_o_band"] = 80.0
    with pytest.raises(InvariantViolation, match="plausible"):
        load_topology(cfg)


def test_o_band_defaults_to_fifty_percent_penalty():
    cfg = toy_config()
    del cfg["links"][0]["loss_db_o_band"]
    topo = load_topology(cfg)
    assert topo.links[1].loss_db_o_band == pytest.approx(3.0)


def test_parse_error_reports_position():
    bad = "nodes:\n  - node_id: a\n   domain: [unclosed"
    with pytest.raises(ConfigError, match="line"):
        load_topology(bad)


def test_nonmonotone_rate_profile_rejected():
    cfg = toy_config()
    cfg["module_specs"][0]["rate_profile"] = [[2.0, 1.0], [5.0, 3.0]]
    with pytest.raises(InvariantViolation, match="non-increasing"):
        load_topology(cfg)


def test_border_node_without_crossing_rejected():
    cfg = toy_config()
    cfg["nodes"][0]["is_border"] = True  # both nodes share domain X
    with pytest.raises(InvariantViolation, match="inter-domain"):
        load_topology(cfg)


def test_cross_connect_port_reuse_rejected():
    cfg = chain_config()
    cfg["switches"][0]["cross_connects"] = [["p1", "p2"], ["p1", "p2"]]
    with pytest.raises(InvariantViolation, match="more than one"):
        load_topology(cfg)


# ---------------------------------------------------------------------------
# Path loss
# ---------------------------------------------------------------------------


def test_link8_c_band_loss(madqci):
    assert path_loss(madqci, [8], "C") == pytest.approx(11.8)


def test_empty_path_is_lossless(madqci):
    assert path_loss(madqci, [], "C") == 0.0


def test_two_link_path_includes_switch_insertion(madqci):
    # 2.2 + 2.5 plus 1.0 dB for the switch at the junction, summed by hand
    assert path_loss(madqci, [6, 7], "C") == pytest.approx(5.7)


def test_o_band_costs_more(madqci):
    for lid in madqci.links:
        assert path_loss(madqci, [lid], "O") >= path_loss(madqci, [lid], "C")


def test_unknown_link_rejected(madqci):
    with pytest.raises(UnknownLinkError):
        path_loss(madqci, [77], "C")


def test_disconnected_sequence_rejected(madqci):
    with pytest.raises(DisconnectedPathError):
        path_loss(madqci, [1, 6], "C")  # quintin-quevedo then norte-concepcion


def test_path_loss_additivity(madqci):
    """loss(P1 ++ P2) = loss(P1) + loss(P2) + insertion at a switched junction."""
    cases = [([5], [3], "quijote"), ([1], [4], "quevedo"), ([4], [6], "norte")]
    for p1, p2, junction in cases:
        assert madqci.nodes[junction].has_optical_switch
        whole = path_loss(madqci, p1 + p2, "C")
        parts = path_loss(madqci, p1, "C") + path_loss(madqci, p2, "C")
        assert whole == pytest.approx(parts + madqci.switch_insertion_db)


# ---------------------------------------------------------------------------
# Feasibility enumeration
# ---------------------------------------------------------------------------


def test_shipped_counts(madqci):
    assert len(enumerate_feasible_channels(madqci, ANY_STATE)) == 45
    assert len(enumerate_feasible_channels(madqci, ANY_STATE, vendors={"HWDU"})) == 36


def test_two_node_toy_single_candidate():
    topo = load_topology(toy_config())
    cands = enumerate_feasible_channels(topo, ANY_STATE)
    assert len(cands) == 1
    (cand,) = cands
    assert (cand.emitter, cand.receiver, cand.path) == ("tx-a", "rx-b", (1,))


def test_candidates_respect_loss_budget(madqci):
    for cand in enumerate_feasible_channels(madqci, ANY_STATE):
        tx = madqci.spec_of(cand.emitter)
        rx = madqci.spec_of(cand.receiver)
        assert cand.loss_db <= min(tx.max_tolerated_loss_db, rx.max_tolerated_loss_db)
        assert cand.loss_db == pytest.approx(path_loss(madqci, cand.path, cand.band))


def test_given_state_is_subset_of_any(madqci):
    any_ids = {(c.emitter, c.receiver, c.path) for c in enumerate_feasible_channels(madqci)}
    got = enumerate_feasible_channels(madqci, madqci.default_switch_state())
    assert {(c.emitter, c.receiver, c.path) for c in got} <= any_ids
    assert len(got) == 13  # 4 switched CV channels + 9 fixed pairs


def test_removing_a_link_never_adds_candidates(madqci):
    base = {(c.emitter, c.receiver, c.path) for c in enumerate_feasible_channels(madqci)}
    rng = random.Random(7)
    for lid in rng.sample(sorted(madqci.links), 4):
        cfg = _config_without_link(lid)
        smaller = load_topology(cfg)
        got = {(c.emitter, c.receiver, c.path) for c in enumerate_feasible_channels(smaller)}
        assert got <= base
        assert all(lid not in path for _, _, path in got)


def _config_without_link(lid):
    import yaml

    from qkdnet import builtin_config_path

    cfg = yaml.safe_load(open(builtin_config_path()))
    cfg["links"] = [l for l in cfg["links"] if l["link_id"] != lid]
    domains = {n["node_id"]: n["domain"] for n in cfg["nodes"]}
    still_crossing = {
        ep
        for l in cfg["links"]
        if domains[l["endpoint_a"]] != domains[l["endpoint_b"]]
        for ep in (l["endpoint_a"], l["endpoint_b"])
    }
    for node in cfg["nodes"]:
        node["modules"] = [m for m in node.get("modules", []) if m.get("link") != lid]
        if node.get("is_border") and node["node_id"] not in still_crossing:
            node["is_border"] = False
    kept_modules = {
        m["module_id"] for node in cfg["nodes"] for m in node.get("modules", [])
    }
    for sw in cfg["switches"]:
        sw["ports"] = [
            p
            for p in sw["ports"]
            if p.get("link") != lid and p.get("module", None) in kept_modules | {None}
        ]
        names = {p["port"] for p in sw["ports"]}
        sw["cross_connects"] = [
            cc for cc in sw.get("cross_connects", []) if cc[0] in names and cc[1] in names
        ]
    return cfg


def test_wavelength_collision_freedom(madqci):
    """No two simultaneously returned candidates share fiber+direction+channel."""
    from qkdnet.topology import _segment_directions

    got = enumerate_feasible_channels(madqci, madqci.default_switch_state())
    seen = set()
    for cand in got:
        assert cand.dwdm_channel is not None
        for lid, direction in _segment_directions(madqci, cand):
            key = (lid, direction, cand.dwdm_channel)
            assert key not in seen
            seen.add(key)


# ---------------------------------------------------------------------------
# Brute-force oracle: exhaustive switch matchings on a small chain
# ---------------------------------------------------------------------------


def _all_matchings(ports):
    ports = list(ports)

    def rec(remaining):
        if len(remaining) < 2:
            yield frozenset()
            return
        head, rest = remaining[0], remaining[1:]
        yield from rec(rest)
        for i, other in enumerate(rest):
            for m in rec(rest[:i] + rest[i + 1 :]):
                yield m | {tuple(sorted((head, other)))}

    yield from rec(ports)


def _brute_force_any(topo):
    """Union of per-state enumerations over every valid switch matching."""
    sw_ids = sorted(topo.switches)
    port_sets = [sorted(topo.switches[s].port_map()) for s in sw_ids]
    union = set()
    for combo in itertools.product(*(_all_matchings(ps) for ps in port_sets)):
        state = {sid: frozenset(m) for sid, m in zip(sw_ids, combo)}
        for c in enumerate_feasible_channels(topo, state):
            union.add((c.emitter, c.receiver, c.path))
    return union


def test_any_state_equals_brute_force_on_chain():
    topo = load_topology(chain_config(loss_db=2.0, budget=20.0))
    analytic = {
        (c.emitter, c.receiver, c.path) for c in enumerate_feasible_channels(topo)
    }
    assert analytic == _brute_force_any(topo)
    assert ("tx-a", "rx-c", (1, 2)) in analytic  # the bypass pairing


def test_any_state_equals_brute_force_under_tight_budget():
    # 2 + 2 + 1 dB insertion exceeds a 4.5 dB budget: only the short pairing left
    topo = load_topology(chain_config(loss_db=2.0, budget=4.5))
    analytic = {
        (c.emitter, c.receiver, c.path) for c in enumerate_feasible_channels(topo)
    }
    assert analytic == _brute_force_any(topo)
    assert analytic == {("tx-a", "rx-b", (1,))}


def test_any_state_equals_brute_force_on_madqci_switched_subset(madqci):
    """Exhaustive matchings are infeasible network-wide, but per-emitter
    reachability must still agree switch by switch; spot-check one switch by
    freezing the others to their boot state."""
    base = madqci.default_switch_state()
    sw = madqci.switches["sw-norte"]
    union = set()
    for m in _all_matchings(sorted(sw.port_map())):
        state = dict(base)
        state["sw-norte"] = frozenset(m)
        for c in enumerate_feasible_channels(madqci, state):
            union.add((c.emitter, c.receiver, c.path))
    any_ids = {(c.emitter, c.receiver, c.path) for c in enumerate_feasible_channels(madqci)}
    assert union <= any_ids
