"""Channel emulation: rate curve, state machine, key-block emission."""

import pytest
from hypothesis import given, settings, strategies as st

from qkdnet.errors import ChannelNotUpError, StaleCandidateError
from qkdnet.eventsim import EventEngine
from qkdnet.linksim import (
    DOWN,
    SYNCING,
    UP,
    ChannelManager,
    ChannelSim,
    QuantumChannel,
    skr_at_loss,
)
from qkdnet.topology import QkdModuleSpec, enumerate_feasible_channels


# ---------------------------------------------------------------------------
# Rate curve
# ---------------------------------------------------------------------------


def test_anchor_rates_are_reproduced_exactly(madqci):
    for spec in madqci.module_specs.values():
        for loss, rate in spec.rate_profile:
            assert skr_at_loss(spec, loss) == pytest.approx(rate, abs=0.0), spec.spec_id


def test_toshiba_link9_anchor(madqci):
    spec = madqci.module_specs["toshiba-dv-tx-o"]
    assert skr_at_loss(spec, 3.0) == pytest.approx(2857.1)


def test_combined_path_anchor(madqci):
    spec = madqci.module_specs["hwdu-cv-tx-distrito"]
    assert skr_at_loss(spec, 5.7) == pytest.approx(0.11)


def test_rate_is_zero_beyond_loss_budget(madqci):
    spec = madqci.module_specs["hwdu-cv-tx-quevedo"]  # 23 dB budget
    assert skr_at_loss(spec, 30.0) == 0.0
    assert skr_at_loss(spec, 23.0001) == 0.0


def test_rate_clamped_below_first_anchor(madqci):
    spec = madqci.module_specs["toshiba-dv-tx-o"]
    assert skr_at_loss(spec, 0.5) == pytest.approx(2857.1)


@settings(max_examples=200, deadline=None)
@given(
    loss_a=st.floats(min_value=0.0, max_value=24.0),
    loss_b=st.floats(min_value=0.0, max_value=24.0),
)
def test_rate_curve_is_monotone_non_increasing(loss_a, loss_b):
    spec = QkdModuleSpec(
        spec_id="s",
        vendor="V",
        technology="DV",
        role="emitter",
        band="O",
        max_tolerated_loss_db=24.0,
        rate_profile=((3.0, 2857.1), (3.2, 1039.9), (3.8, 242.3), (17.7, 37.2)),
    )
    lo, hi = sorted((loss_a, loss_b))
    assert skr_at_loss(spec, lo) >= skr_at_loss(spec, hi)


# ---------------------------------------------------------------------------
# Establishment and state machine
# ---------------------------------------------------------------------------


def _manager(madqci, seed=11, sync=5.0, epoch_provider=None):
    engine = EventEngine()
    mgr = ChannelManager(
        madqci, engine, seed, sync_delay_s=sync, epoch_provider=epoch_provider
    )
    return engine, mgr


def _candidate(madqci, emitter="toshiba-tx-l5"):
    state = madqci.default_switch_state()
    for cand in enumerate_feasible_channels(madqci, state):
        if cand.emitter == emitter:
            return cand
    raise AssertionError(f"no candidate for {emitter}")


def test_channel_syncs_then_comes_up(madqci):
    engine, mgr = _manager(madqci)
    ch = mgr.establish_channel(_candidate(madqci))
    assert ch.state == SYNCING
    assert ch.sync_remaining_s == 5.0
    engine.run_until(4.9)
    assert ch.state == SYNCING
    engine.run_until(5.1)
    assert ch.state == UP
    assert ch.effective_loss_db == pytest.approx(3.2)  # link 5, O-band


def test_stale_candidate_rejected(madqci):
    epoch = {"v": 1}
    engine, mgr = _manager(madqci, epoch_provider=lambda: epoch["v"])
    cand = _candidate(madqci)
    epoch["v"] = 2  # switch reconfigured after enumeration
    with pytest.raises(StaleCandidateError, match="stale"):
        mgr.establish_channel(cand, enumerated_epoch=1)


def test_reestablished_channel_gets_fresh_identity_and_streams(madqci):
    engine, mgr = _manager(madqci)
    cand = _candidate(madqci)
    first = mgr.establish_channel(cand)
    engine.run_until(30.0)
    ids_first = set()
    mgr.on_blocks(lambda ch, blocks, h: ids_first.update(b.key_id for b in blocks))
    engine.run_until(60.0)
    mgr.teardown(first.channel_id)
    second = mgr.establish_channel(cand)
    assert second.channel_id != first.channel_id
    ids_second = set()
    mgr.block_subscribers.clear()
    mgr.on_blocks(lambda ch, blocks, h: ids_second.update(b.key_id for b in blocks))
    engine.run_until(130.0)
    assert ids_second
    assert not ids_first & ids_second


def test_no_bytes_before_up_and_none_after_down(madqci):
    engine, mgr = _manager(madqci)
    seen = []
    mgr.on_blocks(lambda ch, blocks, h: seen.extend(blocks))
    ch = mgr.establish_channel(_candidate(madqci))
    engine.run_until(4.0)
    assert seen == []  # still syncing
    engine.run_until(20.0)
    assert seen
    emitted_up = len(seen)
    mgr.teardown(ch.channel_id)
    engine.run_until(40.0)
    assert len(seen) == emitted_up


# ---------------------------------------------------------------------------
# advance()
# ---------------------------------------------------------------------------


def _flat_sim(rate_kbps=8.0, jitter=0.0, seed=1):
    spec = QkdModuleSpec(
        spec_id="flat",
        vendor="V",
        technology="CV",
        role="emitter",
        band="C",
        max_tolerated_loss_db=20.0,
        rate_profile=((2.0, rate_kbps),),
    )
    channel = QuantumChannel(
        channel_id="ch-test",
        emitter="tx",
        receiver="rx",
        emitter_node="a",
        receiver_node="b",
        path=(1,),
        band="C",
        dwdm_channel="C-37",
        state=UP,
        sync_remaining_s=0.0,
        effective_loss_db=2.0,
        established_at=0.0,
    )
    return ChannelSim(channel, spec, seed, jitter_sigma=jitter)


def test_advance_emits_rate_times_time_bytes():
    sim = _flat_sim()
    blocks, health = sim.advance(1.0, 1.0)
    assert sum(b.size_bytes for b in blocks) == 1000  # 8 kbps over 1 s
    assert [b.size_bytes for b in blocks] == [256, 256, 256, 232]
    assert all(len(b.bits) == b.size_bytes for b in blocks)
    assert health.current_skr_kbps == pytest.approx(8.0)


def test_advance_carries_fractional_bytes():
    sim = _flat_sim(rate_kbps=0.006)  # 0.75 bytes per second
    total = 0
    for t in range(8):
        blocks, _ = sim.advance(1.0, float(t))
        total += sum(b.size_bytes for b in blocks)
    assert total == 6


def test_advance_requires_up_channel():
    sim = _flat_sim()
    sim.mark_down()
    with pytest.raises(ChannelNotUpError, match="not UP"):
        sim.advance(1.0, 1.0)


def test_both_endpoints_see_identical_blocks():
    sim = _flat_sim()
    blocks, _ = sim.advance(1.0, 1.0)
    twins = [b.twin() for b in blocks]
    assert [(t.key_id, t.bits) for t in twins] == [(b.key_id, b.bits) for b in blocks]
    twins[0].mark_consumed()
    assert not blocks[0].consumed  # consumption is per holder


def test_block_consumed_flag_flips_exactly_once():
    sim = _flat_sim()
    blocks, _ = sim.advance(1.0, 1.0)
    blocks[0].mark_consumed()
    with pytest.raises(ValueError, match="consumed twice"):
        blocks[0].mark_consumed()


def test_identical_seed_gives_bit_identical_streams(madqci):
    def run(seed):
        engine, mgr = _manager(madqci, seed=seed)
        out = []
        mgr.on_blocks(lambda ch, blocks, h: out.extend((b.key_id, b.bits) for b in blocks))
        mgr.establish_channel(_candidate(madqci))
        engine.run_until(120.0)
        return out

    assert run(42) == run(42)
    assert run(42) != run(43)


def test_long_run_mean_rate_tracks_anchor(madqci):
    """Simulated hour at the link-5 anchor stays within 10% of 1039.9 kbps."""
    engine, mgr = _manager(madqci, seed=7)
    got = []
    mgr.on_blocks(lambda ch, blocks, h: got.extend(blocks))
    ch = mgr.establish_channel(_candidate(madqci, emitter="toshiba-tx-l5"))
    engine.run_until(5.0 + 3600.0)
    total_bytes = sum(b.size_bytes for b in got)
    mean_kbps = total_bytes * 8 / 3600.0 / 1000.0
    assert mean_kbps == pytest.approx(1039.9, rel=0.10)


def test_law_of_large_numbers_convergence():
    sim = _flat_sim(rate_kbps=8.0, jitter=0.1, seed=99)
    total = 0
    seconds = 10_000
    for t in range(seconds):
        blocks, _ = sim.advance(1.0, float(t))
        total += sum(b.size_bytes for b in blocks)
    mean_kbps = total * 8 / seconds / 1000.0
    assert mean_kbps == pytest.approx(8.0, rel=0.05)


def test_qber_abort_takes_channel_down():
    spec = QkdModuleSpec(
        spec_id="dv",
        vendor="V",
        technology="DV",
        role="emitter",
        band="O",
        max_tolerated_loss_db=20.0,
        rate_profile=((2.0, 8.0),),
        nominal_qber_pct=10.9,  # sits right under the abort threshold
    )
    channel = QuantumChannel(
        channel_id="ch-q",
        emitter="tx",
        receiver="rx",
        emitter_node="a",
        receiver_node="b",
        path=(1,),
        band="O",
        dwdm_channel=None,
        state=UP,
        sync_remaining_s=0.0,
        effective_loss_db=2.0,
        established_at=0.0,
    )
    sim = ChannelSim(channel, spec, seed=3, qber_step_pct=1.0, qber_reversion=0.0)
    for t in range(1, 500):
        if channel.state == DOWN:
            break
        blocks, health = sim.advance(1.0, float(t))
        assert health.current_qber_pct is None or 0.0 <= health.current_qber_pct <= 25.0
    assert channel.state == DOWN
    with pytest.raises(ChannelNotUpError):
        sim.advance(1.0, 999.0)
