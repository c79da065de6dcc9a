"""Quantum-link emulation: each established channel is a calibrated key source.

A channel produces identified key blocks at a loss-dependent rate with a
QBER-driven health state, on the shared event engine. Both endpoints see the
same block values by construction; sifting/reconciliation are abstracted away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ChannelNotUpError, StaleCandidateError
from .eventsim import EntropyStream, EventEngine, derive_rng
from .topology import ChannelCandidate, QkdModuleSpec, Topology, path_loss

SYNCING = "SYNCING"
UP = "UP"
DOWN = "DOWN"


def skr_at_loss(spec: QkdModuleSpec, loss_db: float) -> float:
    """Secret-key rate (kbps) of a module at a given channel loss.

    Piecewise log-linear interpolation between the spec's anchor points,
    clamped to the first anchor below the smallest anchor loss, held at the
    last anchor up to the tolerated maximum, and zero beyond it.
    """
    if loss_db < 0:
        raise ValueError("loss_db must be >= 0")
    if loss_db > spec.max_tolerated_loss_db:
        return 0.0
    profile = spec.rate_profile
    if loss_db <= profile[0][0]:
        return profile[0][1]
    if loss_db >= profile[-1][0]:
        return profile[-1][1]
    for (l0, r0), (l1, r1) in zip(profile, profile[1:]):
        if l0 <= loss_db <= l1:
            if loss_db == l0:
                return r0
            if loss_db == l1:
                return r1
            if r0 <= 0.0 or r1 <= 0.0:
                frac = (loss_db - l0) / (l1 - l0)
                return r0 + frac * (r1 - r0)
            frac = (loss_db - l0) / (l1 - l0)
            return math.exp(math.log(r0) + frac * (math.log(r1) - math.log(r0)))
    raise AssertionError("unreachable: profile scan fell through")


@dataclass
class KeyBlock:
    """One chunk of generated key material. Values are immutable; the
    ``consumed`` flag belongs to the holding store and flips exactly once."""

    key_id: str  # 128-bit hex
    bits: bytes
    size_bytes: int
    channel_id: str
    created_at: float
    consumed: bool = False

    def mark_consumed(self) -> None:
        if self.consumed:
            raise ValueError(f"key block {self.key_id} consumed twice")
        self.consumed = True

    def twin(self) -> "KeyBlock":
        """Fresh unconsumed instance with identical identity and bits, for
        the other endpoint's store."""
        return KeyBlock(self.key_id, self.bits, self.size_bytes, self.channel_id, self.created_at)


@dataclass(frozen=True)
class LinkHealth:
    channel_id: str
    current_skr_kbps: float
    current_qber_pct: float | None
    window_start: float
    window_end: float


@dataclass
class QuantumChannel:
    channel_id: str
    emitter: str
    receiver: str
    emitter_node: str
    receiver_node: str
    path: tuple[int, ...]
    band: str
    dwdm_channel: str | None
    state: str
    sync_remaining_s: float
    effective_loss_db: float
    established_at: float
    vendor: str = ""


class ChannelSim:
    """Drives one channel's key-generation and health processes."""

    def __init__(
        self,
        channel: QuantumChannel,
        tx_spec: QkdModuleSpec,
        seed,
        *,
        block_bytes: int = 256,
        jitter_sigma: float = 0.1,
        qber_abort_pct: float = 11.0,
        qber_step_pct: float = 0.05,
        qber_reversion: float = 0.05,
    ):
        self.channel = channel
        self.tx_spec = tx_spec
        self.block_bytes = int(block_bytes)
        self.jitter_sigma = float(jitter_sigma)
        self.qber_abort_pct = float(qber_abort_pct)
        self.qber_step_pct = float(qber_step_pct)
        self.qber_reversion = float(qber_reversion)
        self.base_rate_kbps = skr_at_loss(tx_spec, channel.effective_loss_db)
        self._rng = derive_rng(seed, f"jitter:{channel.channel_id}")
        self._bits = EntropyStream(seed, f"bits:{channel.channel_id}")
        self._carry = 0.0
        self._qber = tx_spec.nominal_qber_pct
        self._emitted_blocks = 0

    def mark_up(self) -> None:
        if self.channel.state == SYNCING:
            self.channel.state = UP
            self.channel.sync_remaining_s = 0.0

    def mark_down(self) -> None:
        self.channel.state = DOWN

    def advance(self, dt_s: float, now: float) -> tuple[list[KeyBlock], LinkHealth]:
        """Produce the blocks generated over dt_s and the updated health."""
        ch = self.channel
        if ch.state != UP:
            raise ChannelNotUpError(f"channel {ch.channel_id} not UP (state={ch.state})")
        if dt_s <= 0:
            raise ValueError("dt_s must be positive")

        if self._qber is not None:
            drift = self.qber_reversion * (self.tx_spec.nominal_qber_pct - self._qber)
            noise = self._rng.uniform(-self.qber_step_pct, self.qber_step_pct)
            self._qber = min(25.0, max(0.0, self._qber + (drift + noise) * dt_s))
            if self._qber > self.qber_abort_pct:
                self.mark_down()
                health = LinkHealth(ch.channel_id, 0.0, self._qber, now - dt_s, now)
                return [], health

        jitter = (
            self._rng.lognormvariate(0.0, self.jitter_sigma) if self.jitter_sigma > 0 else 1.0
        )
        rate_kbps = self.base_rate_kbps * jitter
        self._carry += rate_kbps * 125.0 * dt_s  # kbps -> bytes/s
        whole = int(self._carry)
        self._carry -= whole
        blocks = []
        remaining = whole
        while remaining > 0:
            size = min(self.block_bytes, remaining)
            blocks.append(
                KeyBlock(
                    key_id=self._bits.take(16).hex(),
                    bits=self._bits.take(size),
                    size_bytes=size,
                    channel_id=ch.channel_id,
                    created_at=now,
                )
            )
            remaining -= size
        self._emitted_blocks += len(blocks)
        health = LinkHealth(
            channel_id=ch.channel_id,
            current_skr_kbps=rate_kbps if whole else rate_kbps,
            current_qber_pct=self._qber,
            window_start=now - dt_s,
            window_end=now,
        )
        return blocks, health


class ChannelManager:
    """Owns every live channel; establishment, ticking, teardown.

    Subscribers receive ``(channel, blocks, health)`` per tick and
    ``(channel, event)`` on state transitions.
    """

    def __init__(
        self,
        topo: Topology,
        engine: EventEngine,
        seed,
        *,
        epoch_provider=None,
        sync_delay_s: float | None = None,
    ):
        sim_cfg = dict(topo.settings.get("simulation") or {})
        self.topo = topo
        self.engine = engine
        self.seed = seed
        self.sync_delay_s = float(
            sim_cfg.get("sync_delay_s", 60.0) if sync_delay_s is None else sync_delay_s
        )
        self.tick_s = float(sim_cfg.get("tick_s", 1.0))
        self.sim_cfg = sim_cfg
        self.epoch_provider = epoch_provider or (lambda: 0)
        self.channels: dict[str, ChannelSim] = {}
        self.block_subscribers = []
        self.event_subscribers = []
        self._counter = 0

    def on_blocks(self, fn) -> None:
        self.block_subscribers.append(fn)

    def on_event(self, fn) -> None:
        self.event_subscribers.append(fn)

    def _emit_event(self, channel: QuantumChannel, event: str) -> None:
        for fn in self.event_subscribers:
            fn(channel, event)

    def establish_channel(self, candidate: ChannelCandidate, enumerated_epoch=None) -> QuantumChannel:
        """Bring up a channel for a previously enumerated candidate."""
        if enumerated_epoch is not None and enumerated_epoch != self.epoch_provider():
            raise StaleCandidateError(
                f"stale candidate {candidate.emitter}->{candidate.receiver}: "
                f"switch state changed since enumeration"
            )
        self._counter += 1
        channel_id = f"ch-{self._counter:04d}"
        channel = QuantumChannel(
            channel_id=channel_id,
            emitter=candidate.emitter,
            receiver=candidate.receiver,
            emitter_node=candidate.emitter_node,
            receiver_node=candidate.receiver_node,
            path=candidate.path,
            band=candidate.band,
            dwdm_channel=candidate.dwdm_channel,
            state=SYNCING,
            sync_remaining_s=self.sync_delay_s,
            effective_loss_db=path_loss(self.topo, candidate.path, candidate.band),
            established_at=self.engine.now,
            vendor=candidate.vendor,
        )
        sim = ChannelSim(
            channel,
            self.topo.spec_of(candidate.emitter),
            self.seed,
            block_bytes=int(self.sim_cfg.get("block_bytes", 256)),
            jitter_sigma=float(self.sim_cfg.get("rate_jitter_sigma", 0.1)),
            qber_abort_pct=float(self.sim_cfg.get("qber_abort_pct", 11.0)),
            qber_step_pct=float(self.sim_cfg.get("qber_step_pct", 0.05)),
            qber_reversion=float(self.sim_cfg.get("qber_reversion", 0.05)),
        )
        self.channels[channel_id] = sim
        self._emit_event(channel, "SYNCING")
        self.engine.call_after(self.sync_delay_s, self._go_up, channel_id)
        return channel

    def _go_up(self, channel_id: str) -> None:
        sim = self.channels.get(channel_id)
        if sim is None or sim.channel.state != SYNCING:
            return
        sim.mark_up()
        self._emit_event(sim.channel, "UP")
        self.engine.spawn(self._tick_loop(channel_id), delay=self.tick_s)

    def _tick_loop(self, channel_id: str):
        while True:
            sim = self.channels.get(channel_id)
            if sim is None or sim.channel.state != UP:
                return
            blocks, health = sim.advance(self.tick_s, self.engine.now)
            if sim.channel.state == DOWN:
                self._emit_event(sim.channel, "DOWN")
                return
            for fn in self.block_subscribers:
                fn(sim.channel, blocks, health)
            yield self.tick_s

    def teardown(self, channel_id: str, reason: str = "teardown") -> None:
        sim = self.channels.get(channel_id)
        if sim is None or sim.channel.state == DOWN:
            return
        sim.mark_down()
        self._emit_event(sim.channel, f"DOWN:{reason}")

    def live_channels(self) -> list[QuantumChannel]:
        return [s.channel for s in self.channels.values() if s.channel.state != DOWN]

    def channels_between(self, node_a: str, node_b: str, state: str = UP) -> list[QuantumChannel]:
        out = []
        for sim in self.channels.values():
            ch = sim.channel
            if ch.state != state:
                continue
            if {ch.emitter_node, ch.receiver_node} == {node_a, node_b}:
                out.append(ch)
        return out
