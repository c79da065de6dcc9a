"""Network description model: nodes, fibers, switches, module inventory.

Loads the human-editable network file, checks its structural invariants and
answers the two structural queries everything else is built on: path loss
along a fiber sequence, and which emitter/receiver pairings are optically
feasible under a given (or any) switch configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .errors import (
    ConfigError,
    DisconnectedPathError,
    InvariantViolation,
    ReferentialIntegrityError,
    UnknownLinkError,
)

ANY_STATE = "any"

BANDS = ("O", "C")

# Loss figures outside this window are treated as data-entry mistakes.
LOSS_PLAUSIBILITY_DB = (0.0, 40.0)


@dataclass(frozen=True)
class QkdModuleSpec:
    """Catalog entry describing one kind of installed QKD device."""

    spec_id: str
    vendor: str
    technology: str  # CV | DV
    role: str  # emitter | receiver
    band: str  # O | C
    channel: str | None = None  # DWDM label, e.g. "C-37"; None = band-wide
    wavelength_tunable: bool = False
    max_tolerated_loss_db: float = 0.0
    rate_profile: tuple[tuple[float, float], ...] = ()  # (loss_db, skr_kbps)
    nominal_qber_pct: float | None = None


@dataclass(frozen=True)
class FiberLink:
    link_id: int
    endpoint_a: str
    endpoint_b: str
    length_km: float
    loss_db_c_band: float
    loss_db_o_band: float
    fiber_pair_count: int = 1
    classical_channel_count: int = 0

    def loss_db(self, band: str) -> float:
        return self.loss_db_o_band if band == "O" else self.loss_db_c_band

    def other_end(self, node_id: str) -> str:
        if node_id == self.endpoint_a:
            return self.endpoint_b
        if node_id == self.endpoint_b:
            return self.endpoint_a
        raise UnknownLinkError(f"node {node_id} is not an endpoint of link {self.link_id}")

    def touches(self, node_id: str) -> bool:
        return node_id in (self.endpoint_a, self.endpoint_b)


@dataclass(frozen=True)
class InstalledModule:
    """A physical module instance placed at a node.

    ``attach_link`` is set for modules spliced to one fiber through a fixed
    add/drop stage; ``attach_switch`` for modules patched into the node's
    optical switch fabric. Exactly one of the two is set.
    """

    module_id: str
    spec_id: str
    node_id: str
    attach_link: int | None = None
    attach_switch: str | None = None


@dataclass(frozen=True)
class Node:
    node_id: str
    domain: str
    has_optical_switch: bool = False
    is_border: bool = False
    kms_enabled: bool = True
    installed_modules: tuple[str, ...] = ()


@dataclass(frozen=True)
class OpticalSwitch:
    """Port-level optical cross-connect fabric hosted at one node.

    Ports bind either a local fiber-link end or a local module. The live
    matching (``cross_connects``) is runtime state; the tuple stored here is
    only the boot configuration.
    """

    switch_id: str
    host_node: str
    ports: tuple[tuple[str, str, object], ...]  # (port, kind, ref); kind: link|module
    cross_connects: tuple[tuple[str, str], ...] = ()

    def port_map(self) -> dict[str, tuple[str, object]]:
        return {p: (kind, ref) for p, kind, ref in self.ports}

    def port_for_link(self, link_id: int) -> str | None:
        for p, kind, ref in self.ports:
            if kind == "link" and ref == link_id:
                return p
        return None

    def port_for_module(self, module_id: str) -> str | None:
        for p, kind, ref in self.ports:
            if kind == "module" and ref == module_id:
                return p
        return None


@dataclass(frozen=True, eq=True)
class ChannelCandidate:
    """One optically feasible emitter->receiver pairing over a concrete path.

    Identity is (emitter, receiver, path); band/loss/wavelength are derived
    attributes and do not participate in equality.
    """

    emitter: str
    receiver: str
    path: tuple[int, ...]
    emitter_node: str = field(compare=False, default="")
    receiver_node: str = field(compare=False, default="")
    vendor: str = field(compare=False, default="")
    technology: str = field(compare=False, default="")
    band: str = field(compare=False, default="C")
    loss_db: float = field(compare=False, default=0.0)
    dwdm_channel: str | None = field(compare=False, default=None)


@dataclass
class Topology:
    name: str
    nodes: dict[str, Node]
    links: dict[int, FiberLink]
    switches: dict[str, OpticalSwitch]
    module_specs: dict[str, QkdModuleSpec]
    modules: dict[str, InstalledModule]
    switch_insertion_db: float = 1.0
    o_band_factor: float = 1.5
    tunable_channels: tuple[str, ...] = ()
    settings: dict = field(default_factory=dict)  # passthrough sections (simulation, kms, ...)

    def spec_of(self, module_id: str) -> QkdModuleSpec:
        return self.module_specs[self.modules[module_id].spec_id]

    def modules_at(self, node_id: str) -> list[InstalledModule]:
        return [self.modules[m] for m in self.nodes[node_id].installed_modules]

    def switch_at(self, node_id: str) -> OpticalSwitch | None:
        for sw in self.switches.values():
            if sw.host_node == node_id:
                return sw
        return None

    def links_at(self, node_id: str) -> list[FiberLink]:
        return [l for l in self.links.values() if l.touches(node_id)]

    def default_switch_state(self) -> dict[str, frozenset[tuple[str, str]]]:
        return {
            sw.switch_id: frozenset(tuple(sorted(cc)) for cc in sw.cross_connects)
            for sw in self.switches.values()
        }

    def domains(self) -> set[str]:
        return {n.domain for n in self.nodes.values()}


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------


def _req(section: Mapping, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required field '{key}'", where)
    return section[key]


def _round1(x: float) -> float:
    return round(float(x), 1)


def load_topology(document) -> Topology:
    """Parse and validate a network description.

    Accepts a YAML string, a pre-parsed mapping, or a filesystem path.
    Raises ConfigError subclasses with a location pointer on any violation.
    """
    if isinstance(document, Topology):
        return document
    if isinstance(document, (str, Path)) and "\n" not in str(document) and Path(document).exists():
        text = Path(document).read_text()
    elif isinstance(document, str):
        text = document
    else:
        text = None

    if text is not None:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            loc = f"line {mark.line + 1}, column {mark.column + 1}" if mark else None
            raise ConfigError(f"cannot parse network file: {exc}", loc) from exc
    else:
        raw = document

    if not isinstance(raw, Mapping):
        raise ConfigError("network file must be a mapping at top level")

    name = raw.get("name", "unnamed")
    optics = raw.get("optics", {}) or {}
    insertion = float(optics.get("switch_insertion_db", 1.0))
    o_factor = float(optics.get("o_band_factor", 1.5))
    tunable = tuple(optics.get("tunable_channels", ()))

    # --- module spec catalog -------------------------------------------------
    specs: dict[str, QkdModuleSpec] = {}
    for i, s in enumerate(raw.get("module_specs", []) or []):
        where = f"module_specs[{i}]"
        spec_id = _req(s, "spec_id", where)
        tech = _req(s, "technology", where)
        role = _req(s, "role", where)
        band = _req(s, "band", where)
        if tech not in ("CV", "DV"):
            raise InvariantViolation("technology must be CV or DV", f"{where}.technology")
        if role not in ("emitter", "receiver"):
            raise InvariantViolation("role must be emitter or receiver", f"{where}.role")
        if band not in BANDS:
            raise InvariantViolation("band must be O or C", f"{where}.band")
        profile = tuple(
            (float(p[0]), float(p[1])) for p in _req(s, "rate_profile", where)
        )
        if not profile:
            raise InvariantViolation("rate_profile must be non-empty", f"{where}.rate_profile")
        for (l0, r0), (l1, r1) in zip(profile, profile[1:]):
            if not l1 > l0:
                raise InvariantViolation(
                    "rate_profile losses must be strictly increasing",
                    f"{where}.rate_profile",
                )
            if r1 > r0:
                raise InvariantViolation(
                    "rate_profile rates must be non-increasing",
                    f"{where}.rate_profile",
                )
        max_loss = float(_req(s, "max_tolerated_loss_db", where))
        if profile[-1][0] > max_loss:
            raise InvariantViolation(
                "rate_profile extends beyond max_tolerated_loss_db",
                f"{where}.rate_profile",
            )
        specs[spec_id] = QkdModuleSpec(
            spec_id=spec_id,
            vendor=_req(s, "vendor", where),
            technology=tech,
            role=role,
            band=band,
            channel=s.get("channel"),
            wavelength_tunable=bool(s.get("wavelength_tunable", False)),
            max_tolerated_loss_db=max_loss,
            rate_profile=profile,
            nominal_qber_pct=(
                float(s["nominal_qber_pct"]) if s.get("nominal_qber_pct") is not None else None
            ),
        )

    # --- nodes and installed modules -----------------------------------------
    nodes: dict[str, Node] = {}
    modules: dict[str, InstalledModule] = {}
    raw_nodes = raw.get("nodes", []) or []
    if not raw_nodes:
        raise ConfigError("no nodes", "nodes")
    for i, n in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        node_id = _req(n, "node_id", where)
        if node_id in nodes:
            raise InvariantViolation(f"duplicate node_id '{node_id}'", f"{where}.node_id")
        installed = []
        for j, m in enumerate(n.get("modules", []) or []):
            mwhere = f"{where}.modules[{j}]"
            module_id = _req(m, "module_id", mwhere)
            if module_id in modules:
                raise InvariantViolation(
                    f"duplicate module_id '{module_id}'", f"{mwhere}.module_id"
                )
            spec_id = _req(m, "spec", mwhere)
            if spec_id not in specs:
                raise ReferentialIntegrityError(
                    f"unknown module spec '{spec_id}'", f"{mwhere}.spec"
                )
            attach_link = m.get("link")
            attach_switch = m.get("switch")
            if (attach_link is None) == (attach_switch is None):
                raise InvariantViolation(
                    "module must attach to exactly one of link / switch", mwhere
                )
            modules[module_id] = InstalledModule(
                module_id=module_id,
                spec_id=spec_id,
                node_id=node_id,
                attach_link=int(attach_link) if attach_link is not None else None,
                attach_switch=attach_switch,
            )
            installed.append(module_id)
        nodes[node_id] = Node(
            node_id=node_id,
            domain=_req(n, "domain", where),
            has_optical_switch=bool(n.get("has_optical_switch", False)),
            is_border=bool(n.get("is_border", False)),
            kms_enabled=bool(n.get("kms_enabled", True)),
            installed_modules=tuple(installed),
        )

    # --- fiber links ----------------------------------------------------------
    links: dict[int, FiberLink] = {}
    for i, l in enumerate(raw.get("links", []) or []):
        where = f"links[{i}]"
        link_id = int(_req(l, "link_id", where))
        if link_id in links:
            raise InvariantViolation(f"duplicate link_id {link_id}", f"{where}.link_id")
        a, b = _req(l, "endpoint_a", where), _req(l, "endpoint_b", where)
        for ep, fieldname in ((a, "endpoint_a"), (b, "endpoint_b")):
            if ep not in nodes:
                raise ReferentialIntegrityError(
                    f"link {link_id} references unknown node '{ep}'", f"{where}.{fieldname}"
                )
        if a == b:
            raise InvariantViolation("link endpoints must differ", where)
        loss_c = _round1(_req(l, "loss_db_c_band", where))
        loss_o = _round1(l["loss_db_o_band"]) if "loss_db_o_band" in l else _round1(loss_c * o_factor)
        if loss_o < loss_c:
            raise InvariantViolation(
                "loss_db_o_band must be >= loss_db_c_band", f"{where}.loss_db_o_band"
            )
        for v, fieldname in ((loss_c, "loss_db_c_band"), (loss_o, "loss_db_o_band")):
            lo, hi = LOSS_PLAUSIBILITY_DB
            if not (lo <= v <= hi):
                raise InvariantViolation(
                    f"{fieldname}={v} outside plausible range {lo}-{hi} dB",
                    f"{where}.{fieldname}",
                )
        links[link_id] = FiberLink(
            link_id=link_id,
            endpoint_a=a,
            endpoint_b=b,
            length_km=float(_req(l, "length_km", where)),
            loss_db_c_band=loss_c,
            loss_db_o_band=loss_o,
            fiber_pair_count=int(l.get("fiber_pair_count", 1)),
            classical_channel_count=int(l.get("classical_channel_count", 0)),
        )

    # module attach_link references
    for m in modules.values():
        if m.attach_link is not None:
            if m.attach_link not in links:
                raise ReferentialIntegrityError(
                    f"module {m.module_id} attaches to unknown link {m.attach_link}"
                )
            if not links[m.attach_link].touches(m.node_id):
                raise InvariantViolation(
                    f"module {m.module_id} attaches to link {m.attach_link} "
                    f"which does not reach node {m.node_id}"
                )

    # --- switches ---------------------------------------------------------------
    switches: dict[str, OpticalSwitch] = {}
    for i, s in enumerate(raw.get("switches", []) or []):
        where = f"switches[{i}]"
        switch_id = _req(s, "switch_id", where)
        host = _req(s, "host_node", where)
        if host not in nodes:
            raise ReferentialIntegrityError(f"unknown host_node '{host}'", f"{where}.host_node")
        if not nodes[host].has_optical_switch:
            raise InvariantViolation(
                f"node '{host}' hosts a switch but has_optical_switch is false",
                f"{where}.host_node",
            )
        ports: list[tuple[str, str, object]] = []
        seen_ports = set()
        for j, p in enumerate(s.get("ports", []) or []):
            pwhere = f"{where}.ports[{j}]"
            pname = _req(p, "port", pwhere)
            if pname in seen_ports:
                raise InvariantViolation(f"duplicate port '{pname}'", pwhere)
            seen_ports.add(pname)
            if "link" in p:
                lid = int(p["link"])
                if lid not in links:
                    raise ReferentialIntegrityError(f"unknown link {lid}", f"{pwhere}.link")
                if not links[lid].touches(host):
                    raise InvariantViolation(
                        f"link {lid} does not terminate at {host}", f"{pwhere}.link"
                    )
                ports.append((pname, "link", lid))
            elif "module" in p:
                mid = p["module"]
                if mid not in modules:
                    raise ReferentialIntegrityError(f"unknown module '{mid}'", f"{pwhere}.module")
                if modules[mid].node_id != host:
                    raise InvariantViolation(
                        f"module {mid} is not installed at {host}", f"{pwhere}.module"
                    )
                if modules[mid].attach_switch != switch_id:
                    raise InvariantViolation(
                        f"module {mid} is not declared switch-attached to {switch_id}",
                        f"{pwhere}.module",
                    )
                ports.append((pname, "module", mid))
            else:
                raise ConfigError("port must bind a link or a module", pwhere)
        ccs = tuple(
            (str(c[0]), str(c[1])) for c in (s.get("cross_connects", []) or [])
        )
        _check_matching(ccs, seen_ports, where)
        switches[switch_id] = OpticalSwitch(
            switch_id=switch_id, host_node=host, ports=tuple(ports), cross_connects=ccs
        )

    # switch-attached modules must appear as a port on their switch
    for m in modules.values():
        if m.attach_switch is not None:
            sw = switches.get(m.attach_switch)
            if sw is None:
                raise ReferentialIntegrityError(
                    f"module {m.module_id} attaches to unknown switch {m.attach_switch}"
                )
            if sw.port_for_module(m.module_id) is None:
                raise InvariantViolation(
                    f"module {m.module_id} has no port on switch {m.attach_switch}"
                )

    topo = Topology(
        name=name,
        nodes=nodes,
        links=links,
        switches=switches,
        module_specs=specs,
        modules=modules,
        switch_insertion_db=insertion,
        o_band_factor=o_factor,
        tunable_channels=tunable,
        settings={
            k: v
            for k, v in raw.items()
            if k not in ("name", "optics", "nodes", "links", "switches", "module_specs")
        },
    )
    _check_structure(topo)
    return topo


def _check_matching(ccs: Iterable[tuple[str, str]], ports: set[str], where: str) -> None:
    used = set()
    for a, b in ccs:
        for p in (a, b):
            if p not in ports:
                raise InvariantViolation(f"cross_connect references unknown port '{p}'", where)
            if p in used:
                raise InvariantViolation(
                    f"port '{p}' appears in more than one cross_connect", where
                )
            used.add(p)
        if a == b:
            raise InvariantViolation("cross_connect cannot loop a port to itself", where)


def _check_structure(topo: Topology) -> None:
    """Cross-cutting invariants that need the whole document."""
    for node in topo.nodes.values():
        if node.is_border:
            crossing = [
                l
                for l in topo.links_at(node.node_id)
                if topo.nodes[l.other_end(node.node_id)].domain != node.domain
            ]
            if not crossing:
                raise InvariantViolation(
                    f"border node '{node.node_id}' terminates no inter-domain link",
                    f"nodes.{node.node_id}.is_border",
                )
    for link in topo.links.values():
        da = topo.nodes[link.endpoint_a].domain
        db = topo.nodes[link.endpoint_b].domain
        if da != db:
            for ep in (link.endpoint_a, link.endpoint_b):
                if not topo.nodes[ep].is_border:
                    raise InvariantViolation(
                        f"inter-domain link {link.link_id} terminates at "
                        f"non-border node '{ep}'",
                        f"links.{link.link_id}",
                    )
    # No two fixed-wavelength emitters may inject the same channel into the
    # same fiber at the same end (no wavelength plan could separate them).
    adds: dict[tuple[int, str, str], str] = {}
    for m in topo.modules.values():
        spec = topo.module_specs[m.spec_id]
        if m.attach_link is None or spec.role != "emitter":
            continue
        chan = spec.channel if (spec.channel and not spec.wavelength_tunable) else None
        if chan is None and spec.band == "O":
            chan = "O-band"
        if chan is None:
            continue
        key = (m.attach_link, m.node_id, chan)
        if key in adds:
            raise InvariantViolation(
                f"modules {adds[key]} and {m.module_id} both inject {chan} "
                f"into link {m.attach_link} at {m.node_id}",
                "modules",
            )
        adds[key] = m.module_id


# ---------------------------------------------------------------------------
# Path loss
# ---------------------------------------------------------------------------


def _orient_path(topo: Topology, link_ids: Sequence[int]) -> list[tuple[FiberLink, str, str]]:
    """Resolve traversal direction of each link; raise if not a chain."""
    fibers = []
    for lid in link_ids:
        if lid not in topo.links:
            raise UnknownLinkError(f"unknown link id {lid}")
        fibers.append(topo.links[lid])
    if not fibers:
        return []
    if len(fibers) == 1:
        f = fibers[0]
        return [(f, f.endpoint_a, f.endpoint_b)]
    first, second = fibers[0], fibers[1]
    shared = {first.endpoint_a, first.endpoint_b} & {second.endpoint_a, second.endpoint_b}
    if not shared:
        raise DisconnectedPathError(
            f"links {first.link_id} and {second.link_id} share no node"
        )
    junction = sorted(shared)[0]
    start = first.other_end(junction)
    walk = [(first, start, junction)]
    at = junction
    for f in fibers[1:]:
        if not f.touches(at):
            raise DisconnectedPathError(f"link {f.link_id} does not continue from {at}")
        nxt = f.other_end(at)
        walk.append((f, at, nxt))
        at = nxt
    return walk


def path_loss(topo: Topology, link_ids: Sequence[int], band: str) -> float:
    """Total loss of an ordered fiber sequence in one band.

    Adds the configured insertion loss for every switch the signal transits
    at a junction between consecutive links. An empty sequence is lossless.
    """
    if band not in BANDS:
        raise ValueError(f"band must be one of {BANDS}")
    walk = _orient_path(topo, link_ids)
    total = sum(f.loss_db(band) for f, _, _ in walk)
    for (_, _, stop), _nxt in zip(walk, walk[1:]):
        node = topo.nodes[stop]
        if node.has_optical_switch:
            total += topo.switch_insertion_db
    return round(total, 6)


# ---------------------------------------------------------------------------
# Feasible-channel enumeration
# ---------------------------------------------------------------------------


def _compatible(tx: QkdModuleSpec, rx: QkdModuleSpec) -> bool:
    if tx.vendor != rx.vendor or tx.technology != rx.technology:
        return False
    if tx.band != rx.band:
        return False
    if (
        tx.channel
        and rx.channel
        and not tx.wavelength_tunable
        and not rx.wavelength_tunable
        and tx.channel != rx.channel
    ):
        return False
    return True


def _static_drops(topo: Topology, link_id: int, node_id: str) -> set[str]:
    """Wavelengths terminated by fixed add/drop stages at one fiber end."""
    dropped = set()
    for m in topo.modules.values():
        if m.attach_link == link_id and m.node_id == node_id:
            spec = topo.module_specs[m.spec_id]
            if spec.band == "O":
                dropped.add("O-band")
            elif spec.channel and not spec.wavelength_tunable:
                dropped.add(spec.channel)
    return dropped


def _transit_blocked(topo: Topology, tx: QkdModuleSpec, link_id: int, node_id: str) -> bool:
    drops = _static_drops(topo, link_id, node_id)
    if tx.band == "O":
        return "O-band" in drops
    if tx.channel and not tx.wavelength_tunable:
        return tx.channel in drops
    return False  # tunable C-band signals are planned around fixed drops


def _start_links(topo: Topology, mod: InstalledModule, state) -> list[int]:
    if mod.attach_link is not None:
        return [mod.attach_link]
    sw = topo.switches[mod.attach_switch]
    if state == ANY_STATE:
        return [ref for _, kind, ref in sw.ports if kind == "link"]
    matching = state.get(sw.switch_id, frozenset())
    mport = sw.port_for_module(mod.module_id)
    out = []
    for a, b in matching:
        if mport in (a, b):
            other = b if a == mport else a
            kind, ref = sw.port_map()[other]
            if kind == "link":
                out.append(ref)
    return out


def _rx_attached(topo: Topology, rx: InstalledModule, link_id: int, node_id: str, state) -> bool:
    """Can this receiver terminate a signal arriving at node_id on link_id?"""
    if rx.node_id != node_id:
        return False
    if rx.attach_link is not None:
        return rx.attach_link == link_id
    sw = topo.switches[rx.attach_switch]
    lport = sw.port_for_link(link_id)
    if lport is None:
        return False
    if state == ANY_STATE:
        return True
    mport = sw.port_for_module(rx.module_id)
    matching = state.get(sw.switch_id, frozenset())
    return tuple(sorted((lport, mport))) in {tuple(sorted(cc)) for cc in matching}


def _bypass_allowed(
    topo: Topology, tx: QkdModuleSpec, node_id: str, in_link: int, out_link: int, state
) -> bool:
    if _transit_blocked(topo, tx, in_link, node_id):
        return False
    sw = topo.switch_at(node_id)
    if sw is None:
        return False
    pin, pout = sw.port_for_link(in_link), sw.port_for_link(out_link)
    if pin is None or pout is None:
        return False
    if state == ANY_STATE:
        return True
    matching = {tuple(sorted(cc)) for cc in state.get(sw.switch_id, frozenset())}
    return tuple(sorted((pin, pout))) in matching


def enumerate_feasible_channels(
    topo: Topology,
    switch_states=ANY_STATE,
    vendors: set[str] | None = None,
) -> frozenset[ChannelCandidate]:
    """All feasible emitter->receiver channels.

    ``switch_states`` is either ``"any"`` (reachable under some valid switch
    configuration) or a mapping switch_id -> set of (port, port) pairs. With
    a concrete state, tunable candidates are also assigned a collision-free
    DWDM channel; under "any" mutually exclusive alternatives keep ``None``.
    """
    state = switch_states
    if state != ANY_STATE:
        for sid, ccs in state.items():
            if sid not in topo.switches:
                raise UnknownLinkError(f"unknown switch '{sid}'")
            _check_matching(ccs, set(topo.switches[sid].port_map()), f"switch_states[{sid}]")

    emitters = [
        m
        for m in topo.modules.values()
        if topo.spec_of(m.module_id).role == "emitter"
        and (vendors is None or topo.spec_of(m.module_id).vendor in vendors)
    ]
    receivers = [
        m
        for m in topo.modules.values()
        if topo.spec_of(m.module_id).role == "receiver"
        and (vendors is None or topo.spec_of(m.module_id).vendor in vendors)
    ]
    rx_by_node: dict[str, list[InstalledModule]] = {}
    for r in receivers:
        rx_by_node.setdefault(r.node_id, []).append(r)

    found: list[ChannelCandidate] = []
    for tx_mod in sorted(emitters, key=lambda m: m.module_id):
        tx = topo.module_specs[tx_mod.spec_id]

        def explore(at_node: str, came_link: int, path: tuple[int, ...], visited: frozenset[str]):
            # termination at this node
            for rx_mod in sorted(rx_by_node.get(at_node, []), key=lambda m: m.module_id):
                rx = topo.module_specs[rx_mod.spec_id]
                if not _compatible(tx, rx):
                    continue
                if not _rx_attached(topo, rx_mod, came_link, at_node, state):
                    continue
                loss = path_loss(topo, path, tx.band)
                if loss > min(tx.max_tolerated_loss_db, rx.max_tolerated_loss_db):
                    continue
                if tx.wavelength_tunable:
                    dwdm = None  # assigned per concrete switch state
                else:
                    dwdm = tx.channel or f"{tx.band}-band"
                found.append(
                    ChannelCandidate(
                        emitter=tx_mod.module_id,
                        receiver=rx_mod.module_id,
                        path=path,
                        emitter_node=tx_mod.node_id,
                        receiver_node=at_node,
                        vendor=tx.vendor,
                        technology=tx.technology,
                        band=tx.band,
                        loss_db=loss,
                        dwdm_channel=dwdm,
                    )
                )
            # optical bypass further into the network
            for link in topo.links_at(at_node):
                nxt = link.other_end(at_node)
                if nxt in visited or link.link_id == came_link:
                    continue
                if not _bypass_allowed(topo, tx, at_node, came_link, link.link_id, state):
                    continue
                if path_loss(topo, path + (link.link_id,), tx.band) > tx.max_tolerated_loss_db:
                    continue  # loss only grows; prune
                explore(nxt, link.link_id, path + (link.link_id,), visited | {nxt})

        for first in sorted(_start_links(topo, tx_mod, state)):
            link = topo.links[first]
            start = tx_mod.node_id
            explore(
                link.other_end(start),
                first,
                (first,),
                frozenset({start, link.other_end(start)}),
            )

    candidates = sorted(set(found), key=lambda c: (c.emitter, c.receiver, c.path))
    if state != ANY_STATE:
        candidates = _assign_wavelengths(topo, candidates)
    return frozenset(candidates)


def _segment_directions(topo: Topology, cand: ChannelCandidate) -> list[tuple[int, str]]:
    walk = _orient_path(topo, cand.path)
    # orient_path may guess direction for a single link; fix it from the emitter
    segs = []
    at = cand.emitter_node
    for f, _, _ in walk:
        nxt = f.other_end(at)
        segs.append((f.link_id, f"{at}->{nxt}"))
        at = nxt
    return segs


def _assign_wavelengths(
    topo: Topology, candidates: list[ChannelCandidate]
) -> list[ChannelCandidate]:
    """Greedy collision-free channel assignment for a simultaneous set.

    Fixed-wavelength candidates keep their channel; tunable ones take their
    preferred channel when free, else the first free channel from the
    configured tunable plan. Unresolvable candidates are dropped.
    """
    taken: set[tuple[int, str, str]] = set()
    out: list[ChannelCandidate] = []

    def claim(cand: ChannelCandidate, channel: str) -> bool:
        segs = [(lid, d, channel) for lid, d in _segment_directions(topo, cand)]
        if any(s in taken for s in segs):
            return False
        taken.update(segs)
        return True

    tunables = []
    for cand in candidates:
        if cand.dwdm_channel is not None:
            if claim(cand, cand.dwdm_channel):
                out.append(cand)
            continue
        tunables.append(cand)
    for cand in tunables:
        spec = topo.spec_of(cand.emitter)
        preferred = [spec.channel] if spec.channel else []
        for channel in (*preferred, *topo.tunable_channels):
            if channel and claim(cand, channel):
                out.append(
                    ChannelCandidate(
                        **{**cand.__dict__, "dwdm_channel": channel}
                    )
                )
                break
    return sorted(out, key=lambda c: (c.emitter, c.receiver, c.path))


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def describe_topology(topo: Topology) -> dict:
    """Structural summary used by the validate command and the REST API."""
    feasible = enumerate_feasible_channels(topo, ANY_STATE)
    per_vendor: dict[str, int] = {}
    for c in feasible:
        per_vendor[c.vendor] = per_vendor.get(c.vendor, 0) + 1
    return {
        "name": topo.name,
        "nodes": len(topo.nodes),
        "links": len(topo.links),
        "switches": len(topo.switches),
        "modules": len(topo.modules),
        "domains": sorted(topo.domains()),
        "border_nodes": sorted(n.node_id for n in topo.nodes.values() if n.is_border),
        "relay_nodes": sorted(
            n.node_id for n in topo.nodes.values() if not n.kms_enabled
        ),
        "feasible_channels_any": len(feasible),
        "feasible_channels_by_vendor": dict(sorted(per_vendor.items())),
        "feasible_channels_default_state": len(
            enumerate_feasible_channels(topo, topo.default_switch_state())
        ),
    }
