"""One simulation instance: wires the kernel, adversary, environments, cells and substances.

The :class:`Simulation` object doubles as the services facade handed to every
security environment, so components never touch global state directly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

from .adversary import (
    BackgroundTraffic,
    InfectionState,
    IntrusionSignature,
    OfflineBoot,
    SignatureRegistry,
    WormSpec,
    offline_infect,
    worm_step,
)
from .cells import ArtificialCell, CellFactory, CellPopulation, CellType, disinfect, migrate, spec_from_dict
from .components import CLASSIC_KINDS, RuleSet, SignatureDB, UpdateServer
from .receptors import ReceptorRegistry
from .scenario import Scenario, validate_scenario
from .secenv import ComponentHandle, ComponentKind, FileAccess, SecurityEnvironment, Verdict
from .selfmgmt import ANCHORED, ROAMING, AttractionField, anchor_policy, assess, compute_level, notify_if_low
from .simkernel import Event, EventKind, Kernel, Packet, build_topology
from .substances import CNTS, LymphNode, MessageType, SubstanceNetwork, cnts_generate

SERIES_COLUMNS = (
    "tick",
    "infected",
    "quarantined",
    "population",
    "roaming",
    "below_threshold",
    "substance_tx",
    "packet_tx",
    "staleness",
    "log_entries",
    "admin_entries",
)


@dataclass
class QuarantineCase:
    since: int
    clean_at: int | None = None
    last_alert: int = -1
    aware: bool = False
    last_beacon: int | None = None


@dataclass
class Traces:
    """Everything a run records; metrics are derived from these rows only."""

    alerts: list[tuple] = field(default_factory=list)
    inspections: dict[tuple[int, str], list[int]] = field(default_factory=dict)
    substances: list[tuple] = field(default_factory=list)
    audit: list[tuple] = field(default_factory=list)
    levels: list[tuple] = field(default_factory=list)
    admin: list[tuple] = field(default_factory=list)
    repairs: list[tuple] = field(default_factory=list)
    population: list[tuple] = field(default_factory=list)
    series: list[tuple] = field(default_factory=list)
    faults: list[tuple] = field(default_factory=list)


class Simulation:
    def __init__(self, scenario: Scenario | dict, *, trace_level: str = "summary"):
        sc = validate_scenario(scenario)
        self.scenario = sc
        self.mode = sc.mode
        self.trace_level = trace_level
        self.full = trace_level == "full"
        self.protocol = sc.protocol_config()
        self.collaborative = self.mode in ("sana", "hybrid")
        self.uses_cells = self.mode in ("sana", "hybrid")
        self.topology = build_topology(sc.topology.description())
        self.kernel = Kernel(self.topology, record_trace=self.full)
        self.kernel.packet_hook = self._inspect_hop
        self.kernel.delivery_hook = self._on_delivery
        self.kernel.on(EventKind.FILE_ACCESS, self._on_file_access)
        self.kernel.on(EventKind.COMPONENT_TIMER, self._on_timer)
        self.kernel.on(EventKind.CELL_MIGRATION, self._on_migration)
        self.kernel.on(EventKind.CELL_EXPIRY, self._on_expiry)
        self.kernel.on(EventKind.CNTS_GENERATION, self._on_generation)
        self.traces = Traces()
        self.receptors = ReceptorRegistry()
        self.signatures = SignatureRegistry()
        self.infection = InfectionState.for_nodes(self.topology.nodes)
        self._rngs: dict[str, random.Random] = {}

        self.envs: dict[str, SecurityEnvironment] = {}
        audit = self.traces.audit if self.full else None
        env_key = self.receptors.channel("secenv").key
        for node in self.topology.nodes:
            env = SecurityEnvironment(node, self.receptors, services=self, collaborative=self.collaborative, audit=audit)
            env.keys.append(env_key)
            self.envs[node] = env
        self.net = SubstanceNetwork(
            self.kernel, self.receptors, self.envs, trace=self.traces.substances if self.full else None
        )

        self.field = AttractionField(self.protocol.attraction_decay)
        self.repair_field = AttractionField(self.protocol.attraction_decay)
        self.levels: dict[str, Any] = {}
        self.last_beacon: dict[str, int] = {}
        self.quarantine: dict[str, QuarantineCase] = {}
        self.released_at: dict[str, int] = {}
        self.fences: dict[str, set[str]] = {n: set() for n in self.topology.nodes}
        self.outbound: dict[str, int] = {}
        self._outbound_tick = -1
        self._packet_tx = 0
        self._substance_tx_seen = 0

        self.update_server = UpdateServer(
            set(sc.update_server.known), 0, {int(k): list(v) for k, v in sc.update_server.releases.items()}
        )
        self.updatables: list[Any] = []
        if self.mode != "none":
            self._install_classic()

        self.population = CellPopulation()
        catalog = {name: spec_from_dict(name, spec.as_dict()) for name, spec in sc.cells.catalog.items()}
        self.factory = CellFactory(catalog, self.receptors, self.rng("lifetimes"), tuple(sc.cells.lifetime))
        self.lymph: dict[str, LymphNode] = {}
        self.cnts: dict[str, CNTS] = {}
        if self.uses_cells:
            self._install_immune()

        self.worms: list[WormSpec] = []
        self.worm_by_family: dict[str, WormSpec] = {}
        for w in sc.adversary.worms:
            sig = self._signature(w.sig)
            for _ in range(w.generation):
                sig = self.signatures.child(sig)
            vulnerable = frozenset(self.topology.nodes if w.vulnerable == "all" else w.vulnerable)
            spec = WormSpec(sig, w.entry, w.fanout, vulnerable, w.mutation_rate, w.start_tick, w.protocol, w.port)
            self.worms.append(spec)
            self.worm_by_family[sig.family_id] = spec
        bg = sc.adversary.background
        self.background = (
            BackgroundTraffic(bg.rate, bg.mix, self.topology.nodes) if bg.rate > 0 else None
        )
        self.boots = []
        for b in sc.adversary.offline_boots:
            self.boots.append(OfflineBoot(b.node, self._signature(b.sig), b.at, b.blackout))
        self.faults = sorted(sc.faults, key=lambda f: (f.tick, f.kind, f.target))

    # -- setup -------------------------------------------------------------------

    def _signature(self, sig_id: str) -> IntrusionSignature:
        try:
            return self.signatures.get(sig_id)
        except KeyError:
            return self.signatures.original(sig_id)

    def rng(self, name: str) -> random.Random:
        """Named substream; independent of how other streams are consumed."""
        stream = self._rngs.get(name)
        if stream is None:
            stream = self._rngs[name] = random.Random(f"{self.scenario.seed}:{name}")
        return stream

    def _install_classic(self) -> None:
        sc = self.scenario
        for node in self.topology.nodes:
            env = self.envs[node]
            for kind in sc.placement.get(self.topology.role(node), ()):
                cfg = sc.classic.get(kind)
                opts: dict[str, Any] = {}
                sv = cfg.security_value if cfg is not None else 0.2
                cls = CLASSIC_KINDS[kind]
                comp_kind = ComponentKind(kind)
                if kind in ("antivirus", "ids"):
                    opts["db"] = SignatureDB(0, set(cfg.known) if cfg is not None else set())
                    opts["update_period"] = cfg.update_period if cfg is not None else 10
                    opts["update_failed"] = cfg.update_failed if cfg is not None else False
                if kind != "antivirus" and cfg is not None and cfg.rules:
                    opts["rules"] = RuleSet.from_list(r.model_dump(exclude_none=True) for r in cfg.rules)
                comp = cls(
                    f"{kind}@{node}",
                    security_value=sv,
                    identity=self.receptors.mint(comp_kind.value, "classic"),
                    action_budget=sc.cells.action_budget,
                    **opts,
                )
                env.register(comp)
                if hasattr(comp, "db"):
                    self.updatables.append(comp)

    def _install_immune(self) -> None:
        sc = self.scenario
        p = self.protocol
        for i, host in enumerate(sc.lymph_nodes):
            lymph = LymphNode(
                f"lymph{i}@{host}",
                host,
                window=p.alert_flood_window,
                flood=p.alert_flood,
                release=p.lymph_release,
                identity=self.receptors.mint(ComponentKind.LYMPH_NODE.value, "lymph"),
                receptors=[self.receptors.channel("lymph_node").key],
                action_budget=10**6,
            )
            self.envs[host].register(lymph)
            self.lymph[lymph.component_id] = lymph
        for i, c in enumerate(sc.cnts):
            mix = c.mix or {k: 1.0 for k in sc.cells.catalog}
            cnts = CNTS(
                f"cnts{i}@{c.host}",
                c.host,
                generation_rate=c.rate,
                type_mix=mix,
                matcher_of=sc.matcher_of,
                identity=self.receptors.mint(ComponentKind.CNTS.value, "cnts"),
                receptors=[self.receptors.channel("cnts").key],
                action_budget=10**6,
            )
            cnts.factory = self._cnts_factory(cnts)
            self.envs[c.host].register(cnts)
            self.cnts[cnts.component_id] = cnts
        self._place_initial_cells()

    def _cnts_factory(self, cnts: CNTS):
        def make(kind: str, host: str) -> ArtificialCell:
            return self.spawn(kind, host, origin=cnts.component_id)

        return make

    def _place_initial_cells(self) -> None:
        sc = self.scenario
        rng = self.rng("placement")
        nodes = list(self.topology.nodes)
        order = [name for name in sorted(sc.cells.initial) for _ in range(sc.cells.initial[name])]
        if sc.cells.placement == "spread":
            # Each kind is dealt round-robin over its own shuffled node order.
            for name in sorted(sc.cells.initial):
                shuffled = nodes[:]
                rng.shuffle(shuffled)
                for i in range(sc.cells.initial[name]):
                    self.spawn(name, shuffled[i % len(shuffled)], origin="initial")
        elif sc.cells.placement == "single":
            for name in order:
                self.spawn(name, nodes[0], origin="initial")
        else:
            for name in order:
                self.spawn(name, rng.choice(nodes), origin="initial")

    def spawn(self, kind: str, node: str, *, origin: str = "") -> ArtificialCell:
        cell = self.factory.make(kind, node, self.kernel.tick, origin_cnts=origin)
        cell.action_budget = self.scenario.cells.action_budget
        self.envs[node].register(cell)
        self.population.add(cell)
        self.kernel.schedule(Event(cell.expires_at, EventKind.CELL_EXPIRY, node, cell))
        return cell

    # -- services facade -------------------------------------------------------------

    @property
    def tick(self) -> int:
        return self.kernel.tick

    def make_substance(self, node, message_type, body, locks, hops, ttl):
        return self.net.make(node, MessageType(message_type), body, locks, hops, ttl)

    def emit_substance(self, node: str, substance) -> None:
        self.net.emit(substance, node)

    def neighbors(self, node: str) -> list[str]:
        return list(self.topology.neighbors(node))

    def notify_admin(self, tick: int, source: str, node: str, message: str) -> None:
        self.traces.admin.append((tick, source, node, message))

    def record_alert(self, tick, node, component, implicated, kind, family, sig, match) -> None:
        self.traces.alerts.append((tick, node, component, implicated, kind, family, sig, match))
        case = self.quarantine.get(implicated)
        if case is not None and kind in ("intrusion", "abnormal"):
            case.last_alert = tick

    def record_inspection(self, tick: int, packet_id: int, node: str, checks: int, redundant: int) -> None:
        row = self.traces.inspections.get((tick, node))
        if row is None:
            self.traces.inspections[(tick, node)] = [1, checks, redundant]
        else:
            row[0] += 1
            row[1] += checks
            row[2] += redundant

    def record_substance(self, tick: int, sid: int, node: str, action: str) -> None:
        if self.full:
            self.traces.substances.append((tick, sid, node, action))

    def _locks(self, *channels: tuple[str, ...]):
        return [self.receptors.channel(*c).lock for c in channels]

    def raise_alert(self, env: SecurityEnvironment, component: ComponentHandle, *, implicated, sig, kind, match) -> None:
        if self.mode == "hybrid" and not isinstance(component, ArtificialCell):
            env.log.append((env.tick, component.component_id, kind, implicated, getattr(sig, "sig_id", None)))
            return
        p = self.protocol
        family = getattr(sig, "family_id", "") or ""
        body = {
            "source": component.component_id,
            "node": implicated,
            "kind": kind,
            "family": family,
            "sig": getattr(sig, "sig_id", "") or "",
            "match": match,
            "at": env.node,
        }
        env.emit(
            component,
            MessageType.ALERT,
            body,
            self._locks(("cell", "fusion"), ("lymph_node",), ("cnts",)),
            p.alert_radius,
            p.alert_ttl,
        )
        if kind == "intrusion" and family and p.warnings_enabled:
            env.emit(
                component,
                MessageType.WARNING,
                {"source": component.component_id, "node": implicated, "kind": "intrusion", "family": family},
                self._locks(("matcher_family", family)),
                p.warning_radius,
                p.warning_ttl,
            )

    def request_quarantine(
        self, env: SecurityEnvironment, cell: ArtificialCell, node: str, family: str, evidence: int
    ) -> None:
        p = self.protocol
        env.emit(
            cell,
            MessageType.QUARANTINE_REQUEST,
            {"source": cell.component_id, "node": node, "family": family, "evidence": evidence},
            self._locks(("secenv",), ("cell", "repair"), ("lymph_node",), ("cnts",)),
            p.quarantine_radius,
            p.quarantine_ttl,
        )

    def newest_version(self) -> int:
        return self.update_server.version

    def probe_environment(self, env: SecurityEnvironment, target: str) -> SecurityEnvironment | None:
        if target != env.node and target not in self.topology.neighbors(env.node):
            return None
        return self.envs.get(target)

    def repair_visit(self, env: SecurityEnvironment, cell: ArtificialCell) -> None:
        node = env.node
        case = self.quarantine.get(node)
        if case is None or case.clean_at is not None:
            cell.jobs.pop(node, None)
            return
        outcome = disinfect(cell, node, self.infection, env.tick)
        self.traces.repairs.append((env.tick, node, cell.component_id, outcome))
        if outcome in ("cleaned", "noop"):
            case.clean_at = env.tick
            cell.jobs.pop(node, None)

    def environment_message(self, env: SecurityEnvironment, copy) -> None:
        msg = copy.message
        body = msg.body
        if msg.type is MessageType.ATTRACTION_BEACON:
            target = self.repair_field if body.get("purpose") == "repair" else self.field
            value = body["strength"] * self.protocol.beacon_geometric ** copy.distance
            target.apply(env.node, body["origin"], value)
        elif msg.type is MessageType.QUARANTINE_REQUEST:
            node = body["node"]
            # Evidence gathered before the last release is already dealt with.
            if body.get("evidence", env.tick) <= self.released_at.get(node, -1):
                return
            if node == env.node or node in self.topology.neighbors(env.node):
                self._enforce_quarantine(node, env.node, env.tick)

    def lymph_action(self, env: SecurityEnvironment, lymph: LymphNode, action: tuple) -> None:
        p = self.protocol
        name = action[0]
        if name == "notify_admin":
            self.notify_admin(env.tick, lymph.component_id, action[1], action[2])
        elif name == "release_cells":
            family, count = action[1], action[2]
            env.emit(
                lymph,
                MessageType.CELL_RELEASE,
                {"family": family, "count": count, "lymph": lymph.component_id},
                self._locks(("cnts",)),
                p.release_radius,
                p.release_ttl,
            )
        elif name == "forward_to_cnts":
            env.emit(lymph, MessageType.CELL_RELEASE, action[1], self._locks(("cnts",)), p.release_radius, p.release_ttl)

    def cnts_release(self, env: SecurityEnvironment, cnts: CNTS, body) -> None:
        kind = cnts.matcher_of.get(body.get("family", ""))
        if kind is None or kind not in self.factory.catalog or not cnts.active:
            return
        for _ in range(int(body.get("count", 0))):
            cnts.minted[kind] += 1
            self.spawn(kind, cnts.host, origin=cnts.component_id)

    def report_eviction(self, env: SecurityEnvironment, component: ComponentHandle, reason) -> None:
        self.notify_admin(env.tick, f"secenv:{env.node}", env.node, f"evicted {component.component_id}: {reason.kind}")
        if isinstance(component, ArtificialCell):
            self.population.remove(component)

    # -- quarantine -------------------------------------------------------------------

    def _enforce_quarantine(self, node: str, by: str, tick: int) -> None:
        case = self.quarantine.get(node)
        if case is None:
            case = self.quarantine[node] = QuarantineCase(since=tick)
            self.infection.quarantine(node, tick)
        if by == node:
            case.aware = True
        else:
            self.fences[by].add(node)

    def _release_quarantine(self, node: str, tick: int) -> None:
        del self.quarantine[node]
        self.released_at[node] = tick
        self.infection.release(node, tick)
        for fenced in self.fences.values():
            fenced.discard(node)
        env = self.envs[node]
        if env.online and self.collaborative:
            self._status_report(env, released=True)

    def _update_quarantine(self, tick: int) -> None:
        obs = self.protocol.observation_period
        for node in sorted(self.quarantine):
            case = self.quarantine[node]
            env = self.envs[node]
            if not case.aware and env.online:
                # Back online behind a fence: neighbours tell it.
                case.aware = True
            if case.clean_at is not None and tick - max(case.clean_at, case.last_alert) >= obs:
                self._release_quarantine(node, tick)

    # -- packets -------------------------------------------------------------------

    def _inspect_hop(self, node: str, packet: Packet) -> str | None:
        self._packet_tx += 1
        env = self.envs[node]
        if not env.online:
            return "offline"
        hops = packet.hop_trace
        if node in self.quarantine and self.quarantine[node].aware:
            return "quarantine"
        fenced = self.fences[node]
        if fenced:
            if len(hops) >= 2 and hops[-2] in fenced:
                return "quarantine"
            if node != packet.dst and self.kernel.next_hop(node, packet.dst) in fenced:
                return "quarantine"
            if packet.dst in fenced and node != packet.dst:
                return "quarantine"
        if len(hops) == 1 and self.collaborative:
            self._watch_outbound(env)
        for comp, verdict in env.dispatch(EventKind.PACKET_ARRIVAL, packet):
            if verdict is Verdict.DROP:
                return f"drop:{comp.component_id}"
            if verdict is Verdict.ALERT:
                packet.neutralized = True
        return None

    def _watch_outbound(self, env: SecurityEnvironment) -> None:
        tick = self.kernel.tick
        if self._outbound_tick != tick:
            self._outbound_tick = tick
            self.outbound = {}
        n = self.outbound[env.node] = self.outbound.get(env.node, 0) + 1
        p = self.protocol
        if n != p.outbound_alarm or not p.warnings_enabled:
            return
        source = f"secenv:{env.node}"
        self.record_alert(tick, env.node, source, env.node, "abnormal", "", "", "")
        env.emit(
            None,
            MessageType.WARNING,
            {"source": source, "node": env.node, "kind": "abnormal", "family": ""},
            self._locks(("cell", "matcher"), ("cell", "fusion")),
            p.warning_radius,
            p.warning_ttl,
        )

    def _on_delivery(self, node: str, packet: Packet) -> None:
        if packet.malicious and not packet.neutralized:
            access = FileAccess(node, f"/inbox/pkt{packet.packet_id}", packet.payload_sigs, f"pkt{packet.packet_id}")
            self.kernel.schedule(Event(self.kernel.tick, EventKind.FILE_ACCESS, node, access))

    def _on_file_access(self, event: Event) -> None:
        access: FileAccess = event.payload
        node = access.node
        env = self.envs[node]
        if not env.online:
            return
        for _, verdict in env.dispatch(EventKind.FILE_ACCESS, access):
            if verdict in (Verdict.ALERT, Verdict.DROP):
                return
        for sig in access.payload_sigs:
            worm = self.worm_by_family.get(sig.family_id)
            if worm is not None and node in worm.vulnerability_set and node not in self.quarantine:
                self.infection.infect(node, sig, self.kernel.tick, access.cause)

    def _send(self, packets: list[Packet]) -> None:
        for pkt in packets:
            self.kernel.send_packet(pkt)

    # -- per-tick phases ---------------------------------------------------------------

    def _apply_faults(self, tick: int) -> None:
        for fault in self.faults:
            if fault.tick != tick:
                continue
            target = None
            if fault.kind == "cell":
                target = self.population.cells.get(fault.target)
            elif fault.kind == "lymph":
                target = self.lymph.get(fault.target)
            else:
                target = self.cnts.get(fault.target)
            if target is None or not target.active:
                self.traces.faults.append((tick, fault.kind, fault.target, "absent"))
                continue
            location = getattr(target, "location", None) or getattr(target, "host")
            self.envs[location].unregister(target)
            target.active = False
            if isinstance(target, ArtificialCell):
                self.population.remove(target)
            self.traces.faults.append((tick, fault.kind, fault.target, "removed"))

    def _offline_boots(self, tick: int) -> None:
        for boot in self.boots:
            env = self.envs[boot.node]
            if tick == boot.at:
                offline_infect(self.infection, boot)
                env.online = False
            elif tick == boot.at + boot.blackout and not env.failed:
                env.online = True

    def _updates(self, tick: int) -> None:
        self.update_server.advance(tick)
        for comp in self.updatables:
            if comp.active and self.envs[comp.component_id.split("@", 1)[1]].online:
                comp.poll_update(self.update_server, tick)

    def _adversary(self, tick: int) -> None:
        if self.background is not None:
            self._send(self.background.emit(self.rng("background")))
        rng = self.rng("adversary")
        for worm in self.worms:
            if tick == worm.start_tick:
                # Seeded past the perimeter, for example from a carried-in laptop.
                self.infection.infect(worm.entry_node, worm.signature, tick, "seed")
            if tick >= worm.start_tick:
                self._send(worm_step(worm, self.infection, rng, self.signatures))

    def _status_report(self, env: SecurityEnvironment, *, released: bool = False) -> None:
        p = self.protocol
        versions = [c.db.version for c in env.resident() if hasattr(c, "db")]
        body = {
            "node": env.node,
            "version": min(versions) if versions else -1,
            "quarantined": env.node in self.quarantine,
            "released": released,
        }
        env.emit(None, MessageType.STATUS_REPORT, body, self._locks(("lymph_node",), ("cnts",)), p.report_radius, p.report_ttl)

    def _heartbeats(self, tick: int) -> None:
        if not self.collaborative or tick % self.protocol.heartbeat_period:
            return
        for node in self.topology.nodes:
            env = self.envs[node]
            if env.online:
                self._status_report(env)

    def _cell_ticks(self) -> None:
        for cell in sorted(self.population, key=lambda c: c.cell_id):
            env = self.envs[cell.location]
            if cell.active and env.online:
                cell.on_tick(env)

    def _check_environments(self) -> None:
        for node in self.topology.nodes:
            env = self.envs[node]
            if not env.online:
                continue
            for comp in env.resident():
                violation = env.check_component(comp)
                if violation is not None:
                    env.evict(comp, violation)

    def _node_level(self, node: str, skip: Any = None):
        env = self.envs[node]
        if not env.online:
            return 0.0
        return compute_level(c.security_value for c in env.resident() if c is not skip)

    def _self_management(self, tick: int) -> None:
        p = self.protocol
        self.field.step()
        self.repair_field.step()
        for node in self.topology.nodes:
            env = self.envs[node]
            if not env.online:
                continue
            values = [c.security_value for c in env.resident()]
            level = assess(node, values, p.level_threshold, tick, self.levels.get(node))
            self.levels[node] = level
            beacon = notify_if_low(
                level,
                tick,
                self.last_beacon.get(node),
                refresh=p.beacon_refresh,
                strength=p.beacon_strength,
                radius=p.beacon_radius,
            )
            if beacon is not None:
                self.last_beacon[node] = tick
                self._beacon(env, beacon.strength, beacon.radius, "cover")
            case = self.quarantine.get(node)
            if case is not None and case.aware and case.clean_at is None:
                if case.last_beacon is None or tick - case.last_beacon >= p.beacon_refresh:
                    case.last_beacon = tick
                    self._beacon(env, p.quarantine_beacon_strength, p.beacon_radius, "repair")
            self._anchor(env, level.level)

    def _beacon(self, env: SecurityEnvironment, strength: float, radius: int, purpose: str) -> None:
        body = {"origin": env.node, "strength": strength, "purpose": purpose}
        env.emit(None, MessageType.ATTRACTION_BEACON, body, self._locks(("secenv",)), radius, radius + 1)

    def _anchor(self, env: SecurityEnvironment, level: float) -> None:
        p = self.protocol
        cells = [c for c in env.resident() if isinstance(c, ArtificialCell)]
        if not cells:
            return
        # Incumbents first; a cell only counts on components that are staying.
        staying = [c.security_value for c in env.resident() if not isinstance(c, ArtificialCell)]
        cells.sort(key=lambda c: (c.mobility_state != ANCHORED, c.cell_id))
        for cell in cells:
            without = compute_level(staying)
            state = anchor_policy(cell, level, without, p.level_threshold, p.hysteresis_ticks)
            if state == ANCHORED:
                staying.append(cell.security_value)

    def _on_timer(self, event: Event) -> None:
        tick = self.kernel.tick
        self._apply_faults(tick)
        self._offline_boots(tick)
        self._updates(tick)
        self._adversary(tick)
        if self.uses_cells:
            self._check_environments()
            self._heartbeats(tick)
            self._cell_ticks()
            self._update_quarantine(tick)
            self._self_management(tick)

    def _on_migration(self, event: Event) -> None:
        rng = self.rng("migration")
        autonomy = self.protocol.autonomy
        for cell in sorted(self.population, key=lambda c: c.cell_id):
            if cell.mobility_state != ROAMING or not cell.active:
                continue
            here = cell.location
            if not self.envs[here].online:
                continue
            options = [here] + [v for v in self.topology.neighbors(here) if self.envs[v].online]
            if cell.cell_type is CellType.REPAIR:
                attraction = {v: self.field.attraction(v) + self.repair_field.attraction(v) for v in options}
            else:
                attraction = {v: self.field.attraction(v) for v in options}
            dest = migrate(cell, options, attraction, rng, autonomy)
            if dest != here:
                self.envs[here].unregister(cell)
                try:
                    self.envs[dest].register(cell)
                except ValueError:
                    self.envs[here].register(cell)
                    continue
                cell.location = dest

    def _on_expiry(self, event: Event) -> None:
        cell: ArtificialCell = event.payload
        if not cell.active or cell.cell_id not in self.population.cells:
            return
        env = self.envs[cell.location]
        env.unregister(cell)
        cell.active = False
        self.population.remove(cell)
        if env.online:
            p = self.protocol
            env.emit(
                None,
                MessageType.DEATH_RECORD,
                {"cell": cell.cell_id, "cell_kind": cell.kind_name, "cnts": cell.origin_cnts},
                self._locks(("cnts",)),
                p.death_radius,
                p.death_ttl,
            )

    def _on_generation(self, event: Event) -> None:
        cnts: CNTS = event.payload
        if not cnts.active or not self.envs[cnts.host].online:
            return
        cnts_generate(cnts, self.rng(f"cnts:{cnts.component_id}"), self.kernel.tick, self.protocol)

    # -- recording ---------------------------------------------------------------------

    def _record(self, tick: int) -> None:
        p = self.protocol
        below = 0
        for node in self.topology.nodes:
            level = self._node_level(node)
            if level < p.level_threshold:
                below += 1
            if self.full:
                attraction = self.field.attraction(node)
                self.traces.levels.append((tick, node, round(level, 6), round(attraction, 6)))
        counts = self.population.counts()
        for kind in sorted(self.factory.catalog):
            self.traces.population.append((tick, kind, counts.get(kind, 0)))
        roaming = sum(1 for c in self.population if c.mobility_state == ROAMING)
        newest = self.update_server.version
        lags = [newest - c.db.version for c in self.updatables if c.active]
        staleness = round(sum(lags) / len(lags), 6) if lags else 0.0
        log_entries = sum(len(env.log) for env in self.envs.values())
        substance_tx = self.net.transmissions - self._substance_tx_seen
        self._substance_tx_seen = self.net.transmissions
        self.traces.series.append(
            (
                tick,
                self.infection.infected_count(),
                len(self.quarantine),
                len(self.population),
                roaming,
                below,
                substance_tx,
                self._packet_tx,
                staleness,
                log_entries,
                len(self.traces.admin),
            )
        )
        self._packet_tx = 0

    def step(self) -> None:
        nxt = self.kernel.tick + 1
        self.kernel.schedule(Event(nxt, EventKind.COMPONENT_TIMER, None, "tick"))
        if self.uses_cells:
            self.kernel.schedule(Event(nxt, EventKind.CELL_MIGRATION, None, "roaming"))
            for cnts in self.cnts.values():
                self.kernel.schedule(Event(nxt, EventKind.CNTS_GENERATION, cnts.host, cnts))
        self.kernel.step()
        self._record(self.kernel.tick)
        if self.kernel.tick % 50 == 0:
            self.net.prune()

    def run(self) -> "Simulation":
        for _ in range(self.scenario.duration):
            self.step()
        return self
