"""Per-node security environment: registration, event dispatch, resource mediation, eviction."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from .protocol import ProtocolConfig
from .receptors import Key, Lock, Receptor, ReceptorRegistry
from .simkernel import EventKind, Packet

RESOURCES = ("storage", "memory", "cpu", "network")
LOCKED = "locked"


class Verdict(str, Enum):
    PASS = "pass"
    ALERT = "alert"
    DROP = "drop"
    CONSUME = "consume"


class ComponentKind(str, Enum):
    ANTIVIRUS = "antivirus"
    FIREWALL = "firewall"
    PACKET_FILTER = "packet_filter"
    IDS = "ids"
    ARTIFICIAL_CELL = "artificial_cell"
    LYMPH_NODE = "lymph_node"
    CNTS = "cnts"


class DuplicateRegistration(ValueError):
    pass


class NoViolationOnRecord(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    kind: str  # unauthorized_resource | authentication_failed | budget_exceeded
    detail: str = ""


@dataclass(frozen=True)
class FileAccess:
    node: str
    path: str
    payload_sigs: tuple = ()
    cause: str = ""

    def trace_detail(self) -> str:
        sigs = "+".join(s.sig_id for s in self.payload_sigs) or "-"
        return f"file:{self.path}:{sigs}"


@dataclass
class BehaviorProbe:
    """What a component did during one tick, as seen by its environment."""

    actions: int = 0
    denied: list[str] = field(default_factory=list)


class ComponentHandle:
    """Base class for everything installed in a security environment."""

    events: tuple[EventKind, ...] = ()

    def __init__(
        self,
        component_id: str,
        kind: ComponentKind,
        *,
        security_value: float = 0.0,
        identity: Receptor | None = None,
        receptors: Iterable[Key] = (),
        action_budget: int = 64,
    ):
        if not 0.0 <= security_value <= 1.0:
            raise ValueError("security_value must lie in [0, 1]")
        self.component_id = component_id
        self.kind = kind
        self.security_value = security_value
        self.identity = identity
        self.receptors: list[Key] = list(receptors)
        if identity is not None:
            self.receptors.append(identity.key)
        self.action_budget = action_budget
        self.active = True

    def __repr__(self):
        return f"{type(self).__name__}({self.component_id!r})"

    def check_keys(self, packet: Packet) -> tuple:
        """Characteristics this component examines on ``packet``."""
        return ()

    def on_packet(self, env: "SecurityEnvironment", packet: Packet) -> Verdict:
        return Verdict.PASS

    def on_file_access(self, env: "SecurityEnvironment", access: FileAccess) -> Verdict:
        return Verdict.PASS

    def on_message(self, env: "SecurityEnvironment", substance: Any) -> Verdict:
        return Verdict.PASS

    def on_tick(self, env: "SecurityEnvironment") -> None:
        pass

    def state(self) -> dict:
        return {}


class LocalServices:
    """Stand-alone services for an environment outside a full simulation."""

    def __init__(self, protocol: ProtocolConfig | None = None):
        self.tick = 0
        self.protocol = protocol or ProtocolConfig()
        self.outbox: list[tuple[str, Any]] = []
        self.admin_feed: list[tuple] = []
        self.alerts: list[tuple] = []
        self.inspections: list[tuple] = []
        self.neighbor_map: dict[str, list[str]] = {}
        self._next_id = 0

    def emit_substance(self, node: str, substance: Any) -> None:
        self.outbox.append((node, substance))

    def make_substance(self, node, message_type, body, locks, hops, ttl):
        from .substances import ArtificialSubstance, Message, MessageType

        self._next_id += 1
        return ArtificialSubstance(
            self._next_id, Message(MessageType(message_type), dict(body)), hops, ttl, tuple(locks), node, self.tick
        )

    def neighbors(self, node: str) -> list[str]:
        return list(self.neighbor_map.get(node, []))

    def notify_admin(self, tick: int, source: str, node: str, message: str) -> None:
        self.admin_feed.append((tick, source, node, message))

    def record_alert(self, *row) -> None:
        self.alerts.append(row)

    def record_inspection(self, *row) -> None:
        self.inspections.append(row)

    def record_substance(self, *row) -> None:
        pass


class SecurityEnvironment:
    """Hosts protection components on one node and mediates all their access."""

    def __init__(
        self,
        node: str,
        receptors: ReceptorRegistry,
        *,
        services: Any = None,
        collaborative: bool = False,
        audit: list | None = None,
    ):
        self.node = node
        self.receptors = receptors
        self.services = services if services is not None else LocalServices()
        self.collaborative = collaborative
        self.audit = audit
        self.components: dict[str, ComponentHandle] = {}
        self.subscriptions: dict[EventKind, list[ComponentHandle]] = {}
        self.resource_policy: dict[str, Lock] = {}
        self.misbehavior_log: list[tuple[int, str, Violation]] = []
        self.evicted: set[str] = set()
        self.keys: list[Key] = []
        self.log: list[tuple] = []
        self.online = True
        self.failed = False
        self._probe_tick = -1
        self._probes: dict[str, BehaviorProbe] = {}

    # -- registry ------------------------------------------------------------

    @property
    def tick(self) -> int:
        return self.services.tick

    @property
    def protocol(self) -> ProtocolConfig:
        return self.services.protocol

    def register(self, component: ComponentHandle, events: Iterable[EventKind] | None = None) -> None:
        cid = component.component_id
        if cid in self.components:
            raise DuplicateRegistration(f"{cid} already registered at {self.node}")
        if cid in self.evicted:
            raise DuplicateRegistration(f"{cid} was evicted from {self.node}")
        self.components[cid] = component
        for kind in component.events if events is None else events:
            self.subscriptions.setdefault(kind, []).append(component)

    def unregister(self, component: ComponentHandle) -> None:
        """Remove a component that leaves on its own (for example a migrating cell)."""
        if self.components.pop(component.component_id, None) is None:
            return
        for subs in self.subscriptions.values():
            if component in subs:
                subs.remove(component)
        self._probes.pop(component.component_id, None)

    def resident(self) -> list[ComponentHandle]:
        return [c for c in self.components.values() if c.active]

    # -- dispatch ------------------------------------------------------------

    def _audit(self, component_id: str, kind: EventKind | str, verdict: str) -> None:
        if self.audit is not None:
            label = kind.label if isinstance(kind, EventKind) else kind
            self.audit.append((self.tick, self.node, component_id, label, verdict))

    def dispatch(self, kind: EventKind, payload: Any) -> list[tuple[ComponentHandle, Verdict | str]]:
        """Offer an event to subscribers in registration order.

        Packets and file accesses stop at the first drop. Substances are
        offered to every resident component but only readable with a key.
        """
        if not self.online:
            return []
        if kind is EventKind.SUBSTANCE_ARRIVAL:
            return self._dispatch_substance(payload)
        results: list[tuple[ComponentHandle, Verdict | str]] = []
        checked: set = set()
        n_checks = redundant = 0
        dedupe = self.collaborative and self.protocol.dedupe_checks
        for comp in list(self.subscriptions.get(kind, ())):
            if not comp.active:
                continue
            if kind is EventKind.PACKET_ARRIVAL:
                keys = set(comp.check_keys(payload))
                if dedupe and keys and keys <= checked:
                    continue
                n_checks += len(keys)
                redundant += len(keys & checked)
                checked |= keys
                verdict = comp.on_packet(self, payload)
            else:
                verdict = comp.on_file_access(self, payload)
            self._count_action(comp)
            results.append((comp, verdict))
            if self.audit is not None:
                self._audit(comp.component_id, kind, verdict.value)
            if verdict is Verdict.DROP:
                break
        if kind is EventKind.PACKET_ARRIVAL and n_checks:
            self.services.record_inspection(self.tick, payload.packet_id, self.node, n_checks, redundant)
        return results

    def _dispatch_substance(self, substance: Any) -> list[tuple[ComponentHandle, Verdict | str]]:
        results: list[tuple[ComponentHandle, Verdict | str]] = []
        locks = substance.locks
        readers = 0
        if self.receptors.any_match(locks, self.keys):
            self.on_message(substance)
            readers += 1
        for comp in list(self.components.values()):
            if not comp.active:
                continue
            if self.receptors.any_match(locks, comp.receptors):
                verdict: Verdict | str = comp.on_message(self, substance)
                readers += 1
            else:
                verdict = LOCKED
            results.append((comp, verdict))
            if self.audit is not None:
                self._audit(comp.component_id, EventKind.SUBSTANCE_ARRIVAL, verdict if verdict == LOCKED else verdict.value)
        self.services.record_substance(self.tick, substance.substance_id, self.node, "deliver" if readers else LOCKED)
        return results

    def on_message(self, substance: Any) -> None:
        """Messages addressed to the environment itself; the simulation overrides this hook."""
        handler = getattr(self.services, "environment_message", None)
        if handler is not None:
            handler(self, substance)

    # -- resources and checks ----------------------------------------------------

    def _probe(self, component: ComponentHandle) -> BehaviorProbe:
        tick = self.services.tick
        if self._probe_tick != tick:
            self._probe_tick = tick
            self._probes = {}
        probe = self._probes.get(component.component_id)
        if probe is None:
            probe = self._probes[component.component_id] = BehaviorProbe()
        return probe

    def _count_action(self, component: ComponentHandle) -> None:
        self._probe(component).actions += 1

    def request_resource(self, component: ComponentHandle, resource: str) -> bool:
        if resource not in RESOURCES:
            raise ValueError(f"unknown resource {resource!r}")
        probe = self._probe(component)
        probe.actions += 1
        lock = self.resource_policy.get(resource)
        if lock is None:
            return True
        if self.receptors.any_match((lock,), component.receptors):
            return True
        probe.denied.append(resource)
        return False

    def check_component(self, component: ComponentHandle, probe: BehaviorProbe | None = None) -> Violation | None:
        """Return ``None`` if the component behaves, otherwise the logged violation."""
        if probe is None:
            probe = self._probe(component)
        violation = None
        ident = component.identity
        if ident is None or not self.receptors.authenticate(ident.key, component.kind.value):
            violation = Violation("authentication_failed", component.kind.value)
        elif any(not self.receptors.is_genuine(k) for k in component.receptors):
            violation = Violation("authentication_failed", "forged receptor key")
        elif probe.denied:
            violation = Violation("unauthorized_resource", ",".join(probe.denied))
        elif probe.actions > component.action_budget:
            violation = Violation("budget_exceeded", f"{probe.actions}>{component.action_budget}")
        if violation is not None:
            self.misbehavior_log.append((self.tick, component.component_id, violation))
        return violation

    def evict(self, component: ComponentHandle, reason: Violation) -> None:
        cid = component.component_id
        if not any(c == cid for _, c, _ in self.misbehavior_log):
            raise NoViolationOnRecord(cid)
        had_components = bool(self.components)
        self.unregister(component)
        component.active = False
        self.evicted.add(cid)
        report = getattr(self.services, "report_eviction", None)
        if report is not None:
            report(self, component, reason)
        if had_components and not self.components:
            # Whole environment gone: treat like an offline blackout.
            self.failed = True
            self.online = False
            self.services.notify_admin(self.tick, f"secenv:{self.node}", self.node, "environment failed")

    # -- outbound ------------------------------------------------------------

    def emit(self, component: ComponentHandle | None, message_type, body: dict, locks, hops: int, ttl: int) -> bool:
        """Pack ``body`` into a substance and hand it to the network."""
        if component is not None and not self.request_resource(component, "network"):
            return False
        substance = self.services.make_substance(self.node, message_type, body, locks, hops, ttl)
        self.services.emit_substance(self.node, substance)
        return True

    def report_detection(
        self, component: ComponentHandle, *, implicated: str, sig: Any = None, kind: str = "intrusion", match: str = "exact"
    ) -> None:
        """Route a detection: a substance in collaborative mode, the local log otherwise."""
        family = getattr(sig, "family_id", None)
        sig_id = getattr(sig, "sig_id", None)
        self.services.record_alert(
            self.tick, self.node, component.component_id, implicated, kind, family or "", sig_id or "", match
        )
        if not self.collaborative:
            self.log.append((self.tick, component.component_id, kind, implicated, sig_id))
            return
        raise_alert = getattr(self.services, "raise_alert", None)
        if raise_alert is not None:
            raise_alert(self, component, implicated=implicated, sig=sig, kind=kind, match=match)

    def neighbors(self) -> list[str]:
        return self.services.neighbors(self.node)
