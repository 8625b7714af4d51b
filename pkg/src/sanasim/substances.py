"""Artificial substances: bounded diffusion, receptor-locked delivery, lymph nodes and CNTS."""

from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping

from .receptors import Lock, ReceptorRegistry, UnmintedLock
from .secenv import LOCKED, ComponentHandle, ComponentKind, SecurityEnvironment, Verdict
from .simkernel import Event, EventKind, Kernel


class MessageType(str, Enum):
    WARNING = "warning"
    ALERT = "alert"
    QUARANTINE_REQUEST = "quarantine_request"
    STATUS_REPORT = "status_report"
    ATTRACTION_BEACON = "attraction_beacon"
    DEATH_RECORD = "death_record"
    CELL_RELEASE = "cell_release"


@dataclass(frozen=True)
class Message:
    type: MessageType
    body: Mapping[str, Any]


@dataclass(frozen=True)
class ArtificialSubstance:
    substance_id: int
    message: Message
    hops_to_go: int
    time_to_live: int
    locks: tuple[Lock, ...]
    origin: str
    emitted_at: int

    def __post_init__(self):
        if self.hops_to_go < 0 or self.time_to_live < 0:
            raise ValueError("hops_to_go and time_to_live must be >= 0")
        if not self.locks:
            raise ValueError("a substance needs at least one lock")

    @property
    def deadline(self) -> int:
        return self.emitted_at + self.time_to_live

    @property
    def type(self) -> MessageType:
        return self.message.type

    @property
    def body(self) -> Mapping[str, Any]:
        return self.message.body


@dataclass(frozen=True)
class SubstanceCopy:
    """One in-flight copy of a substance with its remaining hop budget."""

    substance: ArtificialSubstance
    hops_to_go: int

    @property
    def distance(self) -> int:
        return self.substance.hops_to_go - self.hops_to_go

    def __getattr__(self, name):
        if name == "substance":
            raise AttributeError(name)
        return getattr(self.substance, name)

    def trace_detail(self) -> str:
        s = self.substance
        return f"sub{s.substance_id}:{s.message.type.value}:h{self.hops_to_go}"


def deliver(substance, component: ComponentHandle, registry: ReceptorRegistry) -> Message | str:
    """The message if ``component`` holds a key for any lock, else ``LOCKED``."""
    if registry.any_match(substance.locks, component.receptors):
        return substance.message
    return LOCKED


class SubstanceNetwork:
    """Hop-by-hop diffusion with per-(substance, node) duplicate suppression."""

    def __init__(
        self,
        kernel: Kernel,
        registry: ReceptorRegistry,
        environments: Mapping[str, SecurityEnvironment] | None = None,
        *,
        on_process: Callable[[str, SubstanceCopy], None] | None = None,
        trace: list | None = None,
    ):
        self.kernel = kernel
        self.registry = registry
        self.environments = environments if environments is not None else {}
        self.forward_sets: dict[str, tuple[str, ...]] = dict(kernel.topology.adjacency)
        self.on_process = on_process
        self.trace = trace
        self.processed: dict[int, set[str]] = {}
        self.duplicates = 0
        self.transmissions = 0
        self._ids = itertools.count(1)
        kernel.on(EventKind.SUBSTANCE_ARRIVAL, self._on_arrival)

    def _log(self, sid: int, node: str, action: str) -> None:
        if self.trace is not None:
            self.trace.append((self.kernel.tick, sid, node, action))

    def make(self, origin: str, message_type: MessageType, body: Mapping, locks: Iterable[Lock], hops: int, ttl: int) -> ArtificialSubstance:
        return ArtificialSubstance(
            next(self._ids), Message(MessageType(message_type), dict(body)), hops, ttl, tuple(locks), origin, self.kernel.tick
        )

    def set_forward_set(self, node: str, nodes: Iterable[str]) -> None:
        allowed = set(self.kernel.topology.adjacency[node])
        chosen = tuple(sorted(nodes))
        if not set(chosen) <= allowed:
            raise ValueError(f"forward set of {node} must be a subset of its neighbors")
        self.forward_sets[node] = chosen

    def emit(self, substance: ArtificialSubstance, node: str) -> None:
        for lock in substance.locks:
            if not self.registry.is_minted(lock):
                raise UnmintedLock(repr(lock))
        self._log(substance.substance_id, node, "emit")
        self.kernel.schedule(
            Event(self.kernel.tick, EventKind.SUBSTANCE_ARRIVAL, node, SubstanceCopy(substance, substance.hops_to_go))
        )

    def _on_arrival(self, event: Event) -> None:
        copy: SubstanceCopy = event.payload
        node = event.node
        sub = copy.substance
        sid = sub.substance_id
        if self.kernel.tick > sub.deadline:
            self._log(sid, node, "expire")
            return
        seen = self.processed.setdefault(sid, set())
        if node in seen:
            self.duplicates += 1
            return
        env = self.environments.get(node)
        if env is not None and not env.online:
            return
        seen.add(node)
        if self.on_process is not None:
            self.on_process(node, copy)
        if env is not None:
            env.dispatch(EventKind.SUBSTANCE_ARRIVAL, copy)
        else:
            self._log(sid, node, "deliver")
        if copy.hops_to_go > 0:
            targets = self.forward_sets.get(node, ())
            if targets:
                self._log(sid, node, "forward")
            nxt = SubstanceCopy(sub, copy.hops_to_go - 1)
            for v in targets:
                self.transmissions += 1
                self.kernel.schedule(Event(self.kernel.tick + 1, EventKind.SUBSTANCE_ARRIVAL, v, nxt))

    def prune(self) -> None:
        """Forget dedup state of substances that can no longer arrive anywhere."""
        # Deadline is not stored per id; keep ids whose copies may still be queued.
        live = {e[3].payload.substance.substance_id for e in self.kernel._queue if e[3].kind is EventKind.SUBSTANCE_ARRIVAL}
        for sid in [s for s in self.processed if s not in live]:
            del self.processed[sid]


# -- lymph nodes ------------------------------------------------------------


@dataclass(frozen=True)
class ResponseRule:
    message_type: MessageType
    action: str  # notify_admin | release_cells | forward_to_cnts | cache
    alert_kinds: tuple[str, ...] = ()
    flood: int = 0


def default_lymph_rules(flood: int) -> list[ResponseRule]:
    return [
        ResponseRule(MessageType.QUARANTINE_REQUEST, "notify_admin"),
        ResponseRule(MessageType.ALERT, "release_cells", alert_kinds=("intrusion",), flood=flood),
        ResponseRule(MessageType.ALERT, "notify_admin", alert_kinds=("silent", "stale", "eviction")),
        ResponseRule(MessageType.STATUS_REPORT, "cache"),
        ResponseRule(MessageType.CELL_RELEASE, "forward_to_cnts"),
    ]


class LymphNode(ComponentHandle):
    def __init__(self, component_id: str, host: str, *, rules=None, window: int = 10, flood: int = 5, release: int = 2, reserve: int = 0, **kw):
        super().__init__(component_id, ComponentKind.LYMPH_NODE, **kw)
        self.host = host
        self.window = window
        self.release = release
        self.reserve = reserve
        self.response_rules: list[ResponseRule] = list(rules) if rules is not None else default_lymph_rules(flood)
        self.status_cache: dict[str, tuple[int, Mapping]] = {}
        self.alert_log: list[tuple[int, str]] = []
        self.responses: list[tuple[int, str, Any]] = []
        self._released: dict[str, int] = {}

    def family_alerts(self, family: str, tick: int) -> int:
        return sum(1 for t, f in self.alert_log if f == family and t > tick - self.window)

    def on_message(self, env: SecurityEnvironment, substance) -> Verdict:
        for action in lymph_respond(self, substance.message, env.tick):
            self.responses.append((env.tick, action[0], action[1:]))
            execute = getattr(env.services, "lymph_action", None)
            if execute is not None:
                execute(env, self, action)
        return Verdict.CONSUME


def lymph_respond(lymph: LymphNode, message: Message, tick: int) -> list[tuple]:
    """Actions fired by the first matching response rule (state updated in place)."""
    body = message.body
    if message.type is MessageType.ALERT and body.get("kind") == "intrusion":
        lymph.alert_log.append((tick, body.get("family", "")))
        lymph.alert_log = [(t, f) for t, f in lymph.alert_log if t > tick - lymph.window]
    for rule in lymph.response_rules:
        if rule.message_type is not message.type:
            continue
        if rule.alert_kinds and body.get("kind") not in rule.alert_kinds:
            continue
        if rule.action == "notify_admin":
            return [("notify_admin", body.get("node", ""), f"{message.type.value}:{body.get('kind', '')}")]
        if rule.action == "cache":
            lymph.status_cache[body.get("node", "")] = (tick, dict(body))
            return [("cache", body.get("node", ""))]
        if rule.action == "forward_to_cnts":
            return [("forward_to_cnts", dict(body))]
        if rule.action == "release_cells":
            family = body.get("family", "")
            if rule.flood and lymph.family_alerts(family, tick) < rule.flood:
                continue
            # one release per family per window
            last = lymph._released.get(family)
            if last is not None and tick - last < lymph.window:
                return []
            lymph._released[family] = tick
            return [("release_cells", family, lymph.release)]
    return []


# -- CNTS -------------------------------------------------------------------


def reweight(
    type_mix: Mapping[str, float],
    family_shares: Mapping[str, float],
    matcher_of: Mapping[str, str],
    *,
    step: float,
    threshold: float,
    cap: float,
) -> dict[str, float]:
    """Shift generation share toward matchers of the dominant alert family.

    The dominant family (largest share, ties to the smaller id) must hold at
    least ``threshold`` of recent alerts. Its matcher type gains ``step``
    before renormalisation, and the matcher type's share never exceeds ``cap``.
    """
    if not family_shares:
        return dict(type_mix)
    family = min(family_shares, key=lambda f: (-family_shares[f], f))
    target = matcher_of.get(family)
    if target is None or family_shares[family] < threshold or target not in type_mix:
        return dict(type_mix)
    raw = dict(type_mix)
    raw[target] += step
    total = sum(raw.values())
    mix = {k: v / total for k, v in raw.items()}
    if mix[target] > cap:
        rest = sum(v for k, v in type_mix.items() if k != target)
        if rest <= 0:
            return dict(type_mix)
        mix = {k: cap if k == target else type_mix[k] * (1 - cap) / rest for k in type_mix}
    return mix


class CNTS(ComponentHandle):
    """Cell factory: mints new cells continuously and tracks the situation."""

    def __init__(
        self,
        component_id: str,
        host: str,
        *,
        generation_rate: float,
        type_mix: Mapping[str, float],
        factory: Callable[[str, str], Any] | None = None,
        matcher_of: Mapping[str, str] | None = None,
        **kw,
    ):
        super().__init__(component_id, ComponentKind.CNTS, **kw)
        if generation_rate < 0:
            raise ValueError("generation_rate must be >= 0")
        total = sum(type_mix.values())
        if not type_mix or total <= 0 or any(v < 0 for v in type_mix.values()):
            raise ValueError("type_mix must be a non-negative distribution")
        self.host = host
        self.generation_rate = generation_rate
        self.type_mix = {k: type_mix[k] / total for k in sorted(type_mix)}
        self.factory = factory
        self.matcher_of = dict(matcher_of or {})
        self.accumulator = 0.0
        self.minted: Counter = Counter()
        self.deaths: Counter = Counter()
        self.alerts: list[tuple[int, str]] = []
        self.quarantined: dict[str, int] = {}
        self.infected_reported: set[str] = set()
        self.stale: set[str] = set()
        self.status: dict[str, tuple[int, Mapping]] = {}
        self.last_reweight = -(10**9)

    def due(self) -> int:
        """Advance the accumulator by one tick and return how many cells to mint."""
        self.accumulator += self.generation_rate
        n = int(self.accumulator + 1e-9)
        self.accumulator -= n
        return n

    def on_message(self, env: SecurityEnvironment, substance) -> Verdict:
        body = substance.message.body
        tick = env.tick
        kind = substance.message.type
        if kind is MessageType.ALERT:
            if body.get("kind") == "intrusion":
                self.alerts.append((tick, body.get("family", "")))
            elif body.get("kind") == "stale":
                self.stale.add(body.get("node", ""))
        elif kind is MessageType.QUARANTINE_REQUEST:
            node = body.get("node", "")
            self.quarantined.setdefault(node, tick)
            self.infected_reported.add(node)
        elif kind is MessageType.DEATH_RECORD:
            if body.get("cnts") == self.component_id:
                self.deaths[body.get("cell_kind", "")] += 1
        elif kind is MessageType.STATUS_REPORT:
            self.status[body.get("node", "")] = (tick, dict(body))
            if body.get("released"):
                self.quarantined.pop(body.get("node", ""), None)
        elif kind is MessageType.CELL_RELEASE:
            execute = getattr(env.services, "cnts_release", None)
            if execute is not None:
                execute(env, self, body)
        return Verdict.CONSUME

    def family_shares(self, tick: int, window: int) -> dict[str, float]:
        recent = Counter(f for t, f in self.alerts if t > tick - window)
        total = sum(recent.values())
        return {f: c / total for f, c in sorted(recent.items())} if total else {}


def cnts_generate(cnts: CNTS, rng: random.Random, tick: int, protocol=None) -> list:
    """Mint this tick's cells at the CNTS host (draw order: one type draw per cell)."""
    if protocol is not None and tick - cnts.last_reweight >= protocol.reweight_window:
        shares = cnts.family_shares(tick, protocol.reweight_window)
        if shares:
            new_mix = reweight(
                cnts.type_mix, shares, cnts.matcher_of,
                step=protocol.reweight_step, threshold=protocol.reweight_threshold, cap=protocol.reweight_cap,
            )
            if new_mix != cnts.type_mix:
                cnts.type_mix = new_mix
                cnts.last_reweight = tick
        cnts.alerts = [(t, f) for t, f in cnts.alerts if t > tick - protocol.reweight_window]
    n = cnts.due()
    kinds = list(cnts.type_mix)
    weights = [cnts.type_mix[k] for k in kinds]
    cells = []
    for _ in range(n):
        kind = rng.choices(kinds, weights)[0]
        cnts.minted[kind] += 1
        cells.append(cnts.factory(kind, cnts.host) if cnts.factory is not None else kind)
    return cells


def snapshot(cnts: CNTS) -> dict:
    """Status view for the administrator, built only from what reached this CNTS."""
    population = {k: cnts.minted[k] - cnts.deaths[k] for k in sorted(set(cnts.minted) | set(cnts.deaths))}
    alert_counts = Counter(f for _, f in cnts.alerts)
    return {
        "cnts": cnts.component_id,
        "population": population,
        "infected_reported": sorted(cnts.infected_reported),
        "quarantined": sorted(cnts.quarantined),
        "alerts_by_family": dict(sorted(alert_counts.items())),
        "stale_components": sorted(cnts.stale),
        "status_reports": {n: t for n, (t, _) in sorted(cnts.status.items())},
        "type_mix": {k: round(v, 6) for k, v in cnts.type_mix.items()},
    }
