"""Artificial cells: small mobile protection agents with one narrow task each."""

from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .receptors import Key, ReceptorRegistry
from .secenv import ComponentHandle, ComponentKind, SecurityEnvironment, Verdict
from .selfmgmt import ROAMING
from .simkernel import EventKind, Packet


class CellType(str, Enum):
    MATCHER = "matcher"
    FUSION = "fusion"
    PROBER = "prober"
    REPAIR = "repair"


@dataclass(frozen=True)
class MatcherProgram:
    sig_id: str
    family_id: str = ""

    def __post_init__(self):
        if not self.family_id:
            object.__setattr__(self, "family_id", self.sig_id.split("~", 1)[0])


@dataclass(frozen=True)
class FusionProgram:
    window: int = 10
    threshold: int = 2


@dataclass(frozen=True)
class ProberProgram:
    period: int = 10
    staleness_bound: int = 2


@dataclass(frozen=True)
class RepairProgram:
    families: frozenset[str] = frozenset()


@dataclass(frozen=True)
class AlertRecord:
    tick: int
    source: str
    node: str
    family: str = ""


class ArtificialCell(ComponentHandle):
    def __init__(
        self,
        cell_id: str,
        cell_type: CellType,
        program,
        *,
        security_value: float,
        birth_tick: int,
        lifetime: int,
        location: str | None = None,
        kind_name: str = "",
        origin_cnts: str = "",
        **kw,
    ):
        super().__init__(cell_id, ComponentKind.ARTIFICIAL_CELL, security_value=security_value, **kw)
        if lifetime < 1:
            raise ValueError("lifetime must be positive")
        self.cell_type = CellType(cell_type)
        self.program = program
        self.birth_tick = birth_tick
        self.lifetime = lifetime
        self.location = location
        self.kind_name = kind_name or self.cell_type.value
        self.origin_cnts = origin_cnts
        self.danger_level = 0.0
        self.mobility_state = ROAMING
        self.calm_ticks = 0
        self.events = (EventKind.PACKET_ARRIVAL,) if self.cell_type is CellType.MATCHER else ()
        # fusion
        self.window: list[AlertRecord] = []
        self.requested: dict[str, int] = {}
        # repair
        self.jobs: dict[str, str] = {}
        self._alerted: tuple[int, set] = (-1, set())

    @property
    def cell_id(self) -> str:
        return self.component_id

    @property
    def expires_at(self) -> int:
        return self.birth_tick + self.lifetime

    @property
    def family(self) -> str | None:
        return getattr(self.program, "family_id", None)

    def trace_detail(self) -> str:
        return self.cell_id

    def check_keys(self, packet: Packet) -> tuple:
        if self.cell_type is CellType.MATCHER:
            return (("sig", self.program.sig_id),)
        return ()

    # -- event handlers ------------------------------------------------------------

    def on_packet(self, env: SecurityEnvironment, packet: Packet) -> Verdict:
        proto = env.protocol
        verdict, hit, mode = matcher_match(self, packet, proto.danger_threshold)
        if verdict is Verdict.ALERT:
            tick, done = self._alerted
            if tick != env.tick:
                done = set()
                self._alerted = (env.tick, done)
            if packet.src not in done:
                done.add(packet.src)
                env.report_detection(self, implicated=packet.src, sig=hit, match=mode)
        return verdict

    def on_message(self, env: SecurityEnvironment, substance) -> Verdict:
        msg = substance.message
        body = msg.body
        kind = msg.type.value
        if self.cell_type is CellType.MATCHER and kind == "warning":
            self.danger_level += 1.0
        elif self.cell_type is CellType.FUSION and kind in ("alert", "warning"):
            if body.get("kind") in ("intrusion", "silent", "abnormal"):
                self.window.append(AlertRecord(env.tick, body["source"], body["node"], body.get("family", "")))
        elif self.cell_type is CellType.REPAIR and kind == "quarantine_request":
            self.jobs[body["node"]] = body.get("family", "")
        return Verdict.CONSUME

    def on_tick(self, env: SecurityEnvironment) -> None:
        services = env.services
        proto = env.protocol
        if self.cell_type is CellType.MATCHER:
            self.danger_level *= proto.danger_decay
        elif self.cell_type is CellType.FUSION:
            now = env.tick
            horizon = now - self.program.window
            self.window = [a for a in self.window if a.tick > horizon]
            for node in fusion_evaluate(self, self.window, now):
                last = self.requested.get(node)
                if last is not None and now - last < self.program.window:
                    continue
                self.requested[node] = now
                evidence = [a for a in self.window if a.node == node]
                families = sorted({a.family for a in evidence if a.family})
                newest = max(a.tick for a in evidence)
                services.request_quarantine(env, self, node, families[0] if families else "", newest)
        elif self.cell_type is CellType.PROBER:
            if (env.tick - self.birth_tick) % self.program.period == 0:
                newest = services.newest_version()
                for target in [env.node, *env.neighbors()]:
                    result = probe_status(self, services.probe_environment(env, target), newest)
                    if result != "ok":
                        env.report_detection(self, implicated=target, kind=result, match="")
        elif self.cell_type is CellType.REPAIR:
            services.repair_visit(env, self)

    def state(self) -> dict:
        return {"danger_level": self.danger_level, "mobility": self.mobility_state, "location": self.location}


# -- operations -----------------------------------------------------------------


def matcher_match(cell: ArtificialCell, packet: Packet, danger_threshold: float):
    """``(verdict, matched signature, mode)`` where mode is exact or family."""
    rule = cell.program
    for sig in packet.payload_sigs:
        if sig.sig_id == rule.sig_id:
            return Verdict.ALERT, sig, "exact"
    if cell.danger_level >= danger_threshold:
        for sig in packet.payload_sigs:
            if sig.family_id == rule.family_id:
                return Verdict.ALERT, sig, "family"
    return Verdict.PASS, None, ""


def matcher_inspect(cell: ArtificialCell, packet: Packet, danger_threshold: float = 1.0) -> Verdict:
    if cell.cell_type is not CellType.MATCHER:
        raise ValueError("matcher_inspect needs a matcher cell")
    return matcher_match(cell, packet, danger_threshold)[0]


def fusion_evaluate(cell: ArtificialCell, alert_window: Iterable[AlertRecord], now: int | None = None) -> list[str]:
    """Nodes implicated by at least ``threshold`` distinct sources within the window."""
    program: FusionProgram = cell.program
    sources: dict[str, set[str]] = {}
    for a in alert_window:
        if now is not None and a.tick <= now - program.window:
            continue
        sources.setdefault(a.node, set()).add(a.source)
    return sorted(n for n, s in sources.items() if len(s) >= program.threshold)


def probe_status(cell: ArtificialCell, target_env: SecurityEnvironment | None, newest_version: int) -> str:
    """``ok``, ``stale`` or ``silent`` for one target environment."""
    if target_env is None or not target_env.online:
        return "silent"
    bound = cell.program.staleness_bound
    for comp in target_env.resident():
        db = getattr(comp, "db", None)
        if db is not None and newest_version - db.version > bound:
            return "stale"
    return "ok"


def disinfect(cell: ArtificialCell, node: str, infection, tick: int) -> str:
    """Clean ``node`` when the infecting family is in the cell's action set.

    Returns ``cleaned``, ``failed`` or ``noop`` (node was not infected).
    """
    if cell.cell_type is not CellType.REPAIR:
        raise ValueError("disinfect needs a repair cell")
    rec = infection[node]
    if not rec.infected:
        return "noop"
    if rec.infecting_sig.family_id in cell.program.families:
        infection.clean(node, tick)
        return "cleaned"
    return "failed"


def migration_probabilities(options: Sequence[str], attraction: Mapping[str, float], autonomy: float) -> list[float]:
    """Mixture of uniform exploration (weight ``autonomy``) and ``1 + attraction`` weights."""
    k = len(options)
    weights = [1.0 + max(0.0, attraction.get(o, 0.0)) for o in options]
    total = sum(weights)
    return [autonomy / k + (1.0 - autonomy) * w / total for w in weights]


def migrate(cell: ArtificialCell, options: Sequence[str], attraction: Mapping[str, float], rng: random.Random, autonomy: float = 0.1) -> str:
    """Pick the next location for a roaming cell; one draw from ``rng``.

    ``options`` lists the current node first followed by its neighbors.
    Anchored cells stay where they are without consuming a draw.
    """
    if cell.mobility_state != ROAMING:
        return cell.location
    probs = migration_probabilities(options, attraction, autonomy)
    u = rng.random()
    acc = 0.0
    for node, p in zip(options, probs):
        acc += p
        if u < acc:
            return node
    return options[-1]


@dataclass(frozen=True)
class CellSpec:
    name: str
    cell_type: CellType
    security_value: float
    program: Any


def spec_from_dict(name: str, data: Mapping) -> CellSpec:
    ctype = CellType(data["type"])
    sv = float(data.get("security_value", 0.2))
    if ctype is CellType.MATCHER:
        program = MatcherProgram(data["sig"], data.get("family", ""))
    elif ctype is CellType.FUSION:
        program = FusionProgram(int(data.get("window", 10)), int(data.get("threshold", 2)))
    elif ctype is CellType.PROBER:
        program = ProberProgram(int(data.get("period", 10)), int(data.get("staleness_bound", 2)))
    else:
        program = RepairProgram(frozenset(data.get("families", ())))
    return CellSpec(name, ctype, sv, program)


class CellFactory:
    """Mints cells with fresh identity receptors and drawn lifetimes.

    Draw order per cell: one lifetime draw.
    """

    def __init__(
        self,
        catalog: Mapping[str, CellSpec],
        registry: ReceptorRegistry,
        rng: random.Random,
        lifetime: tuple[int, int] = (80, 120),
        extra_keys: Iterable[Key] = (),
    ):
        lo, hi = lifetime
        if lo < 1 or hi < lo:
            raise ValueError("lifetime range must satisfy 1 <= lo <= hi")
        self.catalog = dict(catalog)
        self.registry = registry
        self.rng = rng
        self.lifetime = (lo, hi)
        self.extra_keys = list(extra_keys)
        self._ids = itertools.count()

    def keys_for(self, spec: CellSpec) -> list[Key]:
        keys = [self.registry.channel("cell", spec.cell_type.value).key, self.registry.channel("cell").key]
        if spec.cell_type is CellType.MATCHER:
            keys.append(self.registry.channel("matcher_family", spec.program.family_id).key)
        return keys + self.extra_keys

    def make(self, kind_name: str, location: str, tick: int, *, lifetime: int | None = None, origin_cnts: str = "") -> ArtificialCell:
        spec = self.catalog[kind_name]
        if lifetime is None:
            lifetime = self.rng.randint(*self.lifetime)
        cell_id = f"c{next(self._ids):05d}"
        return ArtificialCell(
            cell_id,
            spec.cell_type,
            spec.program,
            security_value=spec.security_value,
            birth_tick=tick,
            lifetime=lifetime,
            location=location,
            kind_name=kind_name,
            origin_cnts=origin_cnts,
            identity=self.registry.mint(ComponentKind.ARTIFICIAL_CELL.value, spec.cell_type.value),
            receptors=self.keys_for(spec),
        )


@dataclass
class CellPopulation:
    """Live cells by id plus their per-node residence."""

    cells: dict[str, ArtificialCell] = field(default_factory=dict)

    def add(self, cell: ArtificialCell) -> None:
        self.cells[cell.cell_id] = cell

    def remove(self, cell: ArtificialCell) -> None:
        self.cells.pop(cell.cell_id, None)

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(list(self.cells.values()))

    def counts(self) -> Counter:
        return Counter(c.kind_name for c in self.cells.values())

    def type_counts(self) -> Counter:
        return Counter(c.cell_type.value for c in self.cells.values())

    def at(self, node: str) -> list[ArtificialCell]:
        return [c for c in self.cells.values() if c.location == node]
