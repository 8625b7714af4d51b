"""Scenario files: schema validation and the canonical desk-scale scenarios."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Literal, Mapping

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .cells import CellType
from .components import CLASSIC_KINDS, DEFAULT_PLACEMENT
from .protocol import ProtocolConfig
from .secenv import Verdict
from .simkernel import ROLES, TopologyError, build_topology, random_topology

MODES = ("none", "baseline", "sana", "hybrid")


class InvalidScenario(ValueError):
    """Raised with a list of ``(field path, message)`` diagnostics."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RandomTopologySpec(_Strict):
    n: int = Field(ge=2)
    extra_edges: int = Field(default=0, ge=0)
    seed: int = 0
    prefix: str = "n"


class TopologySpec(_Strict):
    nodes: list[str] | None = None
    edges: list[tuple[str, str]] | None = None
    random: RandomTopologySpec | None = None
    roles: dict[str, str] = Field(default_factory=dict)
    internet: bool = False

    @model_validator(mode="after")
    def _one_source(self):
        if (self.random is None) == (self.nodes is None):
            raise ValueError("give either 'random' or 'nodes'/'edges'")
        for node, role in self.roles.items():
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r} for {node}")
        return self

    def description(self) -> dict:
        if self.random is not None:
            spec = random_topology(self.random.n, self.random.extra_edges, self.random.seed, self.random.prefix)
        else:
            spec = {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges or []]}
        spec["roles"] = dict(self.roles)
        spec["internet"] = self.internet
        return spec


class RuleSpec(_Strict):
    action: Verdict
    src: str | None = None
    dst: str | None = None
    protocol: str | None = None
    port: int | None = None
    sig: str | None = None


class ClassicSpec(_Strict):
    security_value: float = Field(default=0.2, ge=0.0, le=1.0)
    update_period: int = Field(default=10, ge=1)
    update_failed: bool = False
    known: list[str] = Field(default_factory=list)
    rules: list[RuleSpec] = Field(default_factory=list)


class UpdateServerSpec(_Strict):
    known: list[str] = Field(default_factory=list)
    releases: dict[int, list[str]] = Field(default_factory=dict)


class CellKindSpec(_Strict):
    type: CellType
    security_value: float = Field(default=0.2, ge=0.0, le=1.0)
    sig: str | None = None
    family: str = ""
    window: int = Field(default=10, ge=1)
    threshold: int = Field(default=2, ge=1)
    period: int = Field(default=10, ge=1)
    staleness_bound: int = Field(default=2, ge=0)
    families: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _matcher_rule(self):
        if self.type is CellType.MATCHER and not self.sig:
            raise ValueError("a matcher needs exactly one 'sig' rule")
        return self

    def as_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)


class CellsSpec(_Strict):
    catalog: dict[str, CellKindSpec] = Field(default_factory=dict)
    initial: dict[str, int] = Field(default_factory=dict)
    placement: Literal["uniform", "spread", "single"] = "uniform"
    lifetime: tuple[int, int] = (80, 120)
    action_budget: int = Field(default=1000, ge=1)

    @model_validator(mode="after")
    def _refs(self):
        lo, hi = self.lifetime
        if lo < 1 or hi < lo:
            raise ValueError("lifetime must satisfy 1 <= lo <= hi")
        for name, count in self.initial.items():
            if name not in self.catalog:
                raise ValueError(f"initial population names unknown cell kind {name!r}")
            if count < 0:
                raise ValueError(f"negative initial count for {name!r}")
        return self


class CntsSpec(_Strict):
    host: str
    rate: float = Field(default=0.0, ge=0.0)
    mix: dict[str, float] = Field(default_factory=dict)


class WormSpecModel(_Strict):
    sig: str
    generation: int = Field(default=0, ge=0)
    entry: str
    fanout: int = Field(default=2, ge=1)
    vulnerable: Literal["all"] | list[str] = "all"
    mutation_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    start_tick: int = Field(default=1, ge=1)
    protocol: str = "smb"
    port: int = 445

    @field_validator("sig")
    @classmethod
    def _plain(cls, v: str) -> str:
        if "~" in v:
            raise ValueError("give the original signature id; use 'generation' for mutants")
        return v


class BackgroundSpec(_Strict):
    rate: float = Field(default=0.0, ge=0.0)
    mix: dict[str, float] = Field(default_factory=lambda: {"http": 1.0})


class OfflineBootSpec(_Strict):
    node: str
    sig: str
    at: int = Field(ge=1)
    blackout: int = Field(default=10, ge=1)


class AdversarySpec(_Strict):
    worms: list[WormSpecModel] = Field(default_factory=list)
    background: BackgroundSpec = Field(default_factory=BackgroundSpec)
    offline_boots: list[OfflineBootSpec] = Field(default_factory=list)


class FaultSpec(_Strict):
    tick: int = Field(ge=1)
    kind: Literal["cell", "lymph", "cnts"]
    target: str


class Scenario(_Strict):
    name: str = "scenario"
    seed: int = 0
    duration: int = Field(default=100, ge=0)
    mode: Literal["none", "baseline", "sana", "hybrid"] = "sana"
    topology: TopologySpec
    placement: dict[str, list[str]] = Field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_PLACEMENT.items()})
    classic: dict[str, ClassicSpec] = Field(default_factory=dict)
    update_server: UpdateServerSpec = Field(default_factory=UpdateServerSpec)
    cells: CellsSpec = Field(default_factory=CellsSpec)
    lymph_nodes: list[str] = Field(default_factory=list)
    cnts: list[CntsSpec] = Field(default_factory=list)
    matcher_of: dict[str, str] = Field(default_factory=dict)
    adversary: AdversarySpec = Field(default_factory=AdversarySpec)
    protocol: dict[str, Any] = Field(default_factory=dict)
    faults: list[FaultSpec] = Field(default_factory=list)

    @field_validator("placement")
    @classmethod
    def _kinds(cls, v: dict[str, list[str]]) -> dict[str, list[str]]:
        for role, kinds in v.items():
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
            for k in kinds:
                if k not in CLASSIC_KINDS:
                    raise ValueError(f"unknown component kind {k!r} for role {role!r}")
        return v

    @field_validator("classic")
    @classmethod
    def _classic_kinds(cls, v: dict[str, ClassicSpec]) -> dict[str, ClassicSpec]:
        for k in v:
            if k not in CLASSIC_KINDS:
                raise ValueError(f"unknown component kind {k!r}")
        return v

    @field_validator("protocol")
    @classmethod
    def _protocol(cls, v: dict[str, Any]) -> dict[str, Any]:
        ProtocolConfig.from_dict(v)
        return v

    def protocol_config(self) -> ProtocolConfig:
        data = dict(self.protocol)
        # Collaborative modes coordinate checks unless the scenario says otherwise.
        if self.mode in ("sana", "hybrid"):
            data.setdefault("dedupe_checks", True)
        return ProtocolConfig.from_dict(data)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


def _semantic_errors(sc: Scenario) -> list[tuple[str, str]]:
    errors: list[tuple[str, str]] = []
    try:
        topo = build_topology(sc.topology.description())
    except TopologyError as exc:
        return [("topology", f"{type(exc).__name__}: {exc}")]
    nodes = set(topo.nodes)

    def need(loc: str, node: str) -> None:
        if node not in nodes:
            errors.append((loc, f"unknown node {node!r}"))

    for i, host in enumerate(sc.lymph_nodes):
        need(f"lymph_nodes.{i}", host)
    for i, c in enumerate(sc.cnts):
        need(f"cnts.{i}.host", c.host)
        for kind in c.mix:
            if kind not in sc.cells.catalog:
                errors.append((f"cnts.{i}.mix.{kind}", "unknown cell kind"))
    for fam, kind in sc.matcher_of.items():
        if kind not in sc.cells.catalog:
            errors.append((f"matcher_of.{fam}", f"unknown cell kind {kind!r}"))
    for i, w in enumerate(sc.adversary.worms):
        need(f"adversary.worms.{i}.entry", w.entry)
        if w.vulnerable != "all":
            for node in w.vulnerable:
                need(f"adversary.worms.{i}.vulnerable", node)
    for i, b in enumerate(sc.adversary.offline_boots):
        need(f"adversary.offline_boots.{i}.node", b.node)
    if sc.adversary.background.rate > 0 and len(nodes) < 2:
        errors.append(("adversary.background.rate", "needs at least two nodes"))
    return errors


def validate_scenario(data: Mapping[str, Any] | Scenario) -> Scenario:
    """Parse and check a scenario tree; raise :class:`InvalidScenario` on any problem."""
    if isinstance(data, Scenario):
        sc = data
    else:
        try:
            sc = Scenario.model_validate(dict(data))
        except ValidationError as exc:
            raise InvalidScenario(
                [(".".join(str(p) for p in err["loc"]) or "<root>", err["msg"]) for err in exc.errors()]
            ) from None
    errors = _semantic_errors(sc)
    if errors:
        raise InvalidScenario(errors)
    return sc


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidScenario([("<file>", f"not valid JSON: {exc}")]) from None
    if not isinstance(data, dict):
        raise InvalidScenario([("<root>", "scenario must be a JSON object")])
    return validate_scenario(data)


def with_changes(sc: Scenario, **changes) -> Scenario:
    """Copy of ``sc`` with top-level fields replaced, revalidated."""
    data = copy.deepcopy(sc.to_dict())
    data.update(changes)
    return validate_scenario(data)


# -- canonical scenarios -----------------------------------------------------------


def _degrees(desc: dict) -> dict[str, int]:
    deg = {n: 0 for n in desc["nodes"]}
    for a, b in desc["edges"]:
        deg[a] += 1
        deg[b] += 1
    return deg


def _far_node(desc: dict, start: str) -> str:
    adj: dict[str, list[str]] = {n: [] for n in desc["nodes"]}
    for a, b in desc["edges"]:
        adj[a].append(b)
        adj[b].append(a)
    dist = {start: 0}
    todo = [start]
    for u in todo:
        for v in sorted(adj[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                todo.append(v)
    return min(dist, key=lambda n: (-dist[n], n))


def worm_scenario(seed: int = 42, mode: str = "sana", *, generation: int = 0, warnings: bool = True) -> dict:
    """Scenario A: 50-node network, perimeter IDS on a leaf gateway, internal worm entry."""
    desc = random_topology(50, 10, seed=7)
    deg = _degrees(desc)
    leaves = sorted(n for n, d in deg.items() if d == 1)
    gateway = leaves[0]
    by_degree = sorted(desc["nodes"], key=lambda n: (-deg[n], n))
    switches = [n for n in by_degree if n != gateway][:3]
    rest = [n for n in desc["nodes"] if n != gateway and n not in switches]
    cnts_hosts = [rest[5], rest[30]]
    roles = {gateway: "gateway"}
    roles.update({s: "lymph_node_host" for s in switches})
    roles.update({h: "cnts_host" for h in cnts_hosts})
    entry = _far_node(desc, gateway)
    catalog = {
        "matcher_w0": {"type": "matcher", "sig": "W0", "security_value": 0.2},
        "matcher_w1": {"type": "matcher", "sig": "W1", "security_value": 0.2},
        "matcher_w2": {"type": "matcher", "sig": "W2", "security_value": 0.2},
        "fusion": {"type": "fusion", "window": 10, "threshold": 2, "security_value": 0.2},
        "prober": {"type": "prober", "period": 10, "staleness_bound": 2, "security_value": 0.2},
        "repair": {"type": "repair", "families": ["W0", "W1", "W2"], "security_value": 0.2},
    }
    initial = {"matcher_w0": 30, "matcher_w1": 8, "matcher_w2": 8, "fusion": 24, "prober": 8, "repair": 22}
    mix = {k: v / sum(initial.values()) for k, v in initial.items()}
    protocol = {} if warnings else {"warnings_enabled": False}
    return {
        "name": "A" if generation == 0 else f"A-gen{generation}",
        "seed": seed,
        "duration": 500,
        "mode": mode,
        "topology": {"nodes": desc["nodes"], "edges": desc["edges"], "roles": roles, "internet": True},
        "classic": {
            "antivirus": {"security_value": 0.3},
            "firewall": {"security_value": 0.2},
            "packet_filter": {"security_value": 0.2},
            "ids": {"security_value": 0.3, "rules": [{"action": "drop", "sig": "W0"}]},
        },
        "cells": {"catalog": catalog, "initial": initial, "placement": "spread", "lifetime": [80, 120]},
        "lymph_nodes": switches,
        "cnts": [{"host": h, "rate": 0.5, "mix": mix} for h in cnts_hosts],
        "matcher_of": {"W0": "matcher_w0", "W1": "matcher_w1", "W2": "matcher_w2"},
        "adversary": {
            "worms": [{"sig": "W0", "generation": generation, "entry": entry, "fanout": 2, "vulnerable": "all", "start_tick": 95}],
            "background": {"rate": 2.0, "mix": {"http": 3, "smtp": 1, "dns": 1}},
        },
        "protocol": protocol,
    }


def convergence_scenario(seed: int = 3) -> dict:
    """Scenario B: 30 nodes, cells only, three times the coverage demand, no adversary."""
    desc = random_topology(30, 6, seed=11)
    return {
        "name": "B",
        "seed": seed,
        "duration": 1000,
        "mode": "sana",
        "topology": {"nodes": desc["nodes"], "edges": desc["edges"]},
        "placement": {},
        "cells": {
            "catalog": {"guard": {"type": "matcher", "sig": "W0", "security_value": 0.5}},
            "initial": {"guard": 90},
            "placement": "single",
            "lifetime": [5000, 5000],
        },
    }


def offline_scenario(seed: int = 5, mode: str = "sana") -> dict:
    """Scenario C: a node boots an infected image offline and goes silent."""
    desc = random_topology(30, 6, seed=13)
    lymph = sorted(desc["nodes"], key=lambda n: (-_degrees(desc)[n], n))[:2]
    roles = {n: "lymph_node_host" for n in lymph}
    target = "n17"
    catalog = {
        "prober": {"type": "prober", "period": 10, "staleness_bound": 2, "security_value": 0.2},
        "fusion": {"type": "fusion", "window": 10, "threshold": 2, "security_value": 0.2},
        "repair": {"type": "repair", "families": ["V1"], "security_value": 0.2},
    }
    return {
        "name": "C",
        "seed": seed,
        "duration": 200,
        "mode": mode,
        "topology": {"nodes": desc["nodes"], "edges": desc["edges"], "roles": roles},
        "classic": {"antivirus": {"security_value": 0.3}, "firewall": {"security_value": 0.2}},
        "cells": {
            "catalog": catalog,
            "initial": {"prober": 100, "fusion": 40, "repair": 10},
            "placement": "spread",
            "lifetime": [1000, 1000],
        },
        "lymph_nodes": lymph,
        "adversary": {"offline_boots": [{"node": target, "sig": "V1", "at": 40, "blackout": 10}]},
    }


def population_scenario(seed: int = 1, duration: int = 2150) -> dict:
    """Cell factory alone: rate 2 per tick, lifetimes uniform on [50, 150]."""
    desc = random_topology(20, 4, seed=17)
    return {
        "name": "population",
        "seed": seed,
        "duration": duration,
        "mode": "sana",
        "topology": {"nodes": desc["nodes"], "edges": desc["edges"], "roles": {"n00": "cnts_host"}},
        "placement": {},
        "cells": {
            "catalog": {"matcher": {"type": "matcher", "sig": "W0", "security_value": 0.2}},
            "lifetime": [50, 150],
        },
        "cnts": [{"host": "n00", "rate": 2.0, "mix": {"matcher": 1.0}}],
    }


CANONICAL = {
    "A": worm_scenario,
    "B": convergence_scenario,
    "C": offline_scenario,
    "population": population_scenario,
}
