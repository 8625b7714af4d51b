"""Benign background traffic, propagating worms, signature mutation and offline-boot attacks."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .simkernel import Packet

PORTS = {
    "http": 80,
    "https": 443,
    "smtp": 25,
    "dns": 53,
    "ssh": 22,
    "smb": 445,
    "telnet": 23,
    "ftp": 21,
}


@dataclass(frozen=True)
class IntrusionSignature:
    sig_id: str
    generation: int = 0
    family_id: str = ""
    parent_id: str | None = None

    def __post_init__(self):
        if not self.family_id:
            object.__setattr__(self, "family_id", self.sig_id)


class SignatureRegistry:
    """Mints signatures and guarantees sig_id uniqueness across mutations."""

    def __init__(self):
        self._by_id: dict[str, IntrusionSignature] = {}
        self._children: dict[str, int] = {}

    def original(self, sig_id: str) -> IntrusionSignature:
        sig = self._by_id.get(sig_id)
        if sig is None:
            if "~" in sig_id:
                raise ValueError(f"{sig_id!r}: '~' is reserved for mutants")
            sig = IntrusionSignature(sig_id)
            self._by_id[sig_id] = sig
        return sig

    def child(self, parent: IntrusionSignature) -> IntrusionSignature:
        family = parent.family_id
        k = self._children.get(family, 0) + 1
        self._children[family] = k
        sig = IntrusionSignature(f"{family}~{k}", parent.generation + 1, family, parent.sig_id)
        assert sig.sig_id not in self._by_id
        self._by_id[sig.sig_id] = sig
        return sig

    def get(self, sig_id: str) -> IntrusionSignature:
        return self._by_id[sig_id]

    def lineage(self, sig: IntrusionSignature) -> list[IntrusionSignature]:
        """Ancestors of ``sig``, nearest first."""
        chain = []
        while sig.parent_id is not None:
            sig = self._by_id[sig.parent_id]
            chain.append(sig)
        return chain

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())


def mutate(
    sig: IntrusionSignature, rng: random.Random, rate: float, registry: SignatureRegistry
) -> IntrusionSignature:
    """Return a fresh child of ``sig`` with probability ``rate``.

    Always consumes exactly one draw from ``rng``.
    """
    if rng.random() < rate:
        return registry.child(sig)
    return sig


@dataclass(frozen=True)
class WormSpec:
    signature: IntrusionSignature
    entry_node: str
    fanout: int = 2
    vulnerability_set: frozenset[str] = frozenset()
    mutation_rate: float = 0.0
    start_tick: int = 1
    protocol: str = "smb"
    port: int = 445

    def __post_init__(self):
        if self.fanout < 1:
            raise ValueError("fanout must be >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")


@dataclass
class NodeInfection:
    infected: bool = False
    quarantined: bool = False
    infected_at: int | None = None
    infecting_sig: IntrusionSignature | None = None

    @property
    def status(self) -> str:
        if self.quarantined:
            return "quarantined"
        return "infected" if self.infected else "clean"


@dataclass
class InfectionState:
    """Ground-truth infection status of every node plus its change log."""

    nodes: dict[str, NodeInfection]
    timeline: list[tuple[int, str, str, str]] = field(default_factory=list)
    causes: dict[str, list[tuple[int, str]]] = field(default_factory=dict)

    @classmethod
    def for_nodes(cls, nodes: Iterable[str]) -> "InfectionState":
        return cls({n: NodeInfection() for n in nodes})

    def __getitem__(self, node: str) -> NodeInfection:
        return self.nodes[node]

    def _log(self, tick: int, node: str, change: str, sig: str = "") -> None:
        self.timeline.append((tick, node, change, sig))

    def infect(self, node: str, sig: IntrusionSignature, tick: int, cause: str) -> bool:
        rec = self.nodes[node]
        if rec.infected:
            return False
        rec.infected, rec.infected_at, rec.infecting_sig = True, tick, sig
        self.causes.setdefault(node, []).append((tick, cause))
        self._log(tick, node, "infected", sig.sig_id)
        return True

    def clean(self, node: str, tick: int) -> bool:
        rec = self.nodes[node]
        if not rec.infected:
            return False
        rec.infected, rec.infected_at, rec.infecting_sig = False, None, None
        self._log(tick, node, "clean")
        return True

    def quarantine(self, node: str, tick: int) -> bool:
        rec = self.nodes[node]
        if rec.quarantined:
            return False
        rec.quarantined = True
        self._log(tick, node, "quarantined")
        return True

    def release(self, node: str, tick: int) -> bool:
        rec = self.nodes[node]
        if not rec.quarantined:
            return False
        rec.quarantined = False
        self._log(tick, node, "released")
        return True

    def infected_nodes(self) -> list[str]:
        return [n for n, rec in self.nodes.items() if rec.infected]

    def infected_count(self) -> int:
        return sum(rec.infected for rec in self.nodes.values())

    def export_timeline(self) -> str:
        lines = ["tick,node,status,sig"]
        lines.extend(f"{t},{n},{s},{g}" for t, n, s, g in self.timeline)
        return "\n".join(lines) + "\n"


def _protocol_port(name: str) -> tuple[str, int]:
    if ":" in name:
        proto, port = name.split(":", 1)
        return proto, int(port)
    return name, PORTS.get(name, 0)


class BackgroundTraffic:
    """Benign packets between uniformly drawn endpoint pairs.

    Fractional rates accumulate across ticks. Per packet the draws are:
    source, destination, protocol.
    """

    def __init__(self, rate: float, mix: Mapping[str, float], endpoints: Iterable[str]):
        if rate < 0:
            raise ValueError("rate must be >= 0")
        total = sum(mix.values())
        if not mix or total <= 0:
            raise ValueError("protocol mix must have positive weight")
        self.rate = rate
        self.endpoints = sorted(endpoints)
        if rate > 0 and len(self.endpoints) < 2:
            raise ValueError("background traffic needs at least two endpoints")
        self.protocols = sorted(mix)
        self.weights = [mix[p] / total for p in self.protocols]
        self._acc = 0.0

    def emit(self, rng: random.Random) -> list[Packet]:
        self._acc += self.rate
        count = int(self._acc + 1e-9)
        self._acc -= count
        packets = []
        for _ in range(count):
            src, dst = rng.sample(self.endpoints, 2)
            proto = rng.choices(self.protocols, self.weights)[0]
            name, port = _protocol_port(proto)
            packets.append(Packet(src, dst, name, port, (), origin="background"))
        return packets


def emit_background(
    rate: float, mix: Mapping[str, float], endpoints: Iterable[str], ticks: int, rng: random.Random
) -> list[list[Packet]]:
    """Per-tick packet batches over ``ticks`` ticks."""
    traffic = BackgroundTraffic(rate, mix, endpoints)
    return [traffic.emit(rng) for _ in range(ticks)]


def worm_step(
    worm: WormSpec,
    state: InfectionState,
    rng: random.Random,
    registry: SignatureRegistry,
    *,
    seed_pending: bool = False,
) -> list[Packet]:
    """Infection packets for one tick of ``worm``.

    While the seed is pending a single packet is aimed at the entry node.
    Otherwise every infected, non-quarantined carrier of the worm family
    sends ``fanout`` packets to targets drawn uniformly from the
    vulnerability set (draw order per packet: target, mutation).
    """
    if seed_pending:
        entry = worm.entry_node
        return [
            Packet(entry, entry, worm.protocol, worm.port, (worm.signature,), origin=f"seed:{worm.signature.family_id}")
        ]
    family = worm.signature.family_id
    targets = sorted(worm.vulnerability_set)
    packets = []
    for node, rec in state.nodes.items():
        if not rec.infected or rec.quarantined or rec.infecting_sig is None:
            continue
        if rec.infecting_sig.family_id != family:
            continue
        choices = [t for t in targets if t != node]
        if not choices:
            continue
        for _ in range(worm.fanout):
            dst = rng.choice(choices)
            sig = mutate(rec.infecting_sig, rng, worm.mutation_rate, registry)
            packets.append(Packet(node, dst, worm.protocol, worm.port, (sig,), origin=f"worm:{family}"))
    return packets


@dataclass(frozen=True)
class OfflineBoot:
    node: str
    signature: IntrusionSignature
    at: int
    blackout: int = 10

    def in_blackout(self, tick: int) -> bool:
        return self.at <= tick < self.at + self.blackout


def offline_infect(state: InfectionState, boot: OfflineBoot) -> range:
    """Infect ``boot.node`` without any packet; returns the blackout ticks."""
    if boot.node not in state.nodes:
        raise KeyError(boot.node)
    state.infect(boot.node, boot.signature, boot.at, cause="offline")
    return range(boot.at, boot.at + boot.blackout)
