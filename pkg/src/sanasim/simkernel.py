"""Discrete-time event engine, network topology and packet transport."""

from __future__ import annotations

import heapq
import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Iterable, Mapping

ROLES = frozenset(
    {"host", "switch", "router", "gateway", "email_server", "lymph_node_host", "cnts_host"}
)
NETWORK_EQUIPMENT = frozenset({"switch", "router", "lymph_node_host"})


class TopologyError(ValueError):
    pass


class DisconnectedGraph(TopologyError):
    pass


class DanglingEdge(TopologyError):
    pass


class DuplicateNodeId(TopologyError):
    pass


class PastDue(ValueError):
    pass


class UnroutablePacket(RuntimeError):
    pass


class EventKind(IntEnum):
    """Event kinds; the integer value is the same-tick priority (lower first)."""

    PACKET_ARRIVAL = 0
    SUBSTANCE_ARRIVAL = 1
    FILE_ACCESS = 2
    COMPONENT_TIMER = 3
    CELL_MIGRATION = 4
    CELL_EXPIRY = 5
    CNTS_GENERATION = 6

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Topology:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    role_map: Mapping[str, str]
    adjacency: Mapping[str, tuple[str, ...]] = field(repr=False, compare=False, default_factory=dict)

    def neighbors(self, node: str) -> tuple[str, ...]:
        return self.adjacency[node]

    def role(self, node: str) -> str:
        return self.role_map[node]

    def nodes_with_role(self, *roles: str) -> list[str]:
        return [n for n in self.nodes if self.role_map[n] in roles]

    def __contains__(self, node: object) -> bool:
        return node in self.adjacency


def _adjacency(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> dict[str, tuple[str, ...]]:
    adj: dict[str, set[str]] = {n: set() for n in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    return {n: tuple(sorted(vs)) for n, vs in adj.items()}


def is_connected(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> bool:
    nodes = list(nodes)
    if not nodes:
        return False
    adj = _adjacency(nodes, edges)
    seen = {nodes[0]}
    todo = [nodes[0]]
    while todo:
        for v in adj[todo.pop()]:
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return len(seen) == len(nodes)


def build_topology(spec: Mapping[str, Any]) -> Topology:
    """Validate a topology description and return a :class:`Topology`.

    ``spec`` holds ``nodes`` (list of ids), ``edges`` (list of pairs) and an
    optional ``roles`` mapping; unlisted nodes default to ``host``. With
    ``internet: true`` at least one gateway is required.
    """
    nodes = [str(n) for n in spec.get("nodes", [])]
    if not nodes:
        raise TopologyError("topology has no nodes")
    seen: set[str] = set()
    for n in nodes:
        if n in seen:
            raise DuplicateNodeId(n)
        seen.add(n)

    edges: set[tuple[str, str]] = set()
    for pair in spec.get("edges", []):
        if len(pair) != 2:
            raise DanglingEdge(f"edge {pair!r} is not a pair")
        a, b = str(pair[0]), str(pair[1])
        for end in (a, b):
            if end not in seen:
                raise DanglingEdge(f"edge {a}-{b} references unknown node {end}")
        if a == b:
            raise TopologyError(f"self-loop at {a}")
        edges.add((a, b) if a < b else (b, a))

    roles = {n: "host" for n in nodes}
    for n, role in dict(spec.get("roles", {})).items():
        if n not in seen:
            raise TopologyError(f"role assigned to unknown node {n}")
        if role not in ROLES:
            raise TopologyError(f"unknown role {role!r} for {n}")
        roles[n] = role
    if spec.get("internet") and "gateway" not in roles.values():
        raise TopologyError("internet boundary enabled but no gateway node")

    if not is_connected(nodes, edges):
        raise DisconnectedGraph(f"{len(nodes)} nodes, {len(edges)} edges")

    ordered = tuple(sorted(nodes))
    sorted_edges = tuple(sorted(edges))
    return Topology(ordered, sorted_edges, dict(roles), _adjacency(ordered, sorted_edges))


def random_topology(n: int, extra_edges: int, seed: int, prefix: str = "n") -> dict[str, Any]:
    """Random recursive tree on ``n`` nodes plus ``extra_edges`` chords.

    Returns a description suitable for :func:`build_topology`.
    """
    rng = random.Random(seed)
    width = len(str(n - 1))
    names = [f"{prefix}{i:0{width}d}" for i in range(n)]
    edges = {(names[rng.randrange(i)], names[i]) for i in range(1, n)}
    possible = n * (n - 1) // 2
    if len(edges) + extra_edges > possible:
        raise TopologyError("too many extra edges for a simple graph")
    while len(edges) < n - 1 + extra_edges:
        a, b = sorted(rng.sample(names, 2))
        edges.add((a, b))
    return {"nodes": names, "edges": [list(e) for e in sorted(edges)]}


@dataclass
class Packet:
    src: str
    dst: str
    protocol: str = "http"
    port: int = 80
    payload_sigs: tuple = ()
    hop_trace: list[str] = field(default_factory=list)
    packet_id: int = -1
    origin: str = "background"
    sent_at: int = -1
    neutralized: bool = False
    outcome: str = "in_flight"
    outcome_node: str | None = None
    outcome_tick: int | None = None
    drop_reason: str | None = None

    @property
    def malicious(self) -> bool:
        return bool(self.payload_sigs)

    def trace_detail(self) -> str:
        sigs = "+".join(s.sig_id for s in self.payload_sigs) or "-"
        return f"pkt{self.packet_id}:{self.src}>{self.dst}:{self.protocol}/{self.port}:{sigs}"


@dataclass
class Event:
    due_tick: int
    kind: EventKind
    node: str | None = None
    payload: Any = None
    seq: int = -1

    def detail(self) -> str:
        describe = getattr(self.payload, "trace_detail", None)
        if describe is not None:
            return describe()
        return "" if self.payload is None else str(self.payload)


Handler = Callable[[Event], None]
# Returns a drop reason, or None to let the packet continue.
PacketHook = Callable[[str, Packet], "str | None"]


class Kernel:
    """Synchronous tick engine with a deterministic event queue.

    Ordering key is ``(due_tick, kind priority, insertion sequence)``. One
    tick is one hop: packets advance one node per tick along the static
    shortest path, ties broken by the smallest next-hop id.
    """

    def __init__(self, topology: Topology, *, record_trace: bool = True):
        self.topology = topology
        self.tick = 0
        self.record_trace = record_trace
        self.trace: list[tuple[int, str, str, str]] = []
        self.packets: list[Packet] = []
        self.packet_hook: PacketHook | None = None
        self.delivery_hook: Callable[[str, Packet], None] | None = None
        self._queue: list[tuple[int, int, int, Event]] = []
        self._seq = itertools.count()
        self._packet_ids = itertools.count()
        self._handlers: dict[EventKind, Handler] = {EventKind.PACKET_ARRIVAL: self._on_packet}
        self._dist: dict[str, dict[str, int]] = {}

    # -- event queue -------------------------------------------------------

    def on(self, kind: EventKind, handler: Handler) -> None:
        if kind is EventKind.PACKET_ARRIVAL:
            raise ValueError("packet arrivals are handled by the kernel; set packet_hook instead")
        self._handlers[kind] = handler

    def schedule(self, event: Event) -> None:
        if event.due_tick < self.tick:
            raise PastDue(f"event due at {event.due_tick}, clock at {self.tick}")
        event.seq = next(self._seq)
        heapq.heappush(self._queue, (event.due_tick, int(event.kind), event.seq, event))

    def pending(self) -> int:
        return len(self._queue)

    def _drain(self) -> list[Event]:
        executed = []
        queue = self._queue
        while queue and queue[0][0] <= self.tick:
            event = heapq.heappop(queue)[3]
            executed.append(event)
            if self.record_trace:
                self.trace.append((self.tick, event.kind.label, event.node or "-", event.detail()))
            handler = self._handlers.get(event.kind)
            if handler is not None:
                handler(event)
        return executed

    def step(self) -> list[Event]:
        """Advance the clock by one tick and execute everything due.

        Events scheduled for the current tick after the previous drain (for
        example during scenario setup) run first, then the clock advances.
        """
        executed = self._drain()
        self.tick += 1
        executed.extend(self._drain())
        return executed

    def flush(self) -> list[Event]:
        """Execute events due at the current tick without advancing."""
        return self._drain()

    # -- routing -----------------------------------------------------------

    def _distances_to(self, dst: str) -> dict[str, int]:
        dist = self._dist.get(dst)
        if dist is None:
            dist = {dst: 0}
            todo = deque([dst])
            adj = self.topology.adjacency
            while todo:
                u = todo.popleft()
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        todo.append(v)
            self._dist[dst] = dist
        return dist

    def distance(self, a: str, b: str) -> int | None:
        return self._distances_to(b).get(a)

    def next_hop(self, node: str, dst: str) -> str:
        dist = self._distances_to(dst)
        if node not in dist:
            raise UnroutablePacket(f"no path {node}->{dst}")
        here = dist[node]
        return min(v for v in self.topology.adjacency[node] if dist.get(v) == here - 1)

    def route(self, src: str, dst: str) -> list[str]:
        path = [src]
        while path[-1] != dst:
            path.append(self.next_hop(path[-1], dst))
        return path

    # -- packets -----------------------------------------------------------

    def send_packet(self, packet: Packet, at: int | None = None) -> Packet:
        at = self.tick if at is None else at
        for end in (packet.src, packet.dst):
            if end not in self.topology:
                raise KeyError(f"unknown node {end}")
        if self.distance(packet.src, packet.dst) is None:
            packet.outcome = "unroutable"
            raise UnroutablePacket(f"no path {packet.src}->{packet.dst}")
        if packet.packet_id < 0:
            packet.packet_id = next(self._packet_ids)
        packet.sent_at = at
        self.packets.append(packet)
        self.schedule(Event(at, EventKind.PACKET_ARRIVAL, packet.src, packet))
        return packet

    def _on_packet(self, event: Event) -> None:
        packet: Packet = event.payload
        node = event.node
        packet.hop_trace.append(node)
        reason = self.packet_hook(node, packet) if self.packet_hook is not None else None
        if reason is not None:
            packet.outcome, packet.drop_reason = "dropped", reason
            packet.outcome_node, packet.outcome_tick = node, self.tick
            return
        if node == packet.dst:
            packet.outcome = "delivered"
            packet.outcome_node, packet.outcome_tick = node, self.tick
            if self.delivery_hook is not None:
                self.delivery_hook(node, packet)
            return
        nxt = self.next_hop(node, packet.dst)
        self.schedule(Event(self.tick + 1, EventKind.PACKET_ARRIVAL, nxt, packet))

    def export_trace(self) -> str:
        lines = ["tick,kind,node,detail"]
        lines.extend(f"{t},{k},{n},{d}" for t, k, n, d in self.trace)
        return "\n".join(lines) + "\n"
