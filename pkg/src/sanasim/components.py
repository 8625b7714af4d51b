"""Classic protection components and the central update workflow.

These make up the baseline stack. In collaborative mode the same detectors
run unchanged; only the destination of their alerts differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .secenv import ComponentHandle, ComponentKind, FileAccess, SecurityEnvironment, Verdict
from .simkernel import EventKind, Packet

HEADER_FIELDS = ("src", "dst", "protocol", "port")


@dataclass
class SignatureDB:
    version: int = 0
    known: set[str] = field(default_factory=set)

    def sync(self, server: "UpdateServer") -> None:
        self.known |= server.known
        self.version = server.version


@dataclass
class UpdateServer:
    """Central signature source; ``releases`` maps tick -> new sig ids."""

    known: set[str] = field(default_factory=set)
    version: int = 0
    releases: dict[int, list[str]] = field(default_factory=dict)

    def advance(self, tick: int) -> bool:
        new = self.releases.get(tick)
        if not new:
            return False
        self.known |= set(new)
        self.version += 1
        return True


def central_update(db: SignatureDB, server: UpdateServer, period: int, tick: int, *, failed: bool = False) -> SignatureDB:
    """Poll ``server`` on every ``period``-th tick unless the updater is broken."""
    if period < 1:
        raise ValueError("period must be >= 1")
    if not failed and tick % period == 0:
        db.sync(server)
    return db


@dataclass(frozen=True)
class Rule:
    action: Verdict
    src: str | None = None
    dst: str | None = None
    protocol: str | None = None
    port: int | None = None
    sig: str | None = None

    @property
    def inspects_payload(self) -> bool:
        return self.sig is not None

    def matches(self, packet: Packet, *, allow_payload: bool) -> bool:
        for name in HEADER_FIELDS:
            want = getattr(self, name)
            if want is not None and getattr(packet, name) != want:
                return False
        if self.sig is not None:
            if not allow_payload:
                return False
            return any(s.sig_id == self.sig for s in packet.payload_sigs)
        return True

    @classmethod
    def from_dict(cls, data: Mapping) -> "Rule":
        data = dict(data)
        action = Verdict(data.pop("action"))
        return cls(action=action, **data)


@dataclass
class RuleSet:
    rules: list[Rule] = field(default_factory=list)

    @classmethod
    def from_list(cls, items: Iterable[Mapping]) -> "RuleSet":
        return cls([Rule.from_dict(r) for r in items])


def filter_packet(packet: Packet, rules: RuleSet, *, allow_payload: bool = True) -> Verdict:
    """First matching rule wins; an empty rule set passes everything.

    With ``allow_payload=False`` signature rules never match.
    """
    for rule in rules.rules:
        if rule.matches(packet, allow_payload=allow_payload):
            return rule.action
    return Verdict.PASS


def av_scan(events: Sequence[FileAccess], db: SignatureDB) -> list[Verdict]:
    return [Verdict.ALERT if any(s.sig_id in db.known for s in ev.payload_sigs) else Verdict.PASS for ev in events]


class Updatable:
    """Mixin for components holding a signature DB fed by the update server."""

    db: SignatureDB
    update_period: int
    update_failed: bool

    def poll_update(self, server: UpdateServer, tick: int) -> None:
        central_update(self.db, server, self.update_period, tick, failed=self.update_failed)


class Antivirus(ComponentHandle, Updatable):
    events = (EventKind.FILE_ACCESS,)

    def __init__(self, component_id, *, db=None, update_period=10, update_failed=False, **kw):
        super().__init__(component_id, ComponentKind.ANTIVIRUS, **kw)
        self.db = db if db is not None else SignatureDB()
        self.update_period = update_period
        self.update_failed = update_failed

    def on_file_access(self, env: SecurityEnvironment, access: FileAccess) -> Verdict:
        verdict = av_scan([access], self.db)[0]
        if verdict is Verdict.ALERT:
            sig = next(s for s in access.payload_sigs if s.sig_id in self.db.known)
            env.report_detection(self, implicated=env.node, sig=sig)
        return verdict

    def state(self) -> dict:
        return {"version": self.db.version, "known": sorted(self.db.known)}


class HeaderFilter(ComponentHandle):
    """Rule-list filter; checks the header plus any signature its rules name."""

    events = (EventKind.PACKET_ARRIVAL,)

    def __init__(self, component_id, kind, *, rules: RuleSet | None = None, **kw):
        super().__init__(component_id, kind, **kw)
        self.rules = rules if rules is not None else RuleSet()

    def check_keys(self, packet: Packet) -> tuple:
        sigs = sorted({r.sig for r in self.rules.rules if r.sig is not None})
        return (("hdr",),) + tuple(("sig", s) for s in sigs)

    def on_packet(self, env: SecurityEnvironment, packet: Packet) -> Verdict:
        return filter_packet(packet, self.rules)

    def state(self) -> dict:
        return {"rules": len(self.rules.rules)}


class Firewall(HeaderFilter):
    def __init__(self, component_id, **kw):
        super().__init__(component_id, ComponentKind.FIREWALL, **kw)


class PacketFilter(HeaderFilter):
    def __init__(self, component_id, **kw):
        super().__init__(component_id, ComponentKind.PACKET_FILTER, **kw)


class IntrusionDetection(ComponentHandle, Updatable):
    """Full-packet inspection: header/payload rules, then the signature DB."""

    events = (EventKind.PACKET_ARRIVAL,)

    def __init__(self, component_id, *, rules=None, db=None, on_match=Verdict.DROP, update_period=10, update_failed=False, **kw):
        super().__init__(component_id, ComponentKind.IDS, **kw)
        self.rules = rules if rules is not None else RuleSet()
        self.db = db if db is not None else SignatureDB()
        self.on_match = on_match
        self.update_period = update_period
        self.update_failed = update_failed

    def check_keys(self, packet: Packet) -> tuple:
        sigs = {r.sig for r in self.rules.rules if r.sig is not None} | self.db.known
        return (("hdr",),) + tuple(("sig", s) for s in sorted(sigs))

    def on_packet(self, env: SecurityEnvironment, packet: Packet) -> Verdict:
        hit = None
        verdict = Verdict.PASS
        for rule in self.rules.rules:
            if rule.matches(packet, allow_payload=True):
                verdict = rule.action
                if rule.sig is not None:
                    hit = next(s for s in packet.payload_sigs if s.sig_id == rule.sig)
                break
        else:
            for s in packet.payload_sigs:
                if s.sig_id in self.db.known:
                    verdict, hit = self.on_match, s
                    break
        if hit is not None and verdict is not Verdict.PASS:
            env.report_detection(self, implicated=packet.src, sig=hit)
        return verdict

    def state(self) -> dict:
        return {"version": self.db.version, "known": sorted(self.db.known), "rules": len(self.rules.rules)}


CLASSIC_KINDS = {
    "antivirus": Antivirus,
    "firewall": Firewall,
    "packet_filter": PacketFilter,
    "ids": IntrusionDetection,
}

# Baseline placement by node role.
DEFAULT_PLACEMENT = {
    "host": ("antivirus", "firewall"),
    "cnts_host": ("antivirus", "firewall"),
    "email_server": ("antivirus", "firewall", "ids"),
    "gateway": ("firewall", "ids"),
    "switch": ("packet_filter",),
    "router": ("packet_filter",),
    "lymph_node_host": ("packet_filter",),
}
