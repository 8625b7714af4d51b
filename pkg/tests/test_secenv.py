from __future__ import annotations

import ast
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanasim.adversary import SignatureRegistry
from sanasim.cells import CellFactory, CellType, MatcherProgram, spec_from_dict
from sanasim.components import Firewall, IntrusionDetection, PacketFilter, RuleSet
from sanasim.receptors import ReceptorRegistry
from sanasim.secenv import (
    LOCKED,
    ComponentHandle,
    ComponentKind,
    DuplicateRegistration,
    FileAccess,
    LocalServices,
    NoViolationOnRecord,
    SecurityEnvironment,
    Verdict,
)
from sanasim.selfmgmt import compute_level
from sanasim.simkernel import EventKind, Packet
from sanasim.substances import ArtificialSubstance, Message, MessageType

SRC = Path(__file__).resolve().parents[1] / "src" / "sanasim"


@pytest.fixture
def reg():
    return ReceptorRegistry()


@pytest.fixture
def env(reg):
    return SecurityEnvironment("n1", reg, services=LocalServices())


def matcher(reg, sig="S1", cid_seed=0):
    catalog = {"m": spec_from_dict("m", {"type": "matcher", "sig": sig, "security_value": 0.2})}
    return CellFactory(catalog, reg, random.Random(cid_seed)).make("m", "n1", 0)


def ident(reg, kind):
    return reg.mint(kind.value, "test")


def pkt(*sigs, **kw):
    sigreg = SignatureRegistry()
    return Packet("n0", "n1", payload_sigs=tuple(sigreg.original(s) for s in sigs), **kw)


def test_registered_firewall_sees_next_packet(env, reg):
    fw = Firewall("fw", identity=ident(reg, ComponentKind.FIREWALL))
    env.register(fw)
    results = env.dispatch(EventKind.PACKET_ARRIVAL, pkt())
    assert [(c.component_id, v) for c, v in results] == [("fw", Verdict.PASS)]


def test_duplicate_registration(env, reg):
    fw = Firewall("fw", identity=ident(reg, ComponentKind.FIREWALL))
    env.register(fw)
    with pytest.raises(DuplicateRegistration):
        env.register(fw)


def test_dispatch_follows_registration_order(env, reg):
    audit = []
    env.audit = audit
    f = Firewall("F", identity=ident(reg, ComponentKind.FIREWALL))
    i = IntrusionDetection("I", identity=ident(reg, ComponentKind.IDS))
    c = matcher(reg)
    for comp in (f, i, c):
        env.register(comp)
    env.dispatch(EventKind.PACKET_ARRIVAL, pkt())
    assert [row[2] for row in audit] == ["F", "I", c.component_id]


def test_matcher_pass_and_alert(env, reg):
    c = matcher(reg)
    env.register(c)
    assert [v for _, v in env.dispatch(EventKind.PACKET_ARRIVAL, pkt())] == [Verdict.PASS]
    assert [v for _, v in env.dispatch(EventKind.PACKET_ARRIVAL, pkt("S1"))] == [Verdict.ALERT]
    # non-collaborative: the alert lands in the local log
    assert env.log[-1][1:] == (c.component_id, "intrusion", "n0", "S1")
    assert env.services.alerts[-1][4] == "intrusion"


def test_first_drop_stops_dispatch(env, reg):
    pf = PacketFilter(
        "pf", identity=ident(reg, ComponentKind.PACKET_FILTER), rules=RuleSet.from_list([{"action": "drop", "sig": "S1"}])
    )
    ids = IntrusionDetection("ids", identity=ident(reg, ComponentKind.IDS))
    env.register(pf)
    env.register(ids)
    results = env.dispatch(EventKind.PACKET_ARRIVAL, pkt("S1"))
    assert [(c.component_id, v) for c, v in results] == [("pf", Verdict.DROP)]
    results = env.dispatch(EventKind.PACKET_ARRIVAL, pkt())
    assert [c.component_id for c, _ in results] == ["pf", "ids"]


def test_well_formed_cell_passes_check(env, reg):
    c = matcher(reg)
    env.register(c)
    env.dispatch(EventKind.PACKET_ARRIVAL, pkt())
    assert env.check_component(c) is None


def test_unauthorized_resource_then_eviction(env, reg):
    env.register(Firewall("fw", identity=ident(reg, ComponentKind.FIREWALL)))
    c = matcher(reg)
    env.register(c)
    env.resource_policy["network"] = reg.mint("admin", "net").lock
    assert env.request_resource(c, "network") is False
    v = env.check_component(c)
    assert v is not None and v.kind == "unauthorized_resource"
    env.evict(c, v)
    assert [x.component_id for x, _ in env.dispatch(EventKind.PACKET_ARRIVAL, pkt("S1"))] == ["fw"]
    assert env.online
    with pytest.raises(DuplicateRegistration):
        env.register(c)


def test_budget_exceeded_at_twice_the_budget(env, reg):
    c = matcher(reg)
    c.action_budget = 4
    env.register(c)
    for _ in range(2 * c.action_budget):
        env.dispatch(EventKind.PACKET_ARRIVAL, pkt())
    v = env.check_component(c)
    assert v is not None and v.kind == "budget_exceeded" and v.detail == "8>4"


@settings(max_examples=40, deadline=None)
@given(budget=st.integers(1, 10), actions=st.integers(0, 25))
def test_budget_counter(budget, actions):
    reg = ReceptorRegistry()
    services = LocalServices()
    env = SecurityEnvironment("n1", reg, services=services)
    c = matcher(reg)
    c.action_budget = budget
    env.register(c)
    for _ in range(actions):
        env.dispatch(EventKind.PACKET_ARRIVAL, pkt())
    v = env.check_component(c)
    assert (v is not None) == (actions > budget)
    services.tick += 1
    assert env.check_component(c) is None


def test_forged_identity_fails_authentication(env, reg):
    other = ReceptorRegistry()
    rogue = Firewall("rogue", identity=other.mint("firewall"))
    env.register(rogue)
    v = env.check_component(rogue)
    assert v is not None and v.kind == "authentication_failed"


def test_evict_without_violation(env, reg):
    fw = Firewall("fw", identity=ident(reg, ComponentKind.FIREWALL))
    env.register(fw)
    with pytest.raises(NoViolationOnRecord):
        env.evict(fw, None)


def test_evicting_a_detector_lowers_the_level_by_the_aggregation_delta(env, reg):
    ids = IntrusionDetection("ids", identity=ident(reg, ComponentKind.IDS), security_value=0.3)
    fw = Firewall("fw", identity=ident(reg, ComponentKind.FIREWALL), security_value=0.2)
    env.register(fw)
    env.register(ids)
    before = compute_level(c.security_value for c in env.resident())
    env.resource_policy["storage"] = reg.mint("admin", "disk").lock
    env.request_resource(ids, "storage")
    env.evict(ids, env.check_component(ids))
    after = compute_level(c.security_value for c in env.resident())
    assert before == pytest.approx(1 - 0.8 * 0.7)
    assert after == pytest.approx(0.2)


def test_whole_environment_evicted_goes_offline(env, reg):
    fw = Firewall("fw", identity=ident(reg, ComponentKind.FIREWALL))
    env.register(fw)
    env.resource_policy["cpu"] = reg.mint("admin", "cpu").lock
    env.request_resource(fw, "cpu")
    env.evict(fw, env.check_component(fw))
    assert env.failed and not env.online
    assert env.services.admin_feed[-1][3] == "environment failed"
    assert env.dispatch(EventKind.PACKET_ARRIVAL, pkt()) == []


class Spy(ComponentHandle):
    def __init__(self, cid, reg, keys):
        super().__init__(cid, ComponentKind.ARTIFICIAL_CELL, identity=reg.mint("artificial_cell", "spy"), receptors=keys)
        self.read = []

    def on_message(self, env, substance):
        self.read.append(substance.substance_id)
        return Verdict.CONSUME


def test_mediation_audit_cross_check():
    reg = ReceptorRegistry()
    audit = []
    env = SecurityEnvironment("n1", reg, services=LocalServices(), audit=audit)
    rng = random.Random(4)
    channels = [reg.channel("t", str(i)) for i in range(6)]
    spies = []
    for i in range(8):
        keys = [ch.key for ch in channels if rng.random() < 0.3]
        spies.append(Spy(f"s{i}", reg, keys))
        env.register(spies[-1])
    for sid in range(200):
        locks = tuple(ch.lock for ch in rng.sample(channels, rng.randint(1, 3)))
        sub = ArtificialSubstance(sid, Message(MessageType.ALERT, {"n": sid}), 0, 0, locks, "n1", 0)
        env.dispatch(EventKind.SUBSTANCE_ARRIVAL, sub)
    for spy in spies:
        opened = [row for row in audit if row[2] == spy.component_id and row[4] != LOCKED]
        assert len(opened) == len(spy.read)


def test_platform_independence_of_component_code():
    """Protection logic imports only the environment interface, never routing or the simulation."""
    forbidden = {"Kernel", "Topology", "build_topology", "Simulation"}
    for name in ("components.py", "cells.py", "secenv.py"):
        tree = ast.parse((SRC / name).read_text())
        for node in ast.walk(tree):
            if isinstance(node, ast.ImportFrom):
                assert node.module not in ("simulation", "runner"), name
                assert not forbidden & {a.name for a in node.names}, name


def test_offline_environment_dispatches_nothing(env, reg):
    env.register(matcher(reg))
    env.online = False
    assert env.dispatch(EventKind.PACKET_ARRIVAL, pkt("S1")) == []
    assert env.dispatch(EventKind.FILE_ACCESS, FileAccess("n1", "/x")) == []


def test_matcher_program_is_fixed():
    reg = ReceptorRegistry()
    c = matcher(reg, "S1~2")
    assert c.program == MatcherProgram("S1~2", "S1")
    with pytest.raises(Exception):
        c.program.sig_id = "S9"
    assert c.cell_type is CellType.MATCHER
