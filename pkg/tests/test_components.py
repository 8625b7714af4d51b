from __future__ import annotations

import copy
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanasim.adversary import SignatureRegistry
from sanasim.components import (
    Antivirus,
    Firewall,
    IntrusionDetection,
    RuleSet,
    SignatureDB,
    UpdateServer,
    av_scan,
    central_update,
    filter_packet,
)
from sanasim.metrics import rows
from sanasim.receptors import ReceptorRegistry
from sanasim.runner import run
from sanasim.secenv import ComponentKind, FileAccess, LocalServices, SecurityEnvironment, Verdict
from sanasim.simkernel import EventKind, Packet, random_topology

SIGS = SignatureRegistry()
S1 = SIGS.original("S1")
S1_CHILD = SIGS.child(S1)


def test_av_alerts_on_known_signature():
    db = SignatureDB(1, {"S1"})
    assert av_scan([FileAccess("n", "/a", (S1,))], db) == [Verdict.ALERT]


def test_av_blind_to_mutant():
    db = SignatureDB(1, {"S1"})
    assert av_scan([FileAccess("n", "/a", (S1_CHILD,))], db) == [Verdict.PASS]


def test_av_count():
    rng = random.Random(2)
    known = [SIGS.original(f"K{i}") for i in range(5)]
    unknown = [SIGS.original(f"U{i}") for i in range(5)]
    carriers = set(rng.sample(range(100), 30))
    events = [
        FileAccess("n", f"/f{i}", (rng.choice(known),) if i in carriers else (rng.choice(unknown),) if rng.random() < 0.5 else ())
        for i in range(100)
    ]
    db = SignatureDB(1, {s.sig_id for s in known})
    assert sum(v is Verdict.ALERT for v in av_scan(events, db)) == 30


def test_empty_ruleset_passes():
    assert filter_packet(Packet("a", "b"), RuleSet()) is Verdict.PASS


def test_port_rule_drops():
    rules = RuleSet.from_list([{"action": "drop", "port": 25}])
    assert filter_packet(Packet("a", "b", "smtp", 25), rules) is Verdict.DROP
    assert filter_packet(Packet("a", "b", "http", 80), rules) is Verdict.PASS


def test_first_match_wins():
    rules = RuleSet.from_list([{"action": "pass", "protocol": "http"}, {"action": "drop", "sig": "S1"}])
    assert filter_packet(Packet("a", "b", "http", 80, (S1,)), rules) is Verdict.PASS
    assert filter_packet(Packet("a", "b", "smb", 445, (S1,)), rules) is Verdict.DROP


@settings(max_examples=100, deadline=None)
@given(
    rules=st.lists(
        st.fixed_dictionaries(
            {"action": st.sampled_from(["pass", "drop", "alert"])},
            optional={"port": st.sampled_from([25, 80]), "protocol": st.sampled_from(["http", "smtp"]), "sig": st.just("S1")},
        ),
        max_size=6,
    ),
    port=st.sampled_from([25, 80]),
    proto=st.sampled_from(["http", "smtp"]),
    carries=st.booleans(),
)
def test_filter_matches_sequential_oracle(rules, port, proto, carries):
    p = Packet("a", "b", proto, port, (S1,) if carries else ())
    expected = "pass"
    for r in rules:
        if all(
            (k == "action")
            or (k == "port" and v == port)
            or (k == "protocol" and v == proto)
            or (k == "sig" and carries)
            for k, v in r.items()
        ):
            expected = r["action"]
            break
    assert filter_packet(p, RuleSet.from_list(rules)).value == expected


def test_update_lands_on_polling_boundary():
    server = UpdateServer(releases={10: ["S2"]})
    db = SignatureDB()
    known_at = {}
    for t in range(1, 21):
        server.advance(t)
        central_update(db, server, 5, t)
        known_at[t] = "S2" in db.known
    assert not any(known_at[t] for t in range(1, 10))
    assert all(known_at[t] for t in range(10, 21))


def test_failed_updater_freezes_version():
    server = UpdateServer(releases={t: [f"S{t}"] for t in range(5, 50, 5)})
    db = SignatureDB()
    for t in range(1, 50):
        server.advance(t)
        central_update(db, server, 5, t, failed=True)
    assert db.version == 0 and server.version == 9


@settings(max_examples=30, deadline=None)
@given(periods=st.lists(st.integers(1, 9), min_size=1, max_size=5), horizon=st.integers(5, 60))
def test_update_schedule_enumeration(periods, horizon):
    server = UpdateServer(releases={t: [f"S{t}"] for t in range(1, horizon + 1)})
    dbs = [SignatureDB() for _ in periods]
    polled = [[] for _ in periods]
    for t in range(1, horizon + 1):
        server.advance(t)
        for i, (db, period) in enumerate(zip(dbs, periods)):
            before = db.version
            central_update(db, server, period, t)
            if db.version != before:
                polled[i].append(t)
    for period, ticks in zip(periods, polled):
        assert ticks == list(range(period, horizon + 1, period))


def _update_scenario(failed=False):
    desc = random_topology(6, 1, 2)
    return {
        "name": "updates",
        "seed": 1,
        "duration": 30,
        "mode": "baseline",
        "topology": {"nodes": desc["nodes"], "edges": desc["edges"], "roles": {"n0": "gateway"}},
        "placement": {"host": ["antivirus"], "gateway": ["ids"]},
        "classic": {"antivirus": {"update_period": 3, "update_failed": failed}, "ids": {"update_period": 7}},
        "update_server": {"releases": {str(t): [f"S{t}"] for t in range(1, 31)}},
    }


def test_periodic_updates_in_a_run():
    sim = run(_update_scenario(), trace_level="none").simulation
    versions = {c.component_id.split("@")[0]: c.db.version for c in sim.updatables}
    # last polls: 30 for period 3, 28 for period 7
    assert versions == {"antivirus": 30, "ids": 28}


def test_failed_updater_staleness_grows_in_a_run():
    res = run(_update_scenario(failed=True))
    staleness = [float(r["staleness"]) for r in rows(res.bundle["series.csv"])]
    assert all(b >= a for a, b in zip(staleness[::7], staleness[7::7]))
    assert staleness[-1] > staleness[0]
    assert all(c.db.version == 0 for c in res.simulation.updatables if c.component_id.startswith("antivirus"))


def _env():
    reg = ReceptorRegistry()
    services = LocalServices()
    env = SecurityEnvironment("n1", reg, services=services)
    return reg, services, env


def test_exact_match_components_never_alert_on_mutants():
    reg, services, env = _env()
    av = Antivirus("av", identity=reg.mint("antivirus"), db=SignatureDB(1, {"S1"}))
    ids = IntrusionDetection("ids", identity=reg.mint("ids"), db=SignatureDB(1, {"S1"}))
    env.register(av)
    env.register(ids)
    mutants = [SIGS.child(S1) for _ in range(5)]
    for m in mutants:
        assert [v for _, v in env.dispatch(EventKind.PACKET_ARRIVAL, Packet("a", "n1", payload_sigs=(m,)))] == [Verdict.PASS]
        assert [v for _, v in env.dispatch(EventKind.FILE_ACCESS, FileAccess("n1", "/x", (m,)))] == [Verdict.PASS]
    assert services.alerts == []


def test_baseline_alert_changes_no_other_component():
    reg, services, env = _env()
    av = Antivirus("av", identity=reg.mint("antivirus"), db=SignatureDB(1, {"S1"}))
    fw = Firewall("fw", identity=reg.mint("firewall"))
    ids = IntrusionDetection("ids", identity=reg.mint("ids"), db=SignatureDB(1, {"S1"}))
    for c in (fw, ids, av):
        env.register(c)
    before = {c.component_id: copy.deepcopy(c.state()) for c in (fw, ids, av)}
    env.dispatch(EventKind.PACKET_ARRIVAL, Packet("a", "n1", payload_sigs=(S1,)))
    env.dispatch(EventKind.FILE_ACCESS, FileAccess("n1", "/x", (S1,)))
    after = {c.component_id: c.state() for c in (fw, ids, av)}
    assert before == after
    assert len(env.log) == 2 and services.outbox == []


def test_baseline_run_emits_no_substances():
    from sanasim.scenario import worm_scenario

    res = run(worm_scenario(mode="baseline"), trace_level="summary")
    assert all(int(r["substance_tx"]) == 0 for r in rows(res.bundle["series.csv"]))
    assert res.report.admin_feed_volume == 0
    assert res.simulation.net.transmissions == 0


def test_ids_check_keys_cover_rules_and_database():
    reg = ReceptorRegistry()
    ids = IntrusionDetection(
        "ids", identity=reg.mint("ids"), rules=RuleSet.from_list([{"action": "drop", "sig": "W0"}]), db=SignatureDB(1, {"S1"})
    )
    assert ids.check_keys(Packet("a", "b")) == (("hdr",), ("sig", "S1"), ("sig", "W0"))


def test_redundant_checks_recorded_per_packet():
    reg, services, env = _env()
    env.register(Firewall("fw", identity=reg.mint("firewall")))
    env.register(IntrusionDetection("ids", identity=reg.mint("ids"), db=SignatureDB(1, {"S1"})))
    env.dispatch(EventKind.PACKET_ARRIVAL, Packet("a", "n1", packet_id=7))
    # firewall checks hdr; ids repeats hdr and adds S1
    assert services.inspections == [(0, 7, "n1", 3, 1)]


def test_collaborative_dedupe_skips_covered_checks():
    reg = ReceptorRegistry()
    services = LocalServices()
    services.protocol = services.protocol.__class__(dedupe_checks=True)
    env = SecurityEnvironment("n1", reg, services=services, collaborative=True)
    env.register(Firewall("fw", identity=reg.mint("firewall")))
    env.register(Firewall("fw2", identity=reg.mint("firewall")))
    results = env.dispatch(EventKind.PACKET_ARRIVAL, Packet("a", "n1", packet_id=1))
    assert [c.component_id for c, _ in results] == ["fw"]
    assert services.inspections == [(0, 1, "n1", 1, 0)]


@pytest.mark.parametrize("kind", [ComponentKind.ANTIVIRUS, ComponentKind.IDS])
def test_security_value_bounds(kind):
    reg = ReceptorRegistry()
    cls = Antivirus if kind is ComponentKind.ANTIVIRUS else IntrusionDetection
    with pytest.raises(ValueError):
        cls("x", identity=reg.mint(kind.value), security_value=1.5)
