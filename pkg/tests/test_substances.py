from __future__ import annotations

import itertools
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import restricted_bfs
from sanasim.metrics import rows
from sanasim.protocol import ProtocolConfig
from sanasim.receptors import ReceptorRegistry, UnmintedLock
from sanasim.runner import run
from sanasim.scenario import worm_scenario
from sanasim.secenv import LOCKED, ComponentHandle, ComponentKind, LocalServices, SecurityEnvironment
from sanasim.simkernel import Kernel, build_topology, random_topology
from sanasim.substances import (
    CNTS,
    ArtificialSubstance,
    LymphNode,
    Message,
    MessageType,
    SubstanceNetwork,
    cnts_generate,
    deliver,
    lymph_respond,
    reweight,
    snapshot,
)


def diffuse(desc, origin, hops, ttl, forward=None):
    topo = build_topology(desc)
    kernel = Kernel(topo)
    reg = ReceptorRegistry()
    hits = Counter()
    net = SubstanceNetwork(kernel, reg, on_process=lambda node, copy: hits.update([node]))
    for node, allowed in (forward or {}).items():
        net.set_forward_set(node, allowed)
    sub = net.make(origin, MessageType.ALERT, {}, [reg.channel("x").lock], hops, ttl)
    net.emit(sub, origin)
    for _ in range(hops + ttl + 3):
        kernel.step()
    return set(net.processed[sub.substance_id]), hits, net


def graph(edges):
    nodes = sorted({n for e in edges for n in e})
    return {"nodes": nodes, "edges": [list(e) for e in edges]}


LINE = graph([("A", "B"), ("B", "C"), ("C", "D")])


def test_zero_hops_is_local_only():
    seen, _, net = diffuse(LINE, "B", 0, 5)
    assert seen == {"B"} and net.transmissions == 0


def test_one_hop_reaches_the_radius_ball():
    seen, _, _ = diffuse(LINE, "B", 1, 5)
    assert seen == {"A", "B", "C"}


def test_zero_ttl_dominates_hops():
    seen, _, _ = diffuse(LINE, "B", 5, 0)
    assert seen == {"B"}


def test_star_leaves_get_exactly_one_copy():
    seen, hits, _ = diffuse(graph([("H", f"L{i}") for i in range(4)]), "H", 2, 5)
    assert seen == {"H", "L0", "L1", "L2", "L3"}
    assert all(hits[f"L{i}"] == 1 for i in range(4))


def test_four_cycle_deduplicated():
    seen, hits, net = diffuse(graph([("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")]), "A", 3, 5)
    assert seen == {"A", "B", "C", "D"}
    assert set(hits.values()) == {1}
    assert net.duplicates > 0


def test_forward_set_restriction():
    desc = graph([("A", "B"), ("B", "C"), ("B", "D"), ("C", "E")])
    seen, _, _ = diffuse(desc, "A", 4, 9, forward={"B": ["A", "D"]})
    assert seen == {"A", "B", "D"}
    adj = {n: list(build_topology(desc).neighbors(n)) for n in desc["nodes"]}
    adj["B"] = ["A", "D"]
    assert seen == restricted_bfs(adj, "A", 4, 9)


def test_forward_set_must_be_neighbours():
    topo = build_topology(LINE)
    net = SubstanceNetwork(Kernel(topo), ReceptorRegistry())
    with pytest.raises(ValueError):
        net.set_forward_set("A", ["C"])


def test_unminted_lock_rejected():
    topo = build_topology(LINE)
    net = SubstanceNetwork(Kernel(topo), ReceptorRegistry())
    foreign = ReceptorRegistry().mint("x").lock
    with pytest.raises(UnmintedLock):
        net.emit(net.make("A", MessageType.ALERT, {}, [foreign], 1, 1), "A")


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), hops=st.integers(0, 5), ttl=st.integers(0, 6))
def test_diffusion_matches_bfs_ball(seed, hops, ttl):
    rng = random.Random(seed)
    n = rng.randint(2, 18)
    desc = random_topology(n, min(rng.randint(0, 4), (n - 1) * (n - 2) // 2), seed)
    origin = rng.choice(desc["nodes"])
    seen, hits, _ = diffuse(desc, origin, hops, ttl)
    adj = {v: list(build_topology(desc).neighbors(v)) for v in desc["nodes"]}
    assert seen == restricted_bfs(adj, origin, hops, ttl)
    assert max(hits.values()) == 1


class Holder(ComponentHandle):
    def __init__(self, keys):
        super().__init__("h", ComponentKind.ARTIFICIAL_CELL, receptors=keys)


def test_deliver_any_match_truth_table():
    reg = ReceptorRegistry()
    r1, r2 = reg.mint("t", "1"), reg.mint("t", "2")
    sub = ArtificialSubstance(1, Message(MessageType.ALERT, {"x": 1}), 0, 0, (r1.lock, r2.lock), "n", 0)
    for keys in itertools.chain.from_iterable(itertools.combinations([r1.key, r2.key], k) for k in range(3)):
        got = deliver(sub, Holder(list(keys)), reg)
        assert (got == sub.message) == bool(keys)
        assert (got == LOCKED) == (not keys)
    assert deliver(sub, Holder([reg.mint("t", "3").key]), reg) == LOCKED


def test_forged_key_never_opens():
    reg = ReceptorRegistry()
    r = reg.mint("t")
    forged = type(r.key)(r.key.token, r.key.descriptor)
    sub = ArtificialSubstance(1, Message(MessageType.ALERT, {}), 0, 0, (r.lock,), "n", 0)
    assert deliver(sub, Holder([forged]), reg) == LOCKED


def msg(message_type, **body):
    return Message(MessageType(message_type), body)


def test_lymph_quarantine_request_notifies_admin():
    lymph = LymphNode("l", "n1")
    assert lymph_respond(lymph, msg("quarantine_request", node="n7"), 3) == [("notify_admin", "n7", "quarantine_request:")]


@settings(max_examples=60, deadline=None)
@given(ticks=st.lists(st.integers(0, 30), min_size=1, max_size=20), flood=st.integers(1, 6))
def test_lymph_flood_matches_windowed_count(ticks, flood):
    lymph = LymphNode("l", "n1", flood=flood, window=10)
    released = []
    history = []
    for t in sorted(ticks):
        out = lymph_respond(lymph, msg("alert", kind="intrusion", family="F"), t)
        history.append(t)
        in_window = sum(1 for h in history if h > t - 10)
        recent_release = released and t - released[-1] < 10
        if in_window >= flood and not recent_release:
            assert out == [("release_cells", "F", lymph.release)]
            released.append(t)
        else:
            assert out == []


def test_lymph_caches_status_report():
    lymph = LymphNode("l", "n1")
    assert lymph_respond(lymph, msg("status_report", node="n4", version=3), 8) == [("cache", "n4")]
    assert lymph.status_cache["n4"][0] == 8


def _cnts(rate=0.0, mix=None, matcher_of=None):
    return CNTS("cnts0@n1", "n1", generation_rate=rate, type_mix=mix or {"m": 1.0}, matcher_of=matcher_of or {})


def test_cnts_rate_zero_never_mints():
    c = _cnts(0.0)
    rng = random.Random(0)
    assert sum(len(cnts_generate(c, rng, t)) for t in range(1, 500)) == 0


def test_cnts_fractional_rate_accumulates():
    c = _cnts(2.5)
    rng = random.Random(0)
    assert [len(cnts_generate(c, rng, t)) for t in range(1, 5)] == [2, 3, 2, 3]


def test_reweight_by_hand():
    mix = {"fusion": 0.5, "m_f1": 0.25, "m_f2": 0.25}
    out = reweight(mix, {"F1": 0.8, "F2": 0.2}, {"F1": "m_f1", "F2": "m_f2"}, step=0.1, threshold=0.5, cap=0.6)
    assert out["m_f1"] == pytest.approx(0.35 / 1.1)
    assert out["fusion"] == pytest.approx(0.5 / 1.1)
    assert sum(out.values()) == pytest.approx(1.0)
    # below threshold: unchanged
    assert reweight(mix, {"F1": 0.4, "F2": 0.6}, {"F1": "m_f1"}, step=0.1, threshold=0.5, cap=0.6) == mix


def test_cnts_reweights_after_alert_majority():
    c = _cnts(1.0, {"fusion": 0.5, "m_f1": 0.25, "m_f2": 0.25}, {"F1": "m_f1", "F2": "m_f2"})
    c.alerts = [(t, "F1") for t in range(1, 9)] + [(9, "F2"), (10, "F2")]
    cnts_generate(c, random.Random(0), 25, ProtocolConfig())
    assert c.type_mix["m_f1"] == pytest.approx(0.35 / 1.1)


def test_fresh_snapshot_is_zero_apart_from_population():
    c = _cnts(2.0)
    for t in range(1, 4):
        cnts_generate(c, random.Random(t), t)
    snap = snapshot(c)
    assert snap["population"] == {"m": 6}
    assert snap["infected_reported"] == [] and snap["quarantined"] == []
    assert snap["alerts_by_family"] == {} and snap["stale_components"] == [] and snap["status_reports"] == {}


def test_cnts_status_report_reaches_snapshot():
    reg = ReceptorRegistry()
    env = SecurityEnvironment("n1", reg, services=LocalServices())
    c = _cnts()
    env.services.tick = 12
    c.on_message(env, ArtificialSubstance(1, msg("status_report", node="n4", version=2), 0, 0, (reg.mint("x").lock,), "n4", 12))
    assert snapshot(c)["status_reports"] == {"n4": 12}


@pytest.fixture(scope="module")
def outbreak():
    return run(worm_scenario(mode="sana"), trace_level="summary")


def test_snapshot_reports_match_ground_truth(outbreak):
    sim = outbreak.simulation
    truth = {r["node"] for r in rows(outbreak.bundle["infections.csv"]) if r["status"] == "infected"}
    flagged = {r["node"] for r in rows(outbreak.bundle["infections.csv"]) if r["status"] == "quarantined"}
    for cnts in sim.cnts.values():
        snap = snapshot(cnts)
        # every infected node was reported; every report concerns a node the fusion cells quarantined
        assert truth <= set(snap["infected_reported"])
        assert set(snap["infected_reported"]) == flagged


def test_two_cnts_snapshots_agree_once_nothing_is_in_flight(outbreak):
    snaps = [snapshot(c) for c in outbreak.simulation.cnts.values()]
    assert len(snaps) == 2
    keys = ("infected_reported", "alerts_by_family", "stale_components")
    assert {k: snaps[0][k] for k in keys} == {k: snaps[1][k] for k in keys}


def test_generation_survives_one_cnts_failure():
    sc = worm_scenario(mode="sana")
    sc["duration"] = 200
    sc["faults"] = [{"tick": 100, "kind": "cnts", "target": f"cnts0@{sc['cnts'][0]['host']}"}]
    sim = run(sc, trace_level="none").simulation
    survivor = sim.cnts[f"cnts1@{sc['cnts'][1]['host']}"]
    dead = sim.cnts[f"cnts0@{sc['cnts'][0]['host']}"]
    assert not dead.active and survivor.active
    assert sum(survivor.minted.values()) >= 0.5 * 200
    assert sum(dead.minted.values()) <= 0.5 * 100 + 5
