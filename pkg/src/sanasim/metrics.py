"""Run metrics computed purely from exported trace tables.

Every function here reads CSV text (or rows parsed from it) and never looks
at live simulation objects, so a saved bundle reproduces the report exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

SUMMARY_TABLES = (
    "series.csv",
    "infections.csv",
    "alerts.csv",
    "inspections.csv",
    "packets.csv",
    "population.csv",
    "admin.csv",
    "repairs.csv",
    "faults.csv",
)
FULL_TABLES = ("events.csv", "substances.csv", "audit.csv", "levels.csv")


def rows(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def _r(x: float) -> float:
    return round(float(x), 6)


@dataclass
class MetricsReport:
    name: str
    mode: str
    seed: int
    duration: int
    n_nodes: int
    infected_series: list[int] = field(default_factory=list)
    peak_infected: int = 0
    final_infected: int = 0
    peak_fraction: float = 0.0
    final_fraction: float = 0.0
    ever_infected: int = 0
    first_infection: dict[str, int] = field(default_factory=dict)
    detection_latency: dict[str, int | None] = field(default_factory=dict)
    family_match_alerts: int = 0
    alerts: int = 0
    packets_sent: int = 0
    malicious_packets: int = 0
    inspections: int = 0
    redundant_checks: int = 0
    inspections_per_packet: float = 0.0
    redundant_per_packet: float = 0.0
    node_inspections_per_tick: dict[str, float] = field(default_factory=dict)
    admin_feed_volume: int = 0
    population_series: list[int] = field(default_factory=list)
    roaming_series: list[int] = field(default_factory=list)
    population_final: dict[str, int] = field(default_factory=dict)
    silent_flagged: dict[str, int] = field(default_factory=dict)
    quarantined_at: dict[str, int] = field(default_factory=dict)
    repairs: dict[str, int] = field(default_factory=dict)
    scorecard: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def infected_series(infections: list[dict[str, str]], duration: int) -> list[int]:
    """Replay the infection change log into a per-tick infected count (ticks 1..duration)."""
    by_tick: dict[int, list[dict[str, str]]] = {}
    for row in infections:
        by_tick.setdefault(int(row["tick"]), []).append(row)
    infected: set[str] = set()
    series = []
    for tick in range(1, duration + 1):
        for row in by_tick.get(tick, ()):
            if row["status"] == "infected":
                infected.add(row["node"])
            elif row["status"] == "clean":
                infected.discard(row["node"])
        series.append(len(infected))
    return series


def compute(tables: Mapping[str, str], meta: Mapping[str, Any]) -> MetricsReport:
    """Build the report from the summary tables of a bundle and its ``meta``."""
    nodes = list(meta["nodes"])
    n = len(nodes)
    duration = int(meta["duration"])
    rep = MetricsReport(meta["name"], meta["mode"], int(meta["seed"]), duration, n)

    infections = rows(tables["infections.csv"])
    series = infected_series(infections, duration)
    rep.infected_series = series
    rep.peak_infected = max(series, default=0)
    rep.final_infected = series[-1] if series else 0
    rep.peak_fraction = _r(rep.peak_infected / n)
    rep.final_fraction = _r(rep.final_infected / n)
    rep.ever_infected = len({r["node"] for r in infections if r["status"] == "infected"})
    for r in infections:
        if r["status"] == "infected":
            family = r["sig"].split("~", 1)[0]
            rep.first_infection.setdefault(family, int(r["tick"]))
        elif r["status"] == "quarantined":
            rep.quarantined_at.setdefault(r["node"], int(r["tick"]))

    alerts = rows(tables["alerts.csv"])
    rep.alerts = len(alerts)
    first_alert: dict[str, int] = {}
    for a in alerts:
        if a["kind"] == "intrusion" and a["family"]:
            first_alert.setdefault(a["family"], int(a["tick"]))
        if a["match"] == "family":
            rep.family_match_alerts += 1
        if a["kind"] == "silent":
            rep.silent_flagged.setdefault(a["implicated"], int(a["tick"]))
    for family, t0 in sorted(rep.first_infection.items()):
        t1 = first_alert.get(family)
        rep.detection_latency[family] = None if t1 is None else max(0, t1 - t0)

    packets = rows(tables["packets.csv"])
    rep.packets_sent = len(packets)
    rep.malicious_packets = sum(1 for p in packets if p["sigs"])
    per_node: dict[str, int] = {}
    for r in rows(tables["inspections.csv"]):
        rep.inspections += int(r["checks"])
        rep.redundant_checks += int(r["redundant"])
        per_node[r["node"]] = per_node.get(r["node"], 0) + int(r["checks"])
    if rep.packets_sent:
        rep.inspections_per_packet = _r(rep.inspections / rep.packets_sent)
        rep.redundant_per_packet = _r(rep.redundant_checks / rep.packets_sent)
    if duration:
        rep.node_inspections_per_tick = {v: _r(per_node.get(v, 0) / duration) for v in nodes}

    rep.admin_feed_volume = len(rows(tables["admin.csv"]))
    ser = rows(tables["series.csv"])
    rep.population_series = [int(r["population"]) for r in ser]
    rep.roaming_series = [int(r["roaming"]) for r in ser]
    pop = rows(tables["population.csv"])
    if pop:
        last = pop[-1]["tick"]
        rep.population_final = {r["kind"]: int(r["count"]) for r in pop if r["tick"] == last}
    for r in rows(tables["repairs.csv"]):
        rep.repairs[r["outcome"]] = rep.repairs.get(r["outcome"], 0) + 1

    rep.scorecard = scorecard(ser, packets, rep, n)
    return rep


def scorecard(ser: list[dict[str, str]], packets: list[dict[str, str]], rep: MetricsReport, n: int) -> dict:
    """Measured proxies for completeness, efficiency, non-interference, maintainability, adaptivity."""
    ticks = len(ser)
    covered = sum(n - int(r["below_threshold"]) for r in ser)
    sub_tx = sum(int(r["substance_tx"]) for r in ser)
    pkt_tx = sum(int(r["packet_tx"]) for r in ser)
    mutants = [p for p in packets if p["sigs"] and int(p["generation"]) >= 1]
    caught = sum(1 for p in mutants if p["neutralized"] == "1" or p["drop_reason"].startswith("drop:"))
    return {
        "completeness": _r(covered / (n * ticks)) if ticks else 0.0,
        "efficiency_inspections_per_packet": rep.inspections_per_packet,
        "non_interference_protection_share": _r(sub_tx / (sub_tx + pkt_tx)) if sub_tx + pkt_tx else 0.0,
        "maintainability_mean_staleness": _r(sum(float(r["staleness"]) for r in ser) / ticks) if ticks else 0.0,
        "maintainability_unread_log_volume": int(ser[-1]["log_entries"]) if ser else 0,
        "adaptivity_mutant_detection_rate": _r(caught / len(mutants)) if mutants else None,
    }


def more_secure(candidate: MetricsReport, reference: MetricsReport) -> bool:
    """Strictly lower final and peak infections plus a finite latency for every family."""
    finite = all(v is not None for v in candidate.detection_latency.values())
    return (
        candidate.final_infected < reference.final_infected
        and candidate.peak_infected < reference.peak_infected
        and finite
    )
