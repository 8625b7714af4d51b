"""Experiment runner: single runs, mode comparisons and seed sweeps."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import metrics
from .metrics import FULL_TABLES, SUMMARY_TABLES, MetricsReport
from .scenario import Scenario, validate_scenario, with_changes
from .simulation import SERIES_COLUMNS, Simulation

TRACE_LEVELS = ("none", "summary", "full")


def _csv(header: Sequence[str], body: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    return buf.getvalue()


def _packet_rows(sim: Simulation):
    for p in sim.kernel.packets:
        yield (
            p.packet_id,
            p.src,
            p.dst,
            p.origin,
            "+".join(s.sig_id for s in p.payload_sigs),
            max((s.generation for s in p.payload_sigs), default=0),
            p.sent_at,
            p.outcome,
            p.outcome_node or "",
            "" if p.outcome_tick is None else p.outcome_tick,
            p.drop_reason or "",
            int(p.neutralized),
            len(p.hop_trace),
        )


def export_tables(sim: Simulation) -> dict[str, str]:
    """All trace tables of a finished run as CSV text, keyed by file name."""
    t = sim.traces
    tables = {
        "series.csv": _csv(SERIES_COLUMNS, t.series),
        "infections.csv": sim.infection.export_timeline(),
        "alerts.csv": _csv(("tick", "node", "component", "implicated", "kind", "family", "sig", "match"), t.alerts),
        "inspections.csv": _csv(
            ("tick", "node", "packets", "checks", "redundant"),
            ((tick, node, *v) for (tick, node), v in t.inspections.items()),
        ),
        "packets.csv": _csv(
            (
                "packet_id", "src", "dst", "origin", "sigs", "generation", "sent_at",
                "outcome", "outcome_node", "outcome_tick", "drop_reason", "neutralized", "hops",
            ),
            _packet_rows(sim),
        ),
        "population.csv": _csv(("tick", "kind", "count"), t.population),
        "admin.csv": _csv(("tick", "source", "node", "message"), t.admin),
        "repairs.csv": _csv(("tick", "node", "cell", "outcome"), t.repairs),
        "faults.csv": _csv(("tick", "kind", "target", "result"), t.faults),
    }
    if sim.full:
        tables["events.csv"] = sim.kernel.export_trace()
        tables["substances.csv"] = _csv(("tick", "substance_id", "node", "action"), t.substances)
        tables["audit.csv"] = _csv(("tick", "node", "component", "event_kind", "verdict"), t.audit)
        tables["levels.csv"] = _csv(("tick", "node", "level", "attraction"), t.levels)
    return tables


def run_meta(sim: Simulation) -> dict:
    sc = sim.scenario
    return {
        "name": sc.name,
        "mode": sc.mode,
        "seed": sc.seed,
        "duration": sc.duration,
        "nodes": list(sim.topology.nodes),
        "level_threshold": sim.protocol.level_threshold,
    }


@dataclass
class RunResult:
    report: MetricsReport
    bundle: dict[str, str]
    simulation: Simulation

    def write(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(self.bundle.items()):
            (out / name).write_text(text)
        return out


def run(scenario: Scenario | dict, *, trace_level: str = "summary", out: str | Path | None = None) -> RunResult:
    """Run one scenario to completion and derive its report from the exported traces."""
    if trace_level not in TRACE_LEVELS:
        raise ValueError(f"trace level must be one of {TRACE_LEVELS}")
    sc = validate_scenario(scenario)
    sim = Simulation(sc, trace_level="full" if trace_level == "full" else "summary").run()
    tables = export_tables(sim)
    meta = run_meta(sim)
    report = metrics.compute(tables, meta)
    bundle = {"report.json": report.to_json(), "scenario.json": json.dumps(sc.to_dict(), sort_keys=True, indent=2) + "\n"}
    if trace_level != "none":
        bundle["meta.json"] = json.dumps(meta, sort_keys=True, indent=2) + "\n"
        bundle.update(tables)
    result = RunResult(report, bundle, sim)
    if out is not None:
        result.write(out)
    return result


def recompute(bundle_dir: str | Path) -> MetricsReport:
    """Rebuild the report from a bundle written at summary or full trace level."""
    d = Path(bundle_dir)
    meta = json.loads((d / "meta.json").read_text())
    return metrics.compute({name: (d / name).read_text() for name in SUMMARY_TABLES}, meta)


COMPARE_KEYS = (
    "final_infected",
    "peak_infected",
    "ever_infected",
    "alerts",
    "inspections_per_packet",
    "redundant_per_packet",
    "admin_feed_volume",
)


def compare(
    scenario: Scenario | dict,
    modes: Sequence[str],
    *,
    trace_level: str = "none",
    out: str | Path | None = None,
) -> dict:
    """Run the same scenario under each mode; rows hold metrics and deltas against the first mode."""
    if len(modes) < 2:
        raise ValueError("compare needs at least two modes")
    if len(set(modes)) != len(modes):
        raise ValueError("modes must be distinct")
    base = validate_scenario(scenario)
    reports: dict[str, MetricsReport] = {}
    for mode in modes:
        res = run(with_changes(base, mode=mode), trace_level=trace_level, out=None if out is None else Path(out) / mode)
        reports[mode] = res.report
    ref = reports[modes[0]]
    table = []
    for mode in modes:
        rep = reports[mode]
        row: dict[str, Any] = {"mode": mode}
        for key in COMPARE_KEYS:
            row[key] = getattr(rep, key)
            row[f"delta_{key}"] = metrics._r(getattr(rep, key) - getattr(ref, key))
        row["detection_latency"] = rep.detection_latency
        row["more_secure_than_" + modes[0]] = mode != modes[0] and metrics.more_secure(rep, ref)
        table.append(row)
    result = {"scenario": base.name, "seed": base.seed, "reference": modes[0], "rows": table}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "comparison.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    return result


SWEEP_KEYS = (
    "final_infected",
    "peak_infected",
    "ever_infected",
    "alerts",
    "family_match_alerts",
    "inspections_per_packet",
    "redundant_per_packet",
    "admin_feed_volume",
)


def aggregate(values: Sequence[float]) -> dict[str, float]:
    return {
        "mean": metrics._r(statistics.fmean(values)),
        "min": metrics._r(min(values)),
        "max": metrics._r(max(values)),
        "stddev": metrics._r(statistics.pstdev(values)),
    }


def seed_sweep(
    scenario: Scenario | dict,
    seeds: Sequence[int],
    *,
    trace_level: str = "none",
    out: str | Path | None = None,
) -> dict:
    """Per-seed reports plus mean/min/max/stddev of the headline metrics."""
    if not seeds:
        raise ValueError("seed_sweep needs at least one seed")
    base = validate_scenario(scenario)
    per_seed = {}
    for seed in seeds:
        res = run(with_changes(base, seed=int(seed)), trace_level=trace_level, out=None if out is None else Path(out) / f"seed{seed}")
        per_seed[int(seed)] = res.report
    stats = {key: aggregate([getattr(r, key) for r in per_seed.values()]) for key in SWEEP_KEYS}
    result = {
        "scenario": base.name,
        "mode": base.mode,
        "seeds": [int(s) for s in seeds],
        "per_seed": {str(s): {k: getattr(r, k) for k in SWEEP_KEYS} for s, r in per_seed.items()},
        "aggregate": stats,
    }
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "sweep.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    return result
