"""Tunable protocol constants shared by the protection plane."""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass(frozen=True)
class ProtocolConfig:
    # substance distribution areas (hops, ticks)
    alert_radius: int = 3
    alert_ttl: int = 6
    warning_radius: int = 2
    warning_ttl: int = 4
    warnings_enabled: bool = True
    quarantine_radius: int = 8
    quarantine_ttl: int = 12
    report_radius: int = 4
    report_ttl: int = 8
    heartbeat_period: int = 5
    death_radius: int = 12
    death_ttl: int = 16
    release_radius: int = 12
    release_ttl: int = 16

    # self-management
    level_threshold: float = 0.5
    beacon_radius: int = 3
    beacon_strength: float = 4.0
    beacon_geometric: float = 0.5
    beacon_refresh: int = 5
    attraction_decay: float = 0.8
    quarantine_beacon_strength: float = 8.0
    hysteresis_ticks: int = 3
    autonomy: float = 0.1

    # danger model
    danger_decay: float = 0.9
    danger_threshold: float = 1.0

    # node behaviour watch and quarantine
    outbound_alarm: int = 2
    observation_period: int = 5

    # lymph node and CNTS adaptation
    alert_flood: int = 5
    alert_flood_window: int = 10
    lymph_release: int = 2
    reweight_step: float = 0.1
    reweight_threshold: float = 0.5
    reweight_cap: float = 0.6
    reweight_window: int = 20

    # redundant-check reduction inside security environments
    dedupe_checks: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown protocol fields: {', '.join(unknown)}")
        return cls(**data)
