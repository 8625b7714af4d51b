"""Security levels, low-level notification and the attraction field guiding migration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

ROAMING = "roaming"
ANCHORED = "anchored"


def compute_level(values: Iterable[float]) -> float:
    """Complementary product ``1 - prod(1 - v)``; empty input gives 0."""
    miss = 1.0
    for v in values:
        miss *= 1.0 - v
    return 1.0 - miss


@dataclass
class SecurityLevel:
    node: str
    level: float
    threshold: float = 0.5
    below_since: int | None = None

    @property
    def below(self) -> bool:
        return self.level < self.threshold


def assess(node: str, values: Iterable[float], threshold: float, tick: int, previous: SecurityLevel | None = None) -> SecurityLevel:
    level = compute_level(values)
    below_since = None
    if level < threshold:
        below_since = previous.below_since if previous is not None and previous.below_since is not None else tick
    return SecurityLevel(node, level, threshold, below_since)


@dataclass(frozen=True)
class BeaconRequest:
    node: str
    strength: float
    radius: int


def notify_if_low(
    level: SecurityLevel, tick: int, last_beacon: int | None, *, refresh: int, strength: float, radius: int
) -> BeaconRequest | None:
    """Beacon when below threshold and no beacon from this node is still fresh."""
    if not level.below:
        return None
    if last_beacon is not None and tick - last_beacon < refresh:
        return None
    return BeaconRequest(level.node, strength, radius)


def beacon_attraction(strength: float, geometric: float, distance: int) -> float:
    return strength * geometric**distance


@dataclass
class AttractionField:
    """Per-node attraction, one decaying contribution per beacon origin."""

    decay: float = 0.8
    values: dict[str, dict[str, float]] = field(default_factory=dict)
    floor: float = 1e-3

    def apply(self, node: str, origin: str, value: float) -> None:
        # A refresh from the same origin replaces; distinct origins add up.
        self.values.setdefault(node, {})[origin] = value

    def step(self) -> None:
        for node in list(self.values):
            contrib = self.values[node]
            for origin in list(contrib):
                v = contrib[origin] * self.decay
                if v < self.floor:
                    del contrib[origin]
                else:
                    contrib[origin] = v
            if not contrib:
                del self.values[node]

    def attraction(self, node: str) -> float:
        contrib = self.values.get(node)
        return sum(contrib.values()) if contrib else 0.0


def update_attraction(
    field_: AttractionField, beacons: Iterable[tuple[str, str, float, int]], geometric: float
) -> AttractionField:
    """Fold beacon arrivals ``(node, origin, strength, distance)`` into the field."""
    for node, origin, strength, distance in beacons:
        field_.apply(node, origin, beacon_attraction(strength, geometric, distance))
    return field_


def anchor_policy(cell, level: float, level_without: float, threshold: float, hysteresis: int) -> str:
    """Update and return ``cell.mobility_state``.

    A cell anchors where the node is below threshold or would fall below it
    without the cell. An anchored cell that is no longer needed returns to
    roaming once the level has held for ``hysteresis`` consecutive ticks.
    """
    needed = cell.security_value > 0 and (level < threshold or level_without < threshold)
    if cell.mobility_state == ROAMING:
        if needed:
            cell.mobility_state = ANCHORED
            cell.calm_ticks = 0
        return cell.mobility_state
    if needed:
        cell.calm_ticks = 0
        return ANCHORED
    if cell.calm_ticks >= hysteresis:
        cell.mobility_state = ROAMING
        cell.calm_ticks = 0
    else:
        cell.calm_ticks += 1
    return cell.mobility_state
