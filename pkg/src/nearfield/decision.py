"""Rule-based action selection for near-field detections.

Perception events arrive at three levels of detail: presence only,
presence with a measured height, or a classified object with a
confidence score.  Each level maps to a robot action through a small
configurable table; several zones are folded into one command by
keeping the most severe action.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "Action",
    "ActionTable",
    "Command",
    "DEFAULT_TABLE",
    "DetectionEvent",
    "ObjectCategory",
    "SizeClass",
    "ZONE_LABELS",
    "ZoneLayout",
    "aggregate",
    "classify_size",
    "decide",
    "decision_record",
    "load_action_table",
    "perception_to_events",
    "resolve_stop_or_reroute",
    "severity",
    "write_decision_log",
]

logger = logging.getLogger(__name__)

SIZE_THRESHOLD_MM = 50.0


class ObjectCategory(Enum):
    HUMAN = "human"
    TOOLS = "tools"
    MATERIALS = "materials"
    PARTS = "parts"
    VEHICLES = "vehicles"
    ENVIRONMENT = "environment"
    SAFETY_PPE = "safety_ppe"
    UNKNOWN = "unknown"


class SizeClass(Enum):
    SMALL = "small"
    LARGE = "large"


class Action(Enum):
    CONTINUE = "continue"
    STOP_OR_REROUTE = "stop_or_reroute"
    STOP = "stop"


class Command(Enum):
    """Concrete drive command after reroute preference is applied."""

    CONTINUE = "continue"
    STOP = "stop"
    REROUTE = "reroute"


_SEVERITY = {Action.CONTINUE: 0, Action.STOP_OR_REROUTE: 1, Action.STOP: 2}

ZONE_LABELS = ("A", "B", "C", "D", "E", "F", "G", "H")

_ZONE_SIDES = {
    "A": "left", "B": "left",
    "C": "bottom", "D": "bottom",
    "E": "right", "F": "right",
    "G": "top", "H": "top",
}

# Camera-light modules sit at the corners, each watching the two zones
# that meet there.
_MODULE_ZONES = {
    "bottom_left": ("B", "C"),
    "bottom_right": ("D", "E"),
    "top_right": ("F", "G"),
    "top_left": ("H", "A"),
}


def severity(action: Action) -> int:
    """Rank of an action; higher overrides lower when zones are merged."""
    return _SEVERITY[action]


@dataclass(frozen=True)
class ZoneLayout:
    """Monitored perimeter strip around a rectangular robot footprint.

    The strip of depth ``d_nf_mm`` is split into eight zones, two per
    side, labeled A through H counterclockwise starting at the top of
    the left side.
    """

    d_amr_mm: float = 800.0
    d_nf_mm: float = 360.0

    def __post_init__(self):
        if self.d_amr_mm <= 0 or self.d_nf_mm <= 0:
            raise ValueError(
                f"zone dimensions must be positive, got d_amr={self.d_amr_mm} "
                f"d_nf={self.d_nf_mm}"
            )

    @property
    def labels(self) -> tuple[str, ...]:
        return ZONE_LABELS

    def side_of(self, label: str) -> str:
        if label not in _ZONE_SIDES:
            raise ValueError(f"unknown zone label {label!r}")
        return _ZONE_SIDES[label]

    def zones_on(self, side: str) -> tuple[str, ...]:
        out = tuple(z for z in ZONE_LABELS if _ZONE_SIDES[z] == side)
        if not out:
            raise ValueError(f"unknown side {side!r}")
        return out

    def module_zones(self) -> dict[str, tuple[str, str]]:
        return dict(_MODULE_ZONES)


@dataclass(frozen=True)
class DetectionEvent:
    """One observation from a monitoring zone.

    tier 1 carries presence only, tier 2 adds a height measurement, and
    tier 3 adds a category with a confidence.  ``height_mm=None`` on a
    tier 2 or 3 event means the measurement was invalid (for example a
    stripe displaced past the calibrated range) and is treated as an
    unknown tall object.
    """

    tier: int
    zone: str
    ts_ms: int = 0
    height_mm: float | None = None
    category: ObjectCategory | None = None
    confidence: float | None = None

    def __post_init__(self):
        if self.tier not in (1, 2, 3):
            raise ValueError(f"tier must be 1, 2 or 3, got {self.tier}")
        if self.zone not in ZONE_LABELS:
            raise ValueError(f"unknown zone label {self.zone!r}")
        if self.height_mm is not None and math.isfinite(self.height_mm):
            if self.height_mm < 0:
                raise ValueError(f"height must be >= 0, got {self.height_mm}")
        if self.tier == 3:
            if self.category is None:
                raise ValueError("tier 3 event requires a category")
            if self.confidence is None or not 0.0 <= self.confidence <= 1.0:
                raise ValueError(
                    f"tier 3 event requires confidence in [0, 1], got {self.confidence}"
                )
        elif self.category is not None:
            raise ValueError(f"tier {self.tier} event cannot carry a category")

    def size_class(self) -> SizeClass | None:
        """Size of the detected object, or None when height is unknown."""
        if self.height_mm is None or not math.isfinite(self.height_mm):
            return None
        return classify_size(self.height_mm)


def classify_size(height_mm: float) -> SizeClass:
    if not math.isfinite(height_mm) or height_mm < 0:
        raise ValueError(f"height must be finite and >= 0, got {height_mm}")
    return SizeClass.LARGE if height_mm >= SIZE_THRESHOLD_MM else SizeClass.SMALL


_DEFAULT_ACTIONS: dict[ObjectCategory, dict[SizeClass, Action]] = {
    ObjectCategory.HUMAN: {
        SizeClass.SMALL: Action.STOP,
        SizeClass.LARGE: Action.STOP,
    },
    ObjectCategory.TOOLS: {
        SizeClass.SMALL: Action.CONTINUE,
        SizeClass.LARGE: Action.STOP_OR_REROUTE,
    },
    ObjectCategory.MATERIALS: {
        SizeClass.SMALL: Action.CONTINUE,
        SizeClass.LARGE: Action.STOP,
    },
    ObjectCategory.PARTS: {
        SizeClass.SMALL: Action.STOP,
        SizeClass.LARGE: Action.STOP,
    },
    ObjectCategory.VEHICLES: {
        SizeClass.SMALL: Action.STOP_OR_REROUTE,
        SizeClass.LARGE: Action.STOP_OR_REROUTE,
    },
    ObjectCategory.ENVIRONMENT: {
        SizeClass.SMALL: Action.STOP,
        SizeClass.LARGE: Action.STOP,
    },
    ObjectCategory.SAFETY_PPE: {
        SizeClass.SMALL: Action.STOP_OR_REROUTE,
        SizeClass.LARGE: Action.STOP_OR_REROUTE,
    },
    ObjectCategory.UNKNOWN: {
        SizeClass.SMALL: Action.STOP,
        SizeClass.LARGE: Action.STOP,
    },
}


@dataclass(frozen=True)
class ActionTable:
    """Category and size to action mapping plus the degrade threshold."""

    actions: Mapping[ObjectCategory, Mapping[SizeClass, Action]] = field(
        default_factory=lambda: _DEFAULT_ACTIONS
    )
    confidence_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(
                f"confidence threshold must be in [0, 1], got {self.confidence_threshold}"
            )
        for cat in ObjectCategory:
            if cat not in self.actions:
                raise ValueError(f"action table is missing category {cat.value!r}")
            for size in SizeClass:
                if size not in self.actions[cat]:
                    raise ValueError(
                        f"action table is missing {cat.value!r} {size.value!r}"
                    )

    def lookup(self, category: ObjectCategory, size: SizeClass) -> Action:
        return self.actions[category][size]

    def to_dict(self) -> dict:
        return {
            "confidence_threshold": self.confidence_threshold,
            "actions": {
                cat.value: {
                    size.value: self.actions[cat][size].value for size in SizeClass
                }
                for cat in ObjectCategory
            },
        }


DEFAULT_TABLE = ActionTable()


def load_action_table(path: str | Path) -> ActionTable:
    """Read a table config from JSON, checking it covers every case."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "actions" not in raw:
        raise ValueError(f"action table {path}: expected an object with 'actions'")
    actions: dict[ObjectCategory, dict[SizeClass, Action]] = {}
    for cat_name, row in raw["actions"].items():
        try:
            cat = ObjectCategory(cat_name)
        except ValueError:
            raise ValueError(f"action table {path}: unknown category {cat_name!r}")
        actions[cat] = {}
        for size_name, act_name in row.items():
            try:
                size = SizeClass(size_name)
                act = Action(act_name)
            except ValueError:
                raise ValueError(
                    f"action table {path}: bad entry {cat_name}.{size_name} = {act_name!r}"
                )
            actions[cat][size] = act
    threshold = float(raw.get("confidence_threshold", 0.5))
    table = ActionTable(actions=actions, confidence_threshold=threshold)
    logger.info("loaded action table from %s", path)
    return table


def _decide_by_size(size: SizeClass | None) -> Action:
    # Unknown height means the stripe evidence could not bound the
    # object, so treat it as tall.
    if size is None or size is SizeClass.LARGE:
        return Action.STOP
    return Action.CONTINUE


def decide(event: DetectionEvent, table: ActionTable = DEFAULT_TABLE) -> Action:
    """Map one detection to an action.

    Presence-only events always stop: nothing is known about the object.
    Height-only events run over small objects and stop for anything
    50 mm or taller.  Classified events use the category table, falling
    back to the height rule when confidence is below the threshold.
    Unknown size within a confident classification counts as large.
    """
    if event.tier == 1:
        return Action.STOP
    size = event.size_class()
    if event.tier == 2:
        return _decide_by_size(size)
    if event.confidence < table.confidence_threshold:
        return _decide_by_size(size)
    return table.lookup(event.category, size if size is not None else SizeClass.LARGE)


def resolve_stop_or_reroute(action: Action, policy: str = "conservative") -> Command:
    """Turn an action into a drive command using the reroute preference."""
    if policy not in ("conservative", "reroute-first"):
        raise ValueError(f"unknown resolution policy {policy!r}")
    if action is Action.STOP_OR_REROUTE:
        return Command.STOP if policy == "conservative" else Command.REROUTE
    return Command.STOP if action is Action.STOP else Command.CONTINUE


def aggregate(actions: Iterable[Action]) -> Action:
    """Most severe action across zones; no events means keep driving."""
    result = Action.CONTINUE
    for action in actions:
        if _SEVERITY[action] > _SEVERITY[result]:
            result = action
    return result


def perception_to_events(
    record: Mapping, zone: str, min_height_mm: float = 0.0
) -> list[DetectionEvent]:
    """Convert one serialized stripe-pipeline event into detections.

    A triggered record with height readings yields one tier 2 event per
    reading (invalid readings become unknown-height events); a triggered
    record without any reading yields a single tier 1 presence event.
    Untriggered records yield nothing.
    """
    if not record.get("triggered", False):
        return []
    ts = int(record.get("ts_ms", 0))
    events = []
    for reading in record.get("heights", ()):
        if reading.get("valid", False):
            h = float(reading["h_obj_mm"])
            if h < min_height_mm:
                continue
            events.append(DetectionEvent(tier=2, zone=zone, ts_ms=ts, height_mm=h))
        else:
            events.append(DetectionEvent(tier=2, zone=zone, ts_ms=ts, height_mm=None))
    if not events:
        events.append(DetectionEvent(tier=1, zone=zone, ts_ms=ts))
    return events


def decision_record(
    event: DetectionEvent,
    table: ActionTable = DEFAULT_TABLE,
    policy: str = "conservative",
) -> dict:
    """One decision-log line: the event, its action, and the command."""
    action = decide(event, table)
    size = event.size_class()
    return {
        "ts_ms": event.ts_ms,
        "zone": event.zone,
        "tier": event.tier,
        "category": event.category.value if event.category is not None else None,
        "size": size.value if size is not None else None,
        "action": action.value,
        "resolved": resolve_stop_or_reroute(action, policy).value,
    }


def write_decision_log(
    path: str | Path,
    events: Sequence[DetectionEvent],
    table: ActionTable = DEFAULT_TABLE,
    policy: str = "conservative",
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(decision_record(event, table, policy)) + "\n")
