"""Tests for the action-decision rules."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nearfield.decision import (
    DEFAULT_TABLE,
    ZONE_LABELS,
    Action,
    ActionTable,
    Command,
    DetectionEvent,
    ObjectCategory,
    SizeClass,
    ZoneLayout,
    aggregate,
    classify_size,
    decide,
    decision_record,
    load_action_table,
    perception_to_events,
    resolve_stop_or_reroute,
    severity,
    write_decision_log,
)

# Expected category rules, restated independently of the module table.
EXPECTED = {
    (ObjectCategory.HUMAN, SizeClass.SMALL): Action.STOP,
    (ObjectCategory.HUMAN, SizeClass.LARGE): Action.STOP,
    (ObjectCategory.TOOLS, SizeClass.SMALL): Action.CONTINUE,
    (ObjectCategory.TOOLS, SizeClass.LARGE): Action.STOP_OR_REROUTE,
    (ObjectCategory.MATERIALS, SizeClass.SMALL): Action.CONTINUE,
    (ObjectCategory.MATERIALS, SizeClass.LARGE): Action.STOP,
    (ObjectCategory.PARTS, SizeClass.SMALL): Action.STOP,
    (ObjectCategory.PARTS, SizeClass.LARGE): Action.STOP,
    (ObjectCategory.VEHICLES, SizeClass.SMALL): Action.STOP_OR_REROUTE,
    (ObjectCategory.VEHICLES, SizeClass.LARGE): Action.STOP_OR_REROUTE,
    (ObjectCategory.ENVIRONMENT, SizeClass.SMALL): Action.STOP,
    (ObjectCategory.ENVIRONMENT, SizeClass.LARGE): Action.STOP,
    (ObjectCategory.SAFETY_PPE, SizeClass.SMALL): Action.STOP_OR_REROUTE,
    (ObjectCategory.SAFETY_PPE, SizeClass.LARGE): Action.STOP_OR_REROUTE,
    (ObjectCategory.UNKNOWN, SizeClass.SMALL): Action.STOP,
    (ObjectCategory.UNKNOWN, SizeClass.LARGE): Action.STOP,
}

HEIGHT_FOR = {SizeClass.SMALL: 20.0, SizeClass.LARGE: 120.0}


def tier3(category, size, confidence=0.9, zone="B"):
    return DetectionEvent(
        tier=3, zone=zone, height_mm=HEIGHT_FOR[size],
        category=category, confidence=confidence,
    )


class TestClassifySize:
    def test_boundary_is_large(self):
        assert classify_size(50.0) is SizeClass.LARGE

    def test_below_boundary_is_small(self):
        assert classify_size(49.9) is SizeClass.SMALL

    def test_zero_is_small(self):
        assert classify_size(0.0) is SizeClass.SMALL

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            classify_size(-1.0)
        with pytest.raises(ValueError):
            classify_size(float("nan"))


class TestEventValidation:
    def test_bad_tier(self):
        with pytest.raises(ValueError):
            DetectionEvent(tier=0, zone="A")

    def test_bad_zone(self):
        with pytest.raises(ValueError):
            DetectionEvent(tier=1, zone="Z")

    def test_tier3_needs_category_and_confidence(self):
        with pytest.raises(ValueError):
            DetectionEvent(tier=3, zone="A", height_mm=10.0)
        with pytest.raises(ValueError):
            DetectionEvent(
                tier=3, zone="A", height_mm=10.0,
                category=ObjectCategory.TOOLS, confidence=1.5,
            )

    def test_lower_tiers_cannot_carry_category(self):
        with pytest.raises(ValueError):
            DetectionEvent(tier=2, zone="A", height_mm=10.0, category=ObjectCategory.TOOLS)

    def test_negative_height(self):
        with pytest.raises(ValueError):
            DetectionEvent(tier=2, zone="A", height_mm=-3.0)

    def test_nan_height_means_unknown(self):
        ev = DetectionEvent(tier=2, zone="A", height_mm=float("nan"))
        assert ev.size_class() is None


class TestDecideTiers:
    def test_tier1_always_stops(self):
        assert decide(DetectionEvent(tier=1, zone="C")) is Action.STOP

    def test_tier2_small_continues(self):
        ev = DetectionEvent(tier=2, zone="C", height_mm=20.0)
        assert decide(ev) is Action.CONTINUE

    def test_tier2_large_stops(self):
        ev = DetectionEvent(tier=2, zone="C", height_mm=120.0)
        assert decide(ev) is Action.STOP

    def test_tier2_boundary_stops(self):
        ev = DetectionEvent(tier=2, zone="C", height_mm=50.0)
        assert decide(ev) is Action.STOP

    def test_tier2_unknown_height_stops(self):
        ev = DetectionEvent(tier=2, zone="C", height_mm=None)
        assert decide(ev) is Action.STOP


class TestDecideTable:
    @pytest.mark.parametrize("category", list(ObjectCategory))
    @pytest.mark.parametrize("size", list(SizeClass))
    def test_exhaustive_category_rules(self, category, size):
        assert decide(tier3(category, size)) is EXPECTED[(category, size)]

    def test_human_dominates_at_any_size(self):
        for size in SizeClass:
            assert decide(tier3(ObjectCategory.HUMAN, size)) is Action.STOP
        ev = DetectionEvent(
            tier=3, zone="A", height_mm=None,
            category=ObjectCategory.HUMAN, confidence=1.0,
        )
        assert decide(ev) is Action.STOP

    def test_monotone_in_size_per_category(self):
        for category in ObjectCategory:
            small = decide(tier3(category, SizeClass.SMALL))
            large = decide(tier3(category, SizeClass.LARGE))
            assert severity(large) >= severity(small), category

    def test_unknown_size_counts_as_large(self):
        ev = DetectionEvent(
            tier=3, zone="A", height_mm=None,
            category=ObjectCategory.TOOLS, confidence=0.9,
        )
        assert decide(ev) is Action.STOP_OR_REROUTE

    def test_low_confidence_degrades_to_height_rule(self):
        for category in ObjectCategory:
            for size in SizeClass:
                ev3 = tier3(category, size, confidence=0.3)
                ev2 = DetectionEvent(tier=2, zone="B", height_mm=HEIGHT_FOR[size])
                assert decide(ev3) is decide(ev2), (category, size)

    def test_threshold_is_strict(self):
        ev = tier3(ObjectCategory.TOOLS, SizeClass.LARGE, confidence=0.5)
        assert decide(ev) is Action.STOP_OR_REROUTE


class TestResolve:
    def test_conservative_default(self):
        assert resolve_stop_or_reroute(Action.STOP_OR_REROUTE) is Command.STOP

    def test_reroute_first(self):
        got = resolve_stop_or_reroute(Action.STOP_OR_REROUTE, "reroute-first")
        assert got is Command.REROUTE

    def test_stop_passes_through(self):
        assert resolve_stop_or_reroute(Action.STOP, "reroute-first") is Command.STOP

    def test_continue_passes_through(self):
        assert resolve_stop_or_reroute(Action.CONTINUE) is Command.CONTINUE

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            resolve_stop_or_reroute(Action.STOP, "coin-flip")


class TestAggregate:
    def test_empty_continues(self):
        assert aggregate([]) is Action.CONTINUE

    def test_most_severe_wins(self):
        acts = [Action.CONTINUE, Action.STOP_OR_REROUTE, Action.CONTINUE]
        assert aggregate(acts) is Action.STOP_OR_REROUTE
        assert aggregate(acts + [Action.STOP]) is Action.STOP

    def test_order_independent(self):
        acts = [Action.STOP, Action.CONTINUE]
        assert aggregate(acts) is aggregate(reversed(acts))


class TestActionTableConfig:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps(DEFAULT_TABLE.to_dict()))
        loaded = load_action_table(path)
        for key, action in EXPECTED.items():
            assert loaded.lookup(*key) is action
        assert loaded.confidence_threshold == 0.5

    def test_missing_category_rejected(self, tmp_path):
        raw = DEFAULT_TABLE.to_dict()
        del raw["actions"]["vehicles"]
        path = tmp_path / "table.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="vehicles"):
            load_action_table(path)

    def test_missing_size_rejected(self, tmp_path):
        raw = DEFAULT_TABLE.to_dict()
        del raw["actions"]["tools"]["small"]
        path = tmp_path / "table.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="tools"):
            load_action_table(path)

    def test_bad_action_name_rejected(self, tmp_path):
        raw = DEFAULT_TABLE.to_dict()
        raw["actions"]["tools"]["small"] = "sprint"
        path = tmp_path / "table.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="sprint"):
            load_action_table(path)

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            ActionTable(confidence_threshold=1.5)


class TestZoneLayout:
    def test_two_zones_per_side(self):
        layout = ZoneLayout()
        for side in ("left", "bottom", "right", "top"):
            assert len(layout.zones_on(side)) == 2

    def test_corner_modules_match_figure(self):
        modules = ZoneLayout().module_zones()
        assert modules["bottom_left"] == ("B", "C")
        assert modules["bottom_right"] == ("D", "E")
        covered = sorted(z for pair in modules.values() for z in pair)
        assert covered == sorted(ZONE_LABELS)

    def test_side_lookup(self):
        layout = ZoneLayout()
        assert layout.side_of("A") == "left"
        with pytest.raises(ValueError):
            layout.side_of("Q")

    def test_dimensions_validated(self):
        with pytest.raises(ValueError):
            ZoneLayout(d_nf_mm=0.0)


class TestPerceptionAdapter:
    def test_untriggered_yields_nothing(self):
        assert perception_to_events({"triggered": False, "heights": []}, "B") == []

    def test_heights_become_tier2(self):
        rec = {
            "ts_ms": 40, "triggered": True,
            "heights": [
                {"pos_mm": 0.0, "h_obj_mm": 62.0, "valid": True},
                {"pos_mm": 5.0, "h_obj_mm": 500.0, "valid": False},
            ],
        }
        events = perception_to_events(rec, "C")
        assert [e.tier for e in events] == [2, 2]
        assert events[0].height_mm == 62.0
        assert events[1].height_mm is None
        assert all(e.zone == "C" and e.ts_ms == 40 for e in events)

    def test_presence_only_becomes_tier1(self):
        rec = {"ts_ms": 20, "triggered": True, "heights": []}
        events = perception_to_events(rec, "B")
        assert len(events) == 1
        assert events[0].tier == 1

    def test_min_height_filter_keeps_fail_safe(self):
        rec = {
            "ts_ms": 0, "triggered": True,
            "heights": [{"pos_mm": 0.0, "h_obj_mm": 1.0, "valid": True}],
        }
        events = perception_to_events(rec, "B", min_height_mm=5.0)
        assert len(events) == 1
        assert events[0].tier == 1


class TestDecisionLog:
    def test_record_schema(self):
        rec = decision_record(tier3(ObjectCategory.TOOLS, SizeClass.LARGE))
        assert set(rec) == {"ts_ms", "zone", "tier", "category", "size", "action", "resolved"}
        assert rec["action"] == "stop_or_reroute"
        assert rec["resolved"] == "stop"

    def test_record_reroute_policy(self):
        rec = decision_record(
            tier3(ObjectCategory.VEHICLES, SizeClass.LARGE), policy="reroute-first"
        )
        assert rec["resolved"] == "reroute"

    def test_tier1_record_has_null_fields(self):
        rec = decision_record(DetectionEvent(tier=1, zone="A", ts_ms=7))
        assert rec["category"] is None
        assert rec["size"] is None
        assert rec["action"] == "stop"

    def test_write_log(self, tmp_path):
        events = [
            DetectionEvent(tier=1, zone="A"),
            DetectionEvent(tier=2, zone="B", height_mm=10.0),
        ]
        path = tmp_path / "log.jsonl"
        write_decision_log(path, events)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[1]["action"] == "continue"


events_st = st.builds(
    lambda tier, height, cat, conf: DetectionEvent(
        tier=tier,
        zone="B",
        height_mm=height if tier >= 2 else None,
        category=cat if tier == 3 else None,
        confidence=conf if tier == 3 else None,
    ),
    tier=st.sampled_from([1, 2, 3]),
    height=st.one_of(st.none(), st.floats(0.0, 500.0)),
    cat=st.sampled_from(list(ObjectCategory)),
    conf=st.floats(0.0, 1.0),
)


@given(events_st)
def test_decide_is_total(event):
    assert decide(event) in list(Action)


@given(events_st)
def test_confident_human_always_stops(event):
    if event.category is ObjectCategory.HUMAN and event.confidence >= 0.5:
        assert decide(event) is Action.STOP


@given(st.lists(st.sampled_from(list(Action))))
def test_aggregate_is_max_severity(actions):
    got = aggregate(actions)
    if actions:
        assert severity(got) == max(severity(a) for a in actions)
    else:
        assert got is Action.CONTINUE
