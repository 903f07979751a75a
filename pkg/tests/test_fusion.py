import math
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comfortpref.errors import AmbiguousZone
from comfortpref.fusion import (
    FusionConfig,
    assign_zone,
    fuse_dataset,
    nearest_index,
    read_fused,
    write_fused,
)
from comfortpref.geometry import contains, is_simple, polygon_area
from comfortpref.ingest import LocalizationFix, SensorReading, WearableSample, ZoneMap

from conftest import T0, make_vote, square


def fix(x=None, y=None, floor=1, zone=None, occupant="occ01", ts=T0):
    return LocalizationFix(occupant, ts, x, y, floor if x is not None else None, zone)


def reading(ts, zone="A", sensor="sA", temp=25.0):
    return SensorReading(sensor, zone, ts, temp, 60.0, 45.0, 300.0)


# ---------------------------------------------------------------------------
# geometry


def winding_number(poly, px, py):
    """Independent containment oracle (nonzero winding) for points off the boundary."""
    wn = 0
    n = len(poly)
    for i in range(n):
        (x1, y1), (x2, y2) = poly[i], poly[(i + 1) % n]
        cross = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1)
        if y1 <= py < y2 and cross > 0:
            wn += 1
        elif y2 <= py < y1 and cross < 0:
            wn -= 1
    return wn != 0


def star_polygon(radii):
    n = len(radii)
    return [(r * math.cos(2 * math.pi * i / n), r * math.sin(2 * math.pi * i / n)) for i, r in enumerate(radii)]


@settings(max_examples=80, deadline=None)
@given(
    radii=st.lists(st.floats(1.0, 10.0), min_size=3, max_size=12),
    px=st.floats(-11, 11),
    py=st.floats(-11, 11),
)
def test_containment_matches_winding_oracle(radii, px, py):
    poly = star_polygon(radii)
    assert is_simple(poly)
    on_edge = any(
        abs((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])) < 1e-6
        for a, b in zip(poly, poly[1:] + poly[:1])
    )
    if not on_edge:
        assert contains(poly, px, py) == winding_number(poly, px, py)


def test_area_and_boundary():
    sq = square("A", 0, 0, 10).polygon
    assert polygon_area(sq) == 100.0
    assert contains(sq, 0.0, 5.0) and contains(sq, 10.0, 10.0)
    assert not contains(sq, 10.0001, 5.0)


def test_assign_zone_examples(two_zones):
    assert assign_zone(fix(5, 5), two_zones) == "A"
    assert assign_zone(fix(50, 50), two_zones) is None
    with pytest.raises(AmbiguousZone):
        assign_zone(fix(10, 5), two_zones)


def test_assign_zone_prefers_smaller_overlap():
    zones = ZoneMap((square("big", 0, 0, 20), square("small", 5, 5, 4)))
    assert assign_zone(fix(6, 6), zones) == "small"
    assert assign_zone(fix(1, 1), zones) == "big"


def test_assign_zone_respects_floor(two_zones):
    assert assign_zone(fix(5, 5, floor=2), two_zones) is None


def test_assign_zone_passes_through_resolved_fix(two_zones):
    assert assign_zone(fix(zone="B"), two_zones) == "B"


# ---------------------------------------------------------------------------
# nearest-in-time join


def test_nearest_index_example():
    # vote at 10:00, readings at 09:55 and 10:20 -> 09:55
    times = [-300, 1200]
    assert nearest_index(times, 0, 900) == 0
    assert nearest_index(times, 0, 200) is None


def test_nearest_index_tie_prefers_earlier():
    assert nearest_index([-60, 60], 0, 900) == 0
    assert nearest_index([-60, -60, 60], 0, 900) == 0


@settings(max_examples=200, deadline=None)
@given(
    times=st.lists(st.integers(-5000, 5000), max_size=20).map(sorted),
    t=st.integers(-6000, 6000),
    window=st.integers(0, 3000),
)
def test_nearest_index_is_optimal(times, t, window):
    idx = nearest_index(times, t, window)
    candidates = [(abs(x - t), x, i) for i, x in enumerate(times) if abs(x - t) <= window]
    if not candidates:
        assert idx is None
    else:
        assert (abs(times[idx] - t), times[idx], idx) == min(candidates)


# ---------------------------------------------------------------------------
# fuse_dataset


def test_fuse_picks_nearest_reading(two_zones):
    votes = [make_vote("v1", ts=T0)]
    fixes = [fix(5, 5, ts=T0 - timedelta(seconds=30))]
    readings = [reading(T0 - timedelta(minutes=5), temp=20.0), reading(T0 + timedelta(minutes=20), temp=30.0)]
    records, stats = fuse_dataset(votes, fixes, readings, [], two_zones)
    assert len(records) == 1
    rec = records[0]
    assert rec.zone_id == "A" and rec.env.temperature == 20.0 and rec.env.reading_age == -300
    assert rec.near_body_temperature is None and rec.heart_rate is None
    assert stats.env_matched == 1 and stats.zone_resolved == 1


def test_vote_without_fix_is_dropped(two_zones):
    votes = [make_vote("v1", ts=T0)]
    fixes = [fix(5, 5, ts=T0 - timedelta(seconds=601))]
    records, stats = fuse_dataset(votes, fixes, [reading(T0)], [], two_zones)
    assert records == [] and stats.dropped_no_fix == 1 and stats.total_votes == 1


def test_vote_keeps_env_none_outside_window(two_zones):
    votes = [make_vote("v1", ts=T0)]
    records, stats = fuse_dataset(votes, [fix(5, 5)], [reading(T0 + timedelta(seconds=901))], [], two_zones)
    assert len(records) == 1 and records[0].env is None and stats.env_matched == 0


def test_vote_zone_overrides_fixes(two_zones):
    votes = [make_vote("v1", ts=T0, zone="B")]
    records, _ = fuse_dataset(votes, [fix(5, 5)], [], [], two_zones)
    assert records[0].zone_id == "B"


def test_wearable_windows(two_zones):
    votes = [make_vote("v1", ts=T0)]
    wear = [
        WearableSample("occ01", T0 + timedelta(seconds=200), 31.0, None),
        WearableSample("occ01", T0 - timedelta(seconds=301), None, 80.0),
    ]
    records, stats = fuse_dataset(votes, [fix(5, 5)], [], wear, two_zones, FusionConfig(wearable_window=300))
    rec = records[0]
    assert rec.near_body_temperature.value == 31.0 and rec.heart_rate is None
    assert stats.wearable_matched == 1 and stats.heart_rate_matched == 0


def test_ambiguous_and_outside_counted(two_zones):
    votes = [make_vote("v1", occupant="o1"), make_vote("v2", occupant="o2")]
    fixes = [fix(10, 5, occupant="o1"), fix(99, 99, occupant="o2")]
    records, stats = fuse_dataset(votes, fixes, [], [], two_zones)
    assert records == []
    assert stats.dropped_ambiguous == 1 and stats.dropped_outside_zones == 1


def test_fused_csv_round_trip(tmp_path, two_zones):
    votes = [make_vote(f"v{i}", ts=T0 + timedelta(minutes=7 * i)) for i in range(5)]
    fixes = [fix(5, 5, ts=T0 + timedelta(minutes=7 * i)) for i in range(5)]
    readings = [reading(T0 + timedelta(minutes=5 * i), temp=20.0 + i / 3) for i in range(8)]
    wear = [WearableSample("occ01", T0, 31.25, 70.0)]
    records, _ = fuse_dataset(votes, fixes, readings, wear, two_zones)
    p = tmp_path / "fused.csv"
    write_fused(p, records)
    assert read_fused(p) == records


@settings(max_examples=40, deadline=None)
@given(
    vote_offsets=st.lists(st.integers(0, 20000), min_size=1, max_size=15),
    fix_offsets=st.lists(st.integers(0, 20000), max_size=15),
    read_offsets=st.lists(st.integers(0, 20000), max_size=15),
)
def test_attrition_is_monotone_and_deterministic(vote_offsets, fix_offsets, read_offsets):
    zones = ZoneMap((square("A", 0, 0, 10),))
    votes = [make_vote(f"v{i}", ts=T0 + timedelta(seconds=o)) for i, o in enumerate(vote_offsets)]
    fixes = [fix(5, 5, ts=T0 + timedelta(seconds=o)) for o in fix_offsets]
    readings = [reading(T0 + timedelta(seconds=o), sensor=f"s{i}") for i, o in enumerate(read_offsets)]
    records, stats = fuse_dataset(votes, fixes, readings, [], zones)
    assert stats.env_matched <= stats.zone_resolved <= stats.total_votes == len(votes)
    assert len(records) == stats.zone_resolved
    again, _ = fuse_dataset(list(reversed(votes)), list(reversed(fixes)), list(reversed(readings)), [], zones)
    assert again == records
