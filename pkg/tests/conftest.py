from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from comfortpref.fusion import BodySample, EnvSnapshot, FusedRecord
from comfortpref.ingest import FeedbackVote, Zone, ZoneMap

T0 = datetime(2019, 9, 2, 1, 0, tzinfo=timezone.utc)  # 09:00 Monday in Singapore


def make_vote(vote_id, occupant="occ01", ts=T0, thermal="no_change", light="no_change", noise="no_change", zone=None):
    return FeedbackVote(vote_id, occupant, ts, thermal, light, noise, zone)


def make_record(
    vote_id,
    occupant="occ01",
    ts=T0,
    thermal="no_change",
    light="no_change",
    noise="no_change",
    zone="z01",
    env=(25.0, 60.0, 45.0, 300.0),
    nbt=31.0,
    hr=70.0,
):
    vote = make_vote(vote_id, occupant, ts, thermal, light, noise)
    snap = EnvSnapshot(*env, "s1", 0) if env is not None else None
    return FusedRecord(
        vote,
        zone,
        snap,
        BodySample(nbt, 0) if nbt is not None else None,
        BodySample(hr, 0) if hr is not None else None,
    )


def square(zone_id, x0, y0, size, floor=1):
    return Zone(zone_id, floor, ((x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size)), zone_id)


@pytest.fixture
def two_zones():
    return ZoneMap((square("A", 0, 0, 10), square("B", 10, 0, 10)))


def hours(h: float) -> timedelta:
    return timedelta(hours=h)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
