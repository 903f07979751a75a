"""Spatio-temporal join of votes with zones, environment and wearable samples."""

from __future__ import annotations

import csv
import json
from bisect import bisect_left
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import AmbiguousZone, MalformedFile
from .geometry import contains
from .ingest import (
    FeedbackVote,
    LocalizationFix,
    SensorReading,
    WearableSample,
    ZoneMap,
    vote_sort_key,
)
from .schema import DIMENSIONS, epoch, format_float, format_timestamp, parse_float, parse_timestamp


@dataclass(frozen=True)
class FusionConfig:
    env_window: int = 900
    wearable_window: int = 300
    localization_window: int = 600

    def __post_init__(self) -> None:
        for name in ("env_window", "wearable_window", "localization_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class EnvSnapshot:
    temperature: float
    humidity: float
    noise_level: float
    illuminance: float
    sensor_id: str
    reading_age: int  # reading time minus vote time, seconds


@dataclass(frozen=True)
class BodySample:
    value: float
    sample_age: int


@dataclass(frozen=True)
class FusedRecord:
    vote: FeedbackVote
    zone_id: str
    env: EnvSnapshot | None = None
    near_body_temperature: BodySample | None = None
    heart_rate: BodySample | None = None

    @property
    def vote_id(self) -> str:
        return self.vote.vote_id

    @property
    def occupant_id(self) -> str:
        return self.vote.occupant_id

    @property
    def timestamp(self):
        return self.vote.timestamp

    def label(self, dimension: str) -> str:
        return self.vote.preference(dimension)


@dataclass
class FusionStats:
    total_votes: int = 0
    zone_resolved: int = 0
    env_matched: int = 0
    wearable_matched: int = 0
    near_body_matched: int = 0
    heart_rate_matched: int = 0
    dropped_no_fix: int = 0
    dropped_outside_zones: int = 0
    dropped_ambiguous: int = 0
    dropped_unknown_zone: int = 0

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


def assign_zone(fix: LocalizationFix, zones: ZoneMap) -> str | None:
    """Zone containing the fix (boundary inclusive), or None when outside all zones.

    Overlapping candidates resolve to the smallest polygon; an exact area tie
    raises :class:`AmbiguousZone`.
    """
    if fix.zone_id is not None:
        return fix.zone_id
    if not fix.has_coordinates:
        return None
    hits = [z for z in zones if z.floor == fix.floor and contains(z.polygon, fix.x, fix.y)]
    if not hits:
        return None
    if len(hits) == 1:
        return hits[0].zone_id
    hits.sort(key=lambda z: z.area)
    if abs(hits[0].area - hits[1].area) <= 1e-12 * max(1.0, hits[0].area):
        raise AmbiguousZone(
            f"point ({fix.x}, {fix.y}) on floor {fix.floor} lies in equal-area zones "
            f"{hits[0].zone_id!r} and {hits[1].zone_id!r}"
        )
    return hits[0].zone_id


def nearest_index(times: Sequence[int], t: int, window: int) -> int | None:
    """Index of the entry closest to ``t`` within ``window`` seconds.

    Equal distances prefer the earlier entry; among identical timestamps the
    first in sequence order wins.
    """
    if not times:
        return None
    i = bisect_left(times, t)
    best = None
    best_dist = None
    if i > 0:
        j = bisect_left(times, times[i - 1])
        best, best_dist = j, t - times[j]
    if i < len(times):
        dist = times[i] - t
        if best_dist is None or dist < best_dist:
            best, best_dist = i, dist
    if best_dist is None or best_dist > window:
        return None
    return best


class _Series:
    """Time-sorted values with parallel epoch-second keys."""

    def __init__(self, items: list, key) -> None:
        self.items = sorted(items, key=key)
        self.times = [epoch(it.timestamp) for it in self.items]


def fuse_dataset(
    votes: Iterable[FeedbackVote],
    fixes: Iterable[LocalizationFix],
    readings: Iterable[SensorReading],
    wearables: Iterable[WearableSample],
    zones: ZoneMap,
    cfg: FusionConfig | None = None,
) -> tuple[list[FusedRecord], FusionStats]:
    """Attach zone, nearest environment snapshot and wearable samples to each vote.

    A vote carrying its own ``zone_id`` keeps it; otherwise the occupant's
    nearest localization fix decides. Votes without a zone are dropped and
    counted; votes with a zone but no reading keep ``env=None``.
    """
    cfg = cfg or FusionConfig()
    stats = FusionStats()
    known_zones = set(zones.ids)

    fix_by_occ: dict[str, list] = defaultdict(list)
    for f in fixes:
        fix_by_occ[f.occupant_id].append(f)
    fix_series = {k: _Series(v, lambda f: (f.timestamp,)) for k, v in fix_by_occ.items()}

    read_by_zone: dict[str, list] = defaultdict(list)
    for r in readings:
        read_by_zone[r.zone_id].append(r)
    read_series = {k: _Series(v, lambda r: (r.timestamp, r.sensor_id)) for k, v in read_by_zone.items()}

    nbt_by_occ: dict[str, list] = defaultdict(list)
    hr_by_occ: dict[str, list] = defaultdict(list)
    for w in wearables:
        if w.near_body_temperature is not None:
            nbt_by_occ[w.occupant_id].append(w)
        if w.heart_rate is not None:
            hr_by_occ[w.occupant_id].append(w)
    nbt_series = {k: _Series(v, lambda w: (w.timestamp,)) for k, v in nbt_by_occ.items()}
    hr_series = {k: _Series(v, lambda w: (w.timestamp,)) for k, v in hr_by_occ.items()}

    fused: list[FusedRecord] = []
    for vote in votes:
        stats.total_votes += 1
        t = epoch(vote.timestamp)
        zone_id = vote.zone_id
        if zone_id is None:
            series = fix_series.get(vote.occupant_id)
            idx = nearest_index(series.times, t, cfg.localization_window) if series else None
            if idx is None:
                stats.dropped_no_fix += 1
                continue
            try:
                zone_id = assign_zone(series.items[idx], zones)
            except AmbiguousZone:
                stats.dropped_ambiguous += 1
                continue
            if zone_id is None:
                stats.dropped_outside_zones += 1
                continue
        if zone_id not in known_zones:
            stats.dropped_unknown_zone += 1
            continue
        stats.zone_resolved += 1

        env = None
        series = read_series.get(zone_id)
        idx = nearest_index(series.times, t, cfg.env_window) if series else None
        if idx is not None:
            r = series.items[idx]
            env = EnvSnapshot(r.temperature, r.humidity, r.noise_level, r.illuminance, r.sensor_id, series.times[idx] - t)
            stats.env_matched += 1

        nbt = _body(nbt_series.get(vote.occupant_id), t, cfg.wearable_window, "near_body_temperature")
        hr = _body(hr_series.get(vote.occupant_id), t, cfg.wearable_window, "heart_rate")
        stats.near_body_matched += nbt is not None
        stats.heart_rate_matched += hr is not None
        stats.wearable_matched += nbt is not None or hr is not None
        fused.append(FusedRecord(vote, zone_id, env, nbt, hr))

    fused.sort(key=lambda rec: vote_sort_key(rec.vote))
    return fused, stats


def _body(series: _Series | None, t: int, window: int, attr: str) -> BodySample | None:
    if series is None:
        return None
    idx = nearest_index(series.times, t, window)
    if idx is None:
        return None
    return BodySample(getattr(series.items[idx], attr), series.times[idx] - t)


# ---------------------------------------------------------------------------
# fused.csv

FUSED_COLUMNS = (
    "vote_id",
    "occupant_id",
    "timestamp",
    "thermal",
    "light",
    "noise",
    "vote_zone_id",
    "zone_id",
    "sensor_id",
    "temperature_c",
    "humidity_rh",
    "noise_db",
    "illuminance_lux",
    "env_age_s",
    "near_body_temp_c",
    "near_body_age_s",
    "heart_rate_bpm",
    "heart_rate_age_s",
)


def _fused_row(rec: FusedRecord) -> list[str]:
    v, env, nbt, hr = rec.vote, rec.env, rec.near_body_temperature, rec.heart_rate
    return [
        v.vote_id,
        v.occupant_id,
        format_timestamp(v.timestamp),
        v.thermal,
        v.light,
        v.noise,
        v.zone_id or "",
        rec.zone_id,
        env.sensor_id if env else "",
        format_float(env.temperature) if env else "",
        format_float(env.humidity) if env else "",
        format_float(env.noise_level) if env else "",
        format_float(env.illuminance) if env else "",
        str(env.reading_age) if env else "",
        format_float(nbt.value) if nbt else "",
        str(nbt.sample_age) if nbt else "",
        format_float(hr.value) if hr else "",
        str(hr.sample_age) if hr else "",
    ]


def write_fused(path: str | Path, records: Iterable[FusedRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FUSED_COLUMNS)
        for rec in records:
            writer.writerow(_fused_row(rec))


def read_fused(path: str | Path) -> list[FusedRecord]:
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != FUSED_COLUMNS:
            raise MalformedFile(f"{path}: not a fused record file")
        for row in reader:
            vote = FeedbackVote(
                vote_id=row["vote_id"],
                occupant_id=row["occupant_id"],
                timestamp=parse_timestamp(row["timestamp"]),
                zone_id=row["vote_zone_id"] or None,
                **{dim: row[dim] for dim in DIMENSIONS},
            )
            env = None
            if row["sensor_id"]:
                env = EnvSnapshot(
                    parse_float(row["temperature_c"]),
                    parse_float(row["humidity_rh"]),
                    parse_float(row["noise_db"]),
                    parse_float(row["illuminance_lux"]),
                    row["sensor_id"],
                    int(row["env_age_s"]),
                )
            nbt = BodySample(parse_float(row["near_body_temp_c"]), int(row["near_body_age_s"])) if row["near_body_temp_c"] else None
            hr = BodySample(parse_float(row["heart_rate_bpm"]), int(row["heart_rate_age_s"])) if row["heart_rate_bpm"] else None
            records.append(FusedRecord(vote, row["zone_id"], env, nbt, hr))
    return records


def write_stats(path: str | Path, stats: FusionStats) -> None:
    Path(path).write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
