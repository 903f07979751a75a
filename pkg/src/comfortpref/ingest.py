"""Loading, validation and canonical serialization of the raw input streams.

Every loader returns a :class:`LoadResult` holding the accepted records in
canonical order and one :class:`Reject` per refused row. Bad rows never abort
a load; only an unreadable file, a wrong header, a duplicate vote id or an
empty result raise.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Generic, Iterable, Iterator, TypeVar

from .errors import DuplicateVoteId, EmptyDataset, MalformedFile
from .geometry import is_simple, polygon_area
from .schema import (
    DIMENSIONS,
    format_float,
    format_timestamp,
    parse_float,
    parse_timestamp,
)

log = logging.getLogger(__name__)

T = TypeVar("T")

VOTE_COLUMNS = ("vote_id", "occupant_id", "timestamp", "thermal", "light", "noise", "zone_id")
SENSOR_COLUMNS = (
    "sensor_id",
    "zone_id",
    "timestamp",
    "temperature_c",
    "humidity_rh",
    "noise_db",
    "illuminance_lux",
)
LOCALIZATION_COLUMNS = ("occupant_id", "timestamp", "x_m", "y_m", "floor", "zone_id")
WEARABLE_COLUMNS = ("occupant_id", "timestamp", "near_body_temp_c", "heart_rate_bpm")

TEMPERATURE_RANGE = (-10.0, 60.0)
HUMIDITY_RANGE = (0.0, 100.0)
NOISE_RANGE = (0.0, 140.0)
HEART_RATE_RANGE = (25.0, 230.0)
NEAR_BODY_RANGE = (10.0, 45.0)


@dataclass(frozen=True)
class FeedbackVote:
    vote_id: str
    occupant_id: str
    timestamp: datetime
    thermal: str
    light: str
    noise: str
    zone_id: str | None = None

    def preference(self, dimension: str) -> str:
        return getattr(self, dimension)


@dataclass(frozen=True)
class SensorReading:
    sensor_id: str
    zone_id: str
    timestamp: datetime
    temperature: float
    humidity: float
    noise_level: float
    illuminance: float


@dataclass(frozen=True)
class LocalizationFix:
    occupant_id: str
    timestamp: datetime
    x: float | None = None
    y: float | None = None
    floor: int | None = None
    zone_id: str | None = None

    @property
    def has_coordinates(self) -> bool:
        return self.x is not None and self.y is not None and self.floor is not None


@dataclass(frozen=True)
class WearableSample:
    occupant_id: str
    timestamp: datetime
    near_body_temperature: float | None = None
    heart_rate: float | None = None


@dataclass(frozen=True)
class Zone:
    zone_id: str
    floor: int
    polygon: tuple[tuple[float, float], ...]
    label: str = ""

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)


@dataclass(frozen=True)
class ZoneMap:
    zones: tuple[Zone, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for zone in self.zones:
            if zone.zone_id in seen:
                raise MalformedFile(f"duplicate zone_id {zone.zone_id!r}")
            seen.add(zone.zone_id)
            if not is_simple(zone.polygon):
                raise MalformedFile(f"zone {zone.zone_id!r} polygon is not simple")

    def __contains__(self, zone_id: object) -> bool:
        return any(z.zone_id == zone_id for z in self.zones)

    def __iter__(self) -> Iterator[Zone]:
        return iter(self.zones)

    def __len__(self) -> int:
        return len(self.zones)

    def get(self, zone_id: str) -> Zone | None:
        for zone in self.zones:
            if zone.zone_id == zone_id:
                return zone
        return None

    @property
    def ids(self) -> list[str]:
        return [z.zone_id for z in self.zones]


@dataclass(frozen=True)
class Reject:
    source: str
    line: int
    reason: str


@dataclass
class LoadResult(Generic[T]):
    records: list[T]
    rejects: list[Reject] = field(default_factory=list)
    total_rows: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[T]:
        return iter(self.records)


# ---------------------------------------------------------------------------
# raw row reading


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unsupported format {fmt!r}")
    return fmt


def _check_header(header: Iterable[str], columns: tuple[str, ...], optional: set[str], path: Path) -> None:
    header = list(header)
    if len(set(header)) != len(header):
        raise MalformedFile(f"{path}: duplicate columns in header")
    missing = [c for c in columns if c not in header and c not in optional]
    unknown = [c for c in header if c not in columns]
    if missing or unknown:
        raise MalformedFile(f"{path}: header mismatch (missing={missing}, unexpected={unknown})")


def _jsonl_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        raise ValueError("boolean where a string or number is expected")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_rows(
    path: Path, fmt: str, columns: tuple[str, ...], optional: set[str]
) -> Iterator[tuple[int, dict[str, str] | str]]:
    """Yield ``(line_number, row)``; a string row is a per-line parse failure."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise MalformedFile(f"{path}: unreadable ({exc})") from exc
    with handle:
        try:
            if fmt == "csv":
                reader = csv.DictReader(handle)
                if reader.fieldnames is None:
                    raise MalformedFile(f"{path}: missing header row")
                _check_header(reader.fieldnames, columns, optional, path)
                for row in reader:
                    if None in row:
                        yield reader.line_num, "too many fields"
                        continue
                    yield reader.line_num, {k: (v or "").strip() for k, v in row.items()}
            else:
                for line_no, line in enumerate(handle, start=1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                    except json.JSONDecodeError:
                        yield line_no, "invalid JSON"
                        continue
                    if not isinstance(obj, dict):
                        yield line_no, "JSON line is not an object"
                        continue
                    unknown = [k for k in obj if k not in columns]
                    if unknown:
                        yield line_no, f"unexpected fields {unknown}"
                        continue
                    try:
                        yield line_no, {c: _jsonl_value(obj.get(c)).strip() for c in columns}
                    except ValueError as exc:
                        yield line_no, str(exc)
        except UnicodeDecodeError as exc:
            raise MalformedFile(f"{path}: not UTF-8 ({exc})") from exc
        except csv.Error as exc:
            raise MalformedFile(f"{path}: {exc}") from exc


def _load(
    path: str | Path,
    fmt: str | None,
    columns: tuple[str, ...],
    optional: set[str],
    parse: Callable[[dict[str, str]], T],
    sort_key: Callable[[T], Any],
) -> LoadResult[T]:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    records: list[T] = []
    rejects: list[Reject] = []
    total = 0
    for line_no, row in _read_rows(path, fmt, columns, optional):
        total += 1
        if isinstance(row, str):
            rejects.append(Reject(path.name, line_no, row))
            continue
        try:
            records.append(parse(row))
        except (ValueError, TypeError) as exc:
            rejects.append(Reject(path.name, line_no, str(exc)))
    for rej in rejects:
        log.debug("%s:%d rejected: %s", rej.source, rej.line, rej.reason)
    if not records:
        raise EmptyDataset(f"{path}: no valid rows ({len(rejects)} rejected)")
    records.sort(key=sort_key)
    return LoadResult(records, rejects, total)


def _required(row: dict[str, str], name: str) -> str:
    value = row.get(name, "")
    if not value:
        raise ValueError(f"missing {name}")
    return value


def _timestamp(row: dict[str, str], horizon: datetime) -> datetime:
    raw = _required(row, "timestamp")
    try:
        ts = parse_timestamp(raw)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {raw!r}: {exc}") from None
    if ts > horizon:
        raise ValueError(f"timestamp {raw!r} beyond dataset horizon")
    return ts


def _ranged(row: dict[str, str], name: str, bounds: tuple[float, float | None]) -> float:
    raw = _required(row, name)
    try:
        value = parse_float(raw)
    except ValueError:
        raise ValueError(f"{name} is not a number: {raw!r}") from None
    lo, hi = bounds
    if value < lo or (hi is not None and value > hi):
        raise ValueError(f"{name}={value} out of range [{lo}, {hi}]")
    return value


def _optional_ranged(row: dict[str, str], name: str, bounds: tuple[float, float]) -> float | None:
    return _ranged(row, name, bounds) if row.get(name) else None


def _horizon(horizon: datetime | None) -> datetime:
    return horizon if horizon is not None else datetime.now(timezone.utc)


# ---------------------------------------------------------------------------
# loaders


def parse_vote(row: dict[str, str], horizon: datetime) -> FeedbackVote:
    prefs = {}
    for dim, classes in DIMENSIONS.items():
        raw = row.get(dim, "")
        if not raw:
            raise ValueError(f"missing preference for dimension {dim}")
        if raw not in classes:
            raise ValueError(f"invalid class for dimension {dim}: {raw!r}")
        prefs[dim] = raw
    return FeedbackVote(
        vote_id=_required(row, "vote_id"),
        occupant_id=_required(row, "occupant_id"),
        timestamp=_timestamp(row, horizon),
        zone_id=row.get("zone_id") or None,
        **prefs,
    )


def vote_sort_key(v: FeedbackVote) -> tuple:
    return (v.occupant_id, v.timestamp, v.vote_id)


def load_votes(path: str | Path, format: str | None = None, horizon: datetime | None = None) -> LoadResult[FeedbackVote]:
    h = _horizon(horizon)
    result = _load(path, format, VOTE_COLUMNS, {"zone_id"}, lambda r: parse_vote(r, h), vote_sort_key)
    seen: set[str] = set()
    for vote in result.records:
        if vote.vote_id in seen:
            raise DuplicateVoteId(f"{path}: vote_id {vote.vote_id!r} appears more than once")
        seen.add(vote.vote_id)
    return result


def load_sensor_readings(
    path: str | Path,
    format: str | None = None,
    horizon: datetime | None = None,
    zones: ZoneMap | None = None,
) -> LoadResult[SensorReading]:
    h = _horizon(horizon)
    registry: dict[str, str] = {}
    known = set(zones.ids) if zones is not None else None

    def parse(row: dict[str, str]) -> SensorReading:
        reading = SensorReading(
            sensor_id=_required(row, "sensor_id"),
            zone_id=_required(row, "zone_id"),
            timestamp=_timestamp(row, h),
            temperature=_ranged(row, "temperature_c", TEMPERATURE_RANGE),
            humidity=_ranged(row, "humidity_rh", HUMIDITY_RANGE),
            noise_level=_ranged(row, "noise_db", NOISE_RANGE),
            illuminance=_ranged(row, "illuminance_lux", (0.0, None)),
        )
        if known is not None and reading.zone_id not in known:
            raise ValueError(f"zone {reading.zone_id!r} not in zone map")
        owner = registry.setdefault(reading.sensor_id, reading.zone_id)
        if owner != reading.zone_id:
            raise ValueError(f"sensor {reading.sensor_id!r} already mapped to zone {owner!r}")
        return reading

    return _load(
        path,
        format,
        SENSOR_COLUMNS,
        set(),
        parse,
        lambda r: (r.zone_id, r.timestamp, r.sensor_id),
    )


def sensor_registry(readings: Iterable[SensorReading]) -> dict[str, str]:
    """Map each distinct sensor id to its zone."""
    return {r.sensor_id: r.zone_id for r in readings}


def parse_fix(row: dict[str, str], horizon: datetime) -> LocalizationFix:
    coords = [row.get("x_m", ""), row.get("y_m", ""), row.get("floor", "")]
    zone_id = row.get("zone_id") or None
    x = y = floor = None
    if all(coords):
        try:
            x, y = parse_float(coords[0]), parse_float(coords[1])
            floor = int(coords[2])
        except ValueError:
            raise ValueError(f"bad coordinates {coords}") from None
    elif any(coords) and zone_id is None:
        raise ValueError("incomplete coordinates (need x_m, y_m and floor)")
    if floor is None and zone_id is None:
        raise ValueError("fix has neither coordinates nor zone_id")
    return LocalizationFix(
        occupant_id=_required(row, "occupant_id"),
        timestamp=_timestamp(row, horizon),
        x=x,
        y=y,
        floor=floor,
        zone_id=zone_id,
    )


def _fix_key(f: LocalizationFix) -> tuple:
    return (
        f.occupant_id,
        f.timestamp,
        f.zone_id or "",
        f.floor if f.floor is not None else -(10**9),
        f.x if f.x is not None else float("-inf"),
        f.y if f.y is not None else float("-inf"),
    )


def load_localization(
    path: str | Path, format: str | None = None, horizon: datetime | None = None
) -> LoadResult[LocalizationFix]:
    h = _horizon(horizon)
    return _load(path, format, LOCALIZATION_COLUMNS, set(), lambda r: parse_fix(r, h), _fix_key)


def parse_wearable(row: dict[str, str], horizon: datetime) -> WearableSample:
    nbt = _optional_ranged(row, "near_body_temp_c", NEAR_BODY_RANGE)
    hr = _optional_ranged(row, "heart_rate_bpm", HEART_RATE_RANGE)
    if nbt is None and hr is None:
        raise ValueError("sample has neither near-body temperature nor heart rate")
    return WearableSample(
        occupant_id=_required(row, "occupant_id"),
        timestamp=_timestamp(row, horizon),
        near_body_temperature=nbt,
        heart_rate=hr,
    )


def _wearable_key(w: WearableSample) -> tuple:
    return (
        w.occupant_id,
        w.timestamp,
        w.near_body_temperature if w.near_body_temperature is not None else float("-inf"),
        w.heart_rate if w.heart_rate is not None else float("-inf"),
    )


def load_wearable(
    path: str | Path, format: str | None = None, horizon: datetime | None = None
) -> LoadResult[WearableSample]:
    h = _horizon(horizon)
    return _load(path, format, WEARABLE_COLUMNS, set(), lambda r: parse_wearable(r, h), _wearable_key)


def load_zones(path: str | Path) -> ZoneMap:
    """Read a GeoJSON FeatureCollection of zone polygons (planar meters)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"{path}: unreadable zone map ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedFile(f"{path}: expected a GeoJSON FeatureCollection")
    zones = []
    for i, feature in enumerate(doc.get("features", [])):
        try:
            props = feature["properties"]
            geom = feature["geometry"]
            if geom["type"] != "Polygon":
                raise ValueError("geometry must be a Polygon")
            ring = [(float(x), float(y)) for x, y, *_ in geom["coordinates"][0]]
            if len(ring) > 1 and ring[0] == ring[-1]:
                ring = ring[:-1]
            zones.append(
                Zone(
                    zone_id=str(props["zone_id"]),
                    floor=int(props["floor"]),
                    polygon=tuple(ring),
                    label=str(props.get("label", "")),
                )
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise MalformedFile(f"{path}: feature {i} invalid ({exc})") from exc
    if not zones:
        raise EmptyDataset(f"{path}: no zones")
    return ZoneMap(tuple(zones))


# ---------------------------------------------------------------------------
# writers


def _write(path: str | Path, fmt: str | None, columns: tuple[str, ...], rows: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        if fmt == "csv":
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow(_csv_cell(row[c]) for c in columns)
        else:
            for row in rows:
                handle.write(json.dumps({c: row[c] for c in columns}, separators=(",", ":")) + "\n")


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, datetime):
        return format_timestamp(value)
    return str(value)


def _json_ready(row: dict[str, Any]) -> dict[str, Any]:
    return {k: format_timestamp(v) if isinstance(v, datetime) else v for k, v in row.items()}


def write_votes(path: str | Path, votes: Iterable[FeedbackVote], format: str | None = None) -> None:
    rows = (
        _json_ready(
            {
                "vote_id": v.vote_id,
                "occupant_id": v.occupant_id,
                "timestamp": v.timestamp,
                "thermal": v.thermal,
                "light": v.light,
                "noise": v.noise,
                "zone_id": v.zone_id,
            }
        )
        for v in votes
    )
    _write(path, format, VOTE_COLUMNS, rows)


def write_sensor_readings(path: str | Path, readings: Iterable[SensorReading], format: str | None = None) -> None:
    rows = (
        _json_ready(
            {
                "sensor_id": r.sensor_id,
                "zone_id": r.zone_id,
                "timestamp": r.timestamp,
                "temperature_c": r.temperature,
                "humidity_rh": r.humidity,
                "noise_db": r.noise_level,
                "illuminance_lux": r.illuminance,
            }
        )
        for r in readings
    )
    _write(path, format, SENSOR_COLUMNS, rows)


def write_localization(path: str | Path, fixes: Iterable[LocalizationFix], format: str | None = None) -> None:
    rows = (
        _json_ready(
            {
                "occupant_id": f.occupant_id,
                "timestamp": f.timestamp,
                "x_m": f.x,
                "y_m": f.y,
                "floor": f.floor,
                "zone_id": f.zone_id,
            }
        )
        for f in fixes
    )
    _write(path, format, LOCALIZATION_COLUMNS, rows)


def write_wearable(path: str | Path, samples: Iterable[WearableSample], format: str | None = None) -> None:
    rows = (
        _json_ready(
            {
                "occupant_id": w.occupant_id,
                "timestamp": w.timestamp,
                "near_body_temp_c": w.near_body_temperature,
                "heart_rate_bpm": w.heart_rate,
            }
        )
        for w in samples
    )
    _write(path, format, WEARABLE_COLUMNS, rows)


def write_zones(path: str | Path, zones: ZoneMap) -> None:
    features = []
    for z in zones:
        ring = [list(p) for p in z.polygon]
        ring.append(list(z.polygon[0]))
        features.append(
            {
                "type": "Feature",
                "properties": {"zone_id": z.zone_id, "floor": z.floor, "label": z.label},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def write_rejects(path: str | Path, rejects: Iterable[Reject]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["source", "line", "reason"])
        for r in rejects:
            writer.writerow([r.source, r.line, r.reason])
