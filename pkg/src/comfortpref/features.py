"""Feature matrices for preference classification.

Six feature groups are combined into feature sets: cyclical time, the
nearest environmental snapshot, near-body temperature, heart rate, the room's
vote-ratio history and the occupant's own vote-ratio history. Room and
history ratios are computed from the training records passed in, never from
the rows being encoded, so a temporal split stays leak-free.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .errors import DegenerateInput, EmptyMatrix, MalformedFile
from .schema import (
    DIMENSIONS,
    DIRECTIONAL,
    DIRECTIONAL_SHORT,
    check_dimension,
    format_float,
    format_timestamp,
    parse_float,
    parse_timestamp,
)

DEFAULT_TZ = "Asia/Singapore"

GROUPS = ("Time", "Env", "NearBody", "HeartRate", "Room", "History")
TIME_COLUMNS = ("hour_sin", "hour_cos", "dow_sin", "dow_cos")
ENV_COLUMNS = ("temperature", "humidity", "noise_level", "illuminance")
ROOM_COLUMNS = tuple(f"room_ratio_{s}" for s in DIRECTIONAL_SHORT)
HISTORY_COLUMNS = tuple(f"history_ratio_{s}" for s in DIRECTIONAL_SHORT)
ROOM_CLUSTER_COLUMN = "room_cluster"

# groups whose absence drops the row
SENSOR_GROUPS = ("Env", "NearBody", "HeartRate")


@dataclass(frozen=True)
class FeatureSetSpec:
    name: str
    include: frozenset[str]

    def __post_init__(self) -> None:
        unknown = set(self.include) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown feature groups {sorted(unknown)}")
        if "Time" not in self.include:
            raise ValueError("every feature set includes Time")
        object.__setattr__(self, "include", frozenset(self.include))

    @classmethod
    def of(cls, name: str, *groups: str) -> FeatureSetSpec:
        return cls(name, frozenset(groups))

    def without(self, group: str) -> FeatureSetSpec:
        return FeatureSetSpec(self.name, self.include - {group})

    def columns(self, room_encoding: str = "ratios") -> list[str]:
        cols: list[str] = []
        for group in GROUPS:
            if group not in self.include:
                continue
            if group == "Time":
                cols += TIME_COLUMNS
            elif group == "Env":
                cols += ENV_COLUMNS
            elif group == "NearBody":
                cols.append("near_body_temp")
            elif group == "HeartRate":
                cols.append("heart_rate")
            elif group == "Room":
                cols += ROOM_COLUMNS if room_encoding == "ratios" else (ROOM_CLUSTER_COLUMN,)
            else:
                cols += HISTORY_COLUMNS
        return cols

    def to_dict(self) -> dict:
        return {"name": self.name, "include": [g for g in GROUPS if g in self.include]}


DEFAULT_FEATURE_SETS: tuple[FeatureSetSpec, ...] = (
    FeatureSetSpec.of("FS1", "Time", "Env"),
    FeatureSetSpec.of("FS2", "Time", "Env", "NearBody", "HeartRate"),
    FeatureSetSpec.of("FS3", "Time", "NearBody", "HeartRate"),
    FeatureSetSpec.of("FS4", "Time", "NearBody", "HeartRate", "Room", "History"),
    FeatureSetSpec.of("FS5", "Time", "Env", "Room", "History"),
    FeatureSetSpec.of("FS6", *GROUPS),
)


def feature_set(name: str) -> FeatureSetSpec:
    for spec in DEFAULT_FEATURE_SETS:
        if spec.name == name:
            return spec
    raise KeyError(f"unknown feature set {name!r}")


@dataclass(frozen=True)
class FeatureRow:
    vote_id: str
    occupant_id: str
    target_dimension: str
    label: str
    values: dict[str, float]


@dataclass
class ExclusionStats:
    spec: str
    dimension: str
    input_rows: int
    kept: int
    by_group: dict[str, int] = field(default_factory=dict)

    @property
    def excluded(self) -> int:
        return self.input_rows - self.kept

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "dimension": self.dimension,
            "input_rows": self.input_rows,
            "kept": self.kept,
            "excluded": self.excluded,
            "by_group": dict(self.by_group),
        }


@dataclass
class FeatureMatrix:
    feature_names: list[str]
    X: np.ndarray
    y: np.ndarray
    vote_ids: list[str]
    occupant_ids: list[str]
    zone_ids: list[str]
    timestamps: list[datetime]
    dimension: str
    spec_name: str
    history_cold: np.ndarray
    room_cold: np.ndarray

    def __len__(self) -> int:
        return len(self.vote_ids)

    def rows(self) -> Iterator[FeatureRow]:
        for i, vid in enumerate(self.vote_ids):
            yield FeatureRow(
                vid,
                self.occupant_ids[i],
                self.dimension,
                str(self.y[i]),
                dict(zip(self.feature_names, map(float, self.X[i]))),
            )

    def subset(self, index: Sequence[int] | np.ndarray) -> FeatureMatrix:
        index = np.asarray(index, dtype=np.int64)
        return FeatureMatrix(
            self.feature_names,
            self.X[index],
            self.y[index],
            [self.vote_ids[i] for i in index],
            [self.occupant_ids[i] for i in index],
            [self.zone_ids[i] for i in index],
            [self.timestamps[i] for i in index],
            self.dimension,
            self.spec_name,
            self.history_cold[index],
            self.room_cold[index],
        )

    def select(self, vote_ids: Iterable[str]) -> FeatureMatrix:
        wanted = set(vote_ids)
        return self.subset([i for i, v in enumerate(self.vote_ids) if v in wanted])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(
                ["vote_id", "occupant_id", "zone_id", "timestamp", "label", "history_cold_start", "room_cold_start"]
                + self.feature_names
            )
            for i, vid in enumerate(self.vote_ids):
                writer.writerow(
                    [
                        vid,
                        self.occupant_ids[i],
                        self.zone_ids[i],
                        format_timestamp(self.timestamps[i]),
                        self.y[i],
                        int(self.history_cold[i]),
                        int(self.room_cold[i]),
                    ]
                    + [format_float(v) for v in self.X[i]]
                )

    @classmethod
    def from_csv(cls, path: str | Path, dimension: str, spec_name: str) -> FeatureMatrix:
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if not header or header[:7] != [
                "vote_id",
                "occupant_id",
                "zone_id",
                "timestamp",
                "label",
                "history_cold_start",
                "room_cold_start",
            ]:
                raise MalformedFile(f"{path}: not a feature matrix file")
            rows = list(reader)
        names = header[7:]
        X = np.array([[parse_float(v) for v in r[7:]] for r in rows], dtype=np.float64).reshape(len(rows), len(names))
        return cls(
            names,
            X,
            np.array([r[4] for r in rows], dtype=object),
            [r[0] for r in rows],
            [r[1] for r in rows],
            [r[2] for r in rows],
            [parse_timestamp(r[3]) for r in rows],
            dimension,
            spec_name,
            np.array([r[5] == "1" for r in rows], dtype=bool),
            np.array([r[6] == "1" for r in rows], dtype=bool),
        )


# ---------------------------------------------------------------------------
# encoders


@lru_cache(maxsize=None)
def _zone(tz: str) -> ZoneInfo:
    return ZoneInfo(tz)


def encode_time_cyclical(timestamp: datetime, tz: str = DEFAULT_TZ) -> tuple[float, float, float, float]:
    """(hour_sin, hour_cos, dow_sin, dow_cos) of the local wall-clock time.

    Hour is fractional; day-of-week counts from Monday = 0.
    """
    local = timestamp.astimezone(_zone(tz))
    hour = local.hour + local.minute / 60.0 + local.second / 3600.0
    dow = local.weekday()
    h = 2.0 * math.pi * hour / 24.0
    d = 2.0 * math.pi * dow / 7.0
    return (math.sin(h), math.cos(h), math.sin(d), math.cos(d))


def _vote(record):
    return getattr(record, "vote", record)


def _directional_row(vote) -> np.ndarray:
    return np.array([vote.preference(dim) == cls for dim, cls in DIRECTIONAL], dtype=np.float64)


class RatioTable:
    """Directional vote ratios per subject, built from training records only."""

    def __init__(self, subjects: Sequence[str], indicators: np.ndarray) -> None:
        self.ratios: dict[str, np.ndarray] = {}
        if len(subjects) == 0:
            return
        keys, inverse = np.unique(np.asarray(subjects, dtype=object).astype(str), return_inverse=True)
        sums = np.zeros((len(keys), indicators.shape[1]))
        np.add.at(sums, inverse, indicators)
        totals = np.bincount(inverse, minlength=len(keys)).astype(np.float64)
        for key, s, t in zip(keys, sums, totals):
            self.ratios[str(key)] = s / t

    def lookup(self, subject: str) -> tuple[np.ndarray, bool]:
        ratios = self.ratios.get(subject)
        if ratios is None:
            return np.zeros(len(DIRECTIONAL)), True
        return ratios, False


def _ratio_table(training_records: Iterable, key: str) -> RatioTable:
    recs = list(training_records)
    subjects = [rec.zone_id if key == "zone" else _vote(rec).occupant_id for rec in recs]
    ind = np.array([_directional_row(_vote(r)) for r in recs]).reshape(len(recs), len(DIRECTIONAL))
    return RatioTable(subjects, ind)


def encode_history(occupant_id: str, training_records: Iterable) -> tuple[tuple[float, ...], bool]:
    """Six directional response ratios of one occupant over the training records.

    Returns ``(ratios, cold_start)``; an occupant absent from the training
    records yields zeros and ``cold_start=True``.
    """
    ratios, cold = _ratio_table(training_records, "occupant").lookup(occupant_id)
    return tuple(float(r) for r in ratios), cold


def encode_room(zone_id: str, training_records: Iterable) -> tuple[tuple[float, ...], bool]:
    ratios, cold = _ratio_table(training_records, "zone").lookup(zone_id)
    return tuple(float(r) for r in ratios), cold


# ---------------------------------------------------------------------------
# matrix construction


class FeatureContext:
    """Per-record feature columns computed once and reused across many matrices.

    Evaluation builds hundreds of matrices over the same records with
    different training subsets; only the ratio groups depend on the subset.
    """

    def __init__(self, records: Sequence, tz: str = DEFAULT_TZ) -> None:
        self.records = list(records)
        self.tz = tz
        n = len(self.records)
        self.vote_ids = [r.vote_id for r in self.records]
        self.occupant_ids = [r.occupant_id for r in self.records]
        self.zone_ids = [r.zone_id for r in self.records]
        self.timestamps = [r.timestamp for r in self.records]
        self.position = {v: i for i, v in enumerate(self.vote_ids)}
        self.time = np.array([encode_time_cyclical(t, tz) for t in self.timestamps]).reshape(n, 4)
        self.env = np.full((n, 4), np.nan)
        self.near_body = np.full(n, np.nan)
        self.heart_rate = np.full(n, np.nan)
        for i, r in enumerate(self.records):
            if r.env is not None:
                self.env[i] = (r.env.temperature, r.env.humidity, r.env.noise_level, r.env.illuminance)
            if r.near_body_temperature is not None:
                self.near_body[i] = r.near_body_temperature.value
            if r.heart_rate is not None:
                self.heart_rate[i] = r.heart_rate.value
        self.directional = np.array([_directional_row(r.vote) for r in self.records]).reshape(n, len(DIRECTIONAL))
        self.labels = {
            dim: np.array([r.label(dim) for r in self.records], dtype=object) for dim in DIMENSIONS
        }
        self.available = {
            "Env": ~np.isnan(self.env).any(axis=1),
            "NearBody": ~np.isnan(self.near_body),
            "HeartRate": ~np.isnan(self.heart_rate),
        }

    def indices(self, vote_ids: Iterable[str]) -> np.ndarray:
        return np.array(sorted(self.position[v] for v in vote_ids), dtype=np.int64)

    def tables(self, train_index: np.ndarray) -> tuple[RatioTable, RatioTable]:
        ind = self.directional[train_index]
        occ = RatioTable([self.occupant_ids[i] for i in train_index], ind)
        room = RatioTable([self.zone_ids[i] for i in train_index], ind)
        return occ, room

    def matrix(
        self,
        spec: FeatureSetSpec,
        dimension: str,
        train_index: np.ndarray,
        rows: np.ndarray | None = None,
        room_encoding: str = "ratios",
        tables: tuple[RatioTable, RatioTable] | None = None,
    ) -> tuple[FeatureMatrix, ExclusionStats]:
        check_dimension(dimension)
        if room_encoding not in ("ratios", "cluster"):
            raise ValueError(f"unknown room encoding {room_encoding!r}")
        rows = np.arange(len(self.records)) if rows is None else np.asarray(rows, dtype=np.int64)
        keep = np.ones(len(rows), dtype=bool)
        by_group = {}
        for group in SENSOR_GROUPS:
            if group in spec.include:
                ok = self.available[group][rows]
                by_group[group] = int((~ok).sum())
                keep &= ok
        rows = rows[keep]
        stats = ExclusionStats(spec.name, dimension, len(keep), len(rows), by_group)

        occ_table, room_table = tables if tables is not None else self.tables(train_index)
        history_cold = np.zeros(len(rows), dtype=bool)
        room_cold = np.zeros(len(rows), dtype=bool)
        blocks = []
        for group in GROUPS:
            if group not in spec.include:
                continue
            if group == "Time":
                blocks.append(self.time[rows])
            elif group == "Env":
                blocks.append(self.env[rows])
            elif group == "NearBody":
                blocks.append(self.near_body[rows, None])
            elif group == "HeartRate":
                blocks.append(self.heart_rate[rows, None])
            elif group == "Room":
                if room_encoding == "ratios":
                    block = np.zeros((len(rows), len(DIRECTIONAL)))
                    for j, i in enumerate(rows):
                        block[j], room_cold[j] = room_table.lookup(self.zone_ids[i])
                else:
                    labels = _room_clusters(room_table)
                    block = np.zeros((len(rows), 1))
                    for j, i in enumerate(rows):
                        lab = labels.get(self.zone_ids[i])
                        room_cold[j] = lab is None
                        block[j, 0] = -1.0 if lab is None else float(lab)
                blocks.append(block)
            else:
                block = np.zeros((len(rows), len(DIRECTIONAL)))
                for j, i in enumerate(rows):
                    block[j], history_cold[j] = occ_table.lookup(self.occupant_ids[i])
                blocks.append(block)
        X = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
        fm = FeatureMatrix(
            spec.columns(room_encoding),
            np.ascontiguousarray(X, dtype=np.float64),
            self.labels[dimension][rows],
            [self.vote_ids[i] for i in rows],
            [self.occupant_ids[i] for i in rows],
            [self.zone_ids[i] for i in rows],
            [self.timestamps[i] for i in rows],
            dimension,
            spec.name,
            history_cold,
            room_cold,
        )
        return fm, stats


def _room_clusters(room_table: RatioTable) -> dict[str, int]:
    """Cluster label per training room from k-means over its directional ratios."""
    from .tendency import TendencyVector, kmeans_fit

    if not room_table.ratios:
        return {}
    # directional ratios padded into the nine-class layout (no_change slots zero)
    vectors = []
    for zone, r in sorted(room_table.ratios.items()):
        nine = (r[0], 0.0, r[1], r[2], 0.0, r[3], r[4], 0.0, r[5])
        vectors.append(TendencyVector(zone, "room", tuple(float(v) for v in nine), 1))
    distinct = len({v.ratios for v in vectors})
    for k in range(min(8, distinct), 0, -1):
        try:
            model = kmeans_fit(vectors, k=k, merge_empty=False)
        except DegenerateInput:
            continue
        return model.assignments
    return {}


def build_matrix(
    records: Sequence,
    spec: FeatureSetSpec,
    dimension: str,
    training_records: Iterable,
    tz: str = DEFAULT_TZ,
    room_encoding: str = "ratios",
) -> tuple[FeatureMatrix, ExclusionStats]:
    """Encode ``records`` under ``spec`` with ratio features drawn from ``training_records``.

    Rows missing a sensor group the feature set needs are dropped and counted in the
    returned :class:`ExclusionStats`; nothing is imputed.
    """
    ctx = FeatureContext(records, tz)
    training = list(training_records)
    tables = (_ratio_table(training, "occupant"), _ratio_table(training, "zone"))
    fm, stats = ctx.matrix(spec, dimension, np.zeros(0, dtype=np.int64), room_encoding=room_encoding, tables=tables)
    if len(fm) == 0:
        raise EmptyMatrix(f"no rows survive feature set {spec.name} for {dimension}")
    return fm, stats


def write_featuresets(path: str | Path, specs: Iterable[FeatureSetSpec], room_encoding: str = "ratios") -> None:
    doc = [dict(spec.to_dict(), columns=spec.columns(room_encoding)) for spec in specs]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
