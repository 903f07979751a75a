"""Evaluation protocol: temporal splits, individual and grouped models,
cold-start curves and per-zone preference forecasts."""

from __future__ import annotations

import csv
import json
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .errors import DegenerateLabels, EmptyZone, InsufficientOccupants
from .features import DEFAULT_TZ, FeatureContext, FeatureMatrix, FeatureSetSpec
from .forest import ForestConfig, RandomForestModel, fit_forest
from .metrics import classification_summary, f1_micro
from .schema import DIMENSIONS, check_dimension, format_float

MIN_VOTES = 5


@dataclass(frozen=True)
class EvalConfig:
    forest: ForestConfig = field(default_factory=ForestConfig)
    timezone: str = DEFAULT_TZ
    room_encoding: str = "ratios"
    training_scope: str = "train"  # "all" reproduces the leaky variant for comparison
    min_votes: int = MIN_VOTES
    history_mode: str = "zero"  # cold-start excluded runs: "zero" or "omit"
    permutations: int = 20
    seed: int = 0
    forecast_step: int = 1800
    support_window: int = 3600

    def __post_init__(self) -> None:
        if self.training_scope not in ("train", "all"):
            raise ValueError("training_scope must be 'train' or 'all'")
        if self.history_mode not in ("zero", "omit"):
            raise ValueError("history_mode must be 'zero' or 'omit'")
        if self.permutations < 1:
            raise ValueError("permutations must be >= 1")


# ---------------------------------------------------------------------------
# split


@dataclass
class SplitPlan:
    train: dict[str, list[str]]
    test: dict[str, list[str]]
    excluded: dict[str, int] = field(default_factory=dict)

    @property
    def occupants(self) -> list[str]:
        return sorted(self.train)

    @property
    def train_ids(self) -> set[str]:
        return {v for ids in self.train.values() for v in ids}

    @property
    def test_ids(self) -> set[str]:
        return {v for ids in self.test.values() for v in ids}

    def to_dict(self) -> dict:
        return {"train": self.train, "test": self.test, "excluded": self.excluded}

    @classmethod
    def from_dict(cls, doc: dict) -> SplitPlan:
        return cls(doc["train"], doc["test"], doc.get("excluded", {}))


def train_size(n: int) -> int:
    """ceil(0.6 * n) in integer arithmetic."""
    return (3 * n + 4) // 5


def temporal_split(records: Iterable, min_votes: int = MIN_VOTES) -> SplitPlan:
    """First 60% (rounded up) of each occupant's votes by time train, the rest test.

    Occupants with fewer than ``min_votes`` votes are left out and listed in
    ``excluded``.
    """
    by_occ: dict[str, list] = defaultdict(list)
    for rec in records:
        by_occ[rec.occupant_id].append(rec)
    train, test, excluded = {}, {}, {}
    for occ in sorted(by_occ):
        recs = sorted(by_occ[occ], key=lambda r: (r.timestamp, r.vote_id))
        if len(recs) < min_votes:
            excluded[occ] = len(recs)
            continue
        cut = train_size(len(recs))
        train[occ] = [r.vote_id for r in recs[:cut]]
        test[occ] = [r.vote_id for r in recs[cut:]]
    return SplitPlan(train, test, excluded)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ModelScore:
    dimension: str
    feature_set: str
    model_kind: str
    f1_micro: float
    micro_precision: float
    micro_recall: float
    per_class: dict
    labels: list[str]
    confusion: list[list[int]]
    n_train: int
    n_test: int
    per_occupant: dict[str, dict] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    exclusions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    entries: list[ModelScore] = field(default_factory=list)

    def get(self, dimension: str, feature_set: str, model_kind: str) -> ModelScore:
        for e in self.entries:
            if (e.dimension, e.feature_set, e.model_kind) == (dimension, feature_set, model_kind):
                return e
        raise KeyError((dimension, feature_set, model_kind))

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# shared workspace


class EvalData:
    """Records, split plan and cached per-record features for repeated evaluation."""

    def __init__(self, records: Sequence, cfg: EvalConfig | None = None, plan: SplitPlan | None = None) -> None:
        self.cfg = cfg or EvalConfig()
        self.records = list(records)
        self.plan = plan or temporal_split(self.records, self.cfg.min_votes)
        self.ctx = FeatureContext(self.records, self.cfg.timezone)
        self.train_rows = {o: self.ctx.indices(ids) for o, ids in self.plan.train.items()}
        self.test_rows = {o: self.ctx.indices(ids) for o, ids in self.plan.test.items()}
        self.all_train = self._rows(self.plan.occupants, self.train_rows)
        self.all_test = self._rows(self.plan.occupants, self.test_rows)

    @staticmethod
    def _rows(occupants: Iterable[str], table: dict[str, np.ndarray]) -> np.ndarray:
        parts = [table[o] for o in occupants]
        return np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def ratio_rows(self, train_rows: np.ndarray) -> np.ndarray:
        """Rows feeding room/history ratios (all planned rows in the leaky variant)."""
        if self.cfg.training_scope == "all":
            return np.sort(np.concatenate([self.all_train, self.all_test]))
        return train_rows

    def matrices(
        self, spec: FeatureSetSpec, dimension: str, train_rows: np.ndarray, test_rows: np.ndarray
    ) -> tuple[FeatureMatrix, FeatureMatrix, dict]:
        tables = self.ctx.tables(self.ratio_rows(train_rows))
        tr, tr_stats = self.ctx.matrix(spec, dimension, train_rows, train_rows, self.cfg.room_encoding, tables)
        te, te_stats = self.ctx.matrix(spec, dimension, train_rows, test_rows, self.cfg.room_encoding, tables)
        exclusions = {"train": tr_stats.to_dict(), "test": te_stats.to_dict()}
        return tr, te, exclusions


def _prepare(records, cfg: EvalConfig | None, plan: SplitPlan | None) -> EvalData:
    if isinstance(records, EvalData):
        return records
    return EvalData(records, cfg, plan)


def _fit(train: FeatureMatrix, cfg: EvalConfig) -> RandomForestModel:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateLabels)
        return fit_forest(train, cfg.forest)


def _can_fit(train: FeatureMatrix, cfg: EvalConfig) -> bool:
    return len(train) >= cfg.forest.min_samples_split


def _score(dimension, spec_name, kind, y_true, y_pred, n_train, n_test) -> ModelScore:
    summary = classification_summary(list(y_true), list(y_pred), DIMENSIONS[dimension])
    return ModelScore(dimension, spec_name, kind, n_train=n_train, n_test=n_test, **summary)


def train_grouped(
    records, spec: FeatureSetSpec, dimension: str, cfg: EvalConfig | None = None, plan: SplitPlan | None = None
) -> RandomForestModel:
    """The grouped model alone: one forest on every occupant's training rows."""
    data = _prepare(records, cfg, plan)
    train, _, _ = data.matrices(spec, check_dimension(dimension), data.all_train, data.all_test)
    return _fit(train, data.cfg)


def eval_grouped(
    records,
    spec: FeatureSetSpec,
    dimension: str,
    cfg: EvalConfig | None = None,
    plan: SplitPlan | None = None,
    model: RandomForestModel | None = None,
) -> ModelScore:
    """Pooled training rows of all occupants, scored on the pooled test rows."""
    data = _prepare(records, cfg, plan)
    check_dimension(dimension)
    train, test, exclusions = data.matrices(spec, dimension, data.all_train, data.all_test)
    if len(test) == 0 or not _can_fit(train, data.cfg):
        raise InsufficientOccupants(f"{spec.name}/{dimension}: no usable train or test rows")
    model = model or _fit(train, data.cfg)
    pred = model.predict(test.X, test.feature_names)
    score = _score(dimension, spec.name, "grouped", test.y, pred, len(train), len(test))
    by_occ: dict[str, list[int]] = defaultdict(list)
    for i, occ in enumerate(test.occupant_ids):
        by_occ[occ].append(i)
    n_train_occ = defaultdict(int)
    for occ in train.occupant_ids:
        n_train_occ[occ] += 1
    for occ in sorted(by_occ):
        rows = by_occ[occ]
        score.per_occupant[occ] = {
            "f1": f1_micro(list(test.y[rows]), list(pred[rows]), DIMENSIONS[dimension]),
            "n_test": len(rows),
            "n_train": n_train_occ[occ],
        }
    score.exclusions = exclusions
    return score


def eval_individual(
    records, spec: FeatureSetSpec, dimension: str, cfg: EvalConfig | None = None, plan: SplitPlan | None = None
) -> ModelScore:
    """One forest per occupant on that occupant's own training rows.

    The aggregate is micro-averaged over all occupants' test predictions.
    """
    data = _prepare(records, cfg, plan)
    check_dimension(dimension)
    train_all, test_all, exclusions = data.matrices(spec, dimension, data.all_train, data.all_test)
    y_true, y_pred = [], []
    per_occupant, skipped = {}, {}
    n_train_total = 0
    train_of = _group_rows(train_all.occupant_ids)
    test_of = _group_rows(test_all.occupant_ids)
    for occ in data.plan.occupants:
        tr = train_all.subset(train_of.get(occ, []))
        te = test_all.subset(test_of.get(occ, []))
        if not _can_fit(tr, data.cfg):
            skipped[occ] = "empty training matrix" if len(tr) == 0 else "too few training rows"
            continue
        if len(te) == 0:
            skipped[occ] = "empty test matrix"
            continue
        model = _fit(tr, data.cfg)
        pred = model.predict(te.X, te.feature_names)
        per_occupant[occ] = {
            "f1": f1_micro(list(te.y), list(pred), DIMENSIONS[dimension]),
            "n_test": len(te),
            "n_train": len(tr),
        }
        n_train_total += len(tr)
        y_true.extend(te.y)
        y_pred.extend(pred)
    if not y_true:
        raise InsufficientOccupants(f"{spec.name}/{dimension}: no occupant could be evaluated")
    score = _score(dimension, spec.name, "individual", y_true, y_pred, n_train_total, len(y_true))
    score.per_occupant = per_occupant
    score.skipped = skipped
    score.exclusions = exclusions
    return score


def _group_rows(occupants: Sequence[str]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = defaultdict(list)
    for i, o in enumerate(occupants):
        out[o].append(i)
    return out


def evaluate_all(
    records,
    specs: Sequence[FeatureSetSpec],
    dimensions: Sequence[str],
    cfg: EvalConfig | None = None,
    plan: SplitPlan | None = None,
    grouped_models: dict[tuple[str, str], RandomForestModel] | None = None,
) -> EvalReport:
    data = _prepare(records, cfg, plan)
    report = EvalReport()
    for dim in dimensions:
        for spec in specs:
            model = (grouped_models or {}).get((spec.name, dim))
            report.entries.append(eval_grouped(data, spec, dim, model=model))
            report.entries.append(eval_individual(data, spec, dim))
    return report


# ---------------------------------------------------------------------------
# cold start


@dataclass(frozen=True)
class ColdStartPoint:
    occupant: str
    dimension: str
    k: int
    f1_excluded: float
    f1_included: float
    runs: int


@dataclass
class ColdStartCurve:
    dimension: str
    feature_set: str
    permutations: int
    points: list[ColdStartPoint] = field(default_factory=list)

    def for_occupant(self, occupant: str) -> list[ColdStartPoint]:
        return [p for p in self.points if p.occupant == occupant]

    def mean_curve(self) -> dict[int, tuple[float, float]]:
        acc: dict[int, list] = defaultdict(list)
        for p in self.points:
            acc[p.k].append((p.f1_excluded, p.f1_included))
        return {k: tuple(np.mean(v, axis=0).tolist()) for k, v in sorted(acc.items())}


def coldstart_curve(
    records,
    spec: FeatureSetSpec,
    dimension: str,
    cfg: EvalConfig | None = None,
    permutations: int | None = None,
    seed: int | None = None,
    targets: Sequence[str] | None = None,
    ks: Sequence[int] | None = None,
    plan: SplitPlan | None = None,
) -> ColdStartCurve:
    """F1 on each target's test rows as k peers' training data are pooled.

    The excluded curve trains on k sampled peers only (the target's history
    features fall back to zeros, or are dropped with ``history_mode='omit'``);
    the included curve adds the target's own training rows. Both curves share
    the same sampled peer subsets.
    """
    data = _prepare(records, cfg, plan)
    check_dimension(dimension)
    cfg = data.cfg
    R = permutations if permutations is not None else cfg.permutations
    seed = cfg.seed if seed is None else seed
    occupants = data.plan.occupants
    n = len(occupants)
    if n < 2:
        raise InsufficientOccupants(f"cold-start needs at least 2 occupants, have {n}")
    ks = list(range(1, n)) if ks is None else sorted(set(ks))
    if any(k < 1 or k > n - 1 for k in ks):
        raise ValueError(f"k must lie in 1..{n - 1}")
    targets = occupants if targets is None else list(targets)
    spec_excluded = spec.without("History") if cfg.history_mode == "omit" and "History" in spec.include else spec

    cache: dict[tuple, float | None] = {}

    def run(peers: tuple[str, ...], target: str, include_target: bool) -> float | None:
        key = (peers, target, include_target)
        if key in cache:
            return cache[key]
        owners = list(peers) + ([target] if include_target else [])
        train_rows = EvalData._rows(owners, data.train_rows)
        s = spec if include_target else spec_excluded
        train, test, _ = data.matrices(s, dimension, train_rows, data.test_rows[target])
        result = None
        if len(test) and _can_fit(train, cfg):
            model = _fit(train, cfg)
            result = f1_micro(list(test.y), list(model.predict(test.X, test.feature_names)), DIMENSIONS[dimension])
        cache[key] = result
        return result

    curve = ColdStartCurve(dimension, spec.name, R)
    for target in targets:
        pos = occupants.index(target)
        others = [o for o in occupants if o != target]
        for k in ks:
            rng = np.random.default_rng([seed, pos, k])
            excluded, included = [], []
            for _ in range(R):
                peers = tuple(sorted(rng.choice(others, size=k, replace=False).tolist()))
                ex = run(peers, target, False)
                inc = run(peers, target, True)
                if ex is None or inc is None:
                    continue
                excluded.append(ex)
                included.append(inc)
            if excluded:
                curve.points.append(
                    ColdStartPoint(target, dimension, k, exact_mean(excluded), exact_mean(included), len(excluded))
                )
    return curve


def exact_mean(values: Sequence[float]) -> float:
    """Correctly rounded mean; the mean of identical values is that value."""
    return float(sum(map(Fraction, values)) / len(values))


def write_coldstart(path: str | Path, curves: Iterable[ColdStartCurve]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["occupant", "dimension", "feature_set", "k", "f1_excluded", "f1_included", "runs"])
        for curve in curves:
            for p in curve.points:
                writer.writerow(
                    [p.occupant, p.dimension, curve.feature_set, p.k, format_float(p.f1_excluded), format_float(p.f1_included), p.runs]
                )


# ---------------------------------------------------------------------------
# zone forecast


@dataclass(frozen=True)
class ForecastPoint:
    timestamp: datetime  # local wall-clock time in the representative week
    probabilities: dict[str, float]
    support: int

    @property
    def low_confidence(self) -> bool:
        return self.support == 0


@dataclass
class ZoneForecast:
    zone_id: str
    dimension: str
    classes: tuple[str, ...]
    points: list[ForecastPoint]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["timestamp", "weekday", *self.classes, "support", "low_confidence"])
            for p in self.points:
                writer.writerow(
                    [
                        p.timestamp.isoformat(),
                        p.timestamp.strftime("%a"),
                        *(format_float(p.probabilities[c]) for c in self.classes),
                        p.support,
                        int(p.low_confidence),
                    ]
                )


def _week_seconds(dt: datetime) -> int:
    return dt.weekday() * 86400 + dt.hour * 3600 + dt.minute * 60 + dt.second


def zone_forecast(
    records,
    zone_id: str,
    dimension: str,
    cfg: EvalConfig | None = None,
    step: int | None = None,
    include: Iterable[str] = ("Time",),
) -> ZoneForecast:
    """Class distribution over a representative Monday-Sunday week for one zone.

    A forest is trained on every fused vote left in the zone and queried on a
    regular grid. Each grid point carries ``support``: the zone's votes whose
    local time-of-week lies strictly within ``support_window`` seconds of it.
    Zero-support points are low-confidence extrapolations.
    """
    cfg = cfg or EvalConfig()
    check_dimension(dimension)
    step = step or cfg.forecast_step
    recs = [r for r in (records.records if isinstance(records, EvalData) else records) if r.zone_id == zone_id]
    if not recs:
        raise EmptyZone(f"zone {zone_id!r} has no votes")
    groups = set(include) | {"Time"}
    if groups - {"Time", "Room", "History"}:
        raise ValueError("forecast features are limited to Time, Room and History")
    spec = FeatureSetSpec("forecast", frozenset(groups))
    ctx = FeatureContext(recs, cfg.timezone)
    all_rows = np.arange(len(recs))
    train, _ = ctx.matrix(spec, dimension, all_rows, all_rows, cfg.room_encoding)
    model = _fit(train, cfg)

    tz = ZoneInfo(cfg.timezone)
    first = min(r.timestamp for r in recs).astimezone(tz)
    monday = datetime(first.year, first.month, first.day, tzinfo=tz) - timedelta(days=first.weekday())
    grid = [monday + timedelta(seconds=s) for s in range(0, 7 * 86400, step)]

    from .features import encode_time_cyclical

    columns = [np.array([encode_time_cyclical(g, cfg.timezone) for g in grid])]
    extra = train.X[:, 4:].mean(axis=0) if train.X.shape[1] > 4 else np.zeros(0)
    if len(extra):
        # non-time columns are held at the zone's training mean (an average occupant)
        columns.append(np.tile(extra, (len(grid), 1)))
    proba = model.predict_proba(np.hstack(columns), train.feature_names)

    vote_tow = np.array([_week_seconds(r.timestamp.astimezone(tz)) for r in recs])
    week = 7 * 86400
    classes = DIMENSIONS[dimension]
    points = []
    for g, row in zip(grid, proba):
        delta = np.abs(vote_tow - _week_seconds(g))
        delta = np.minimum(delta, week - delta)
        support = int((delta < cfg.support_window).sum())
        probs = {c: 0.0 for c in classes}
        for label, p in zip(model.class_labels, row):
            probs[label] = float(p)
        points.append(ForecastPoint(g, probs, support))
    return ZoneForecast(zone_id, dimension, classes, points)


# ---------------------------------------------------------------------------
# sensor distributions by vote


SUMMARY_VARIABLES = ("temperature", "humidity", "noise_level", "illuminance", "near_body_temp", "heart_rate")


def sensor_summary(records: Iterable) -> list[dict]:
    """Per (dimension, class, variable) distribution statistics of the fused sensors."""
    values: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    for r in records:
        observed = {}
        if r.env is not None:
            observed.update(
                temperature=r.env.temperature,
                humidity=r.env.humidity,
                noise_level=r.env.noise_level,
                illuminance=r.env.illuminance,
            )
        if r.near_body_temperature is not None:
            observed["near_body_temp"] = r.near_body_temperature.value
        if r.heart_rate is not None:
            observed["heart_rate"] = r.heart_rate.value
        for dim in DIMENSIONS:
            for var, v in observed.items():
                values[(dim, r.label(dim), var)].append(v)
    rows = []
    for dim, classes in DIMENSIONS.items():
        for cls in classes:
            for var in SUMMARY_VARIABLES:
                vals = np.array(values.get((dim, cls, var), []))
                if len(vals) == 0:
                    continue
                q = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0])
                rows.append(
                    {
                        "dimension": dim,
                        "class": cls,
                        "variable": var,
                        "count": len(vals),
                        "mean": float(vals.mean()),
                        "std": float(vals.std()),
                        "min": float(q[0]),
                        "q25": float(q[1]),
                        "median": float(q[2]),
                        "q75": float(q[3]),
                        "max": float(q[4]),
                    }
                )
    return rows


def write_sensor_summary(path: str | Path, rows: list[dict]) -> None:
    cols = ["dimension", "class", "variable", "count", "mean", "std", "min", "q25", "median", "q75", "max"]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([format_float(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
