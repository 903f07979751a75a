"""Synthetic buildings, occupants and vote streams with known ground truth.

Each vote's class comes from an axis-aligned threshold rule on the zone's
sensor reading at the vote instant, shifted by the occupant's archetype
bias, then flipped to another class with probability ``response_noise``.
Votes fall on the sensor reporting grid, so the fused environment snapshot
is exactly the value the rule saw.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from .errors import InvalidConfig
from .ingest import (
    FeedbackVote,
    LocalizationFix,
    SensorReading,
    WearableSample,
    Zone,
    ZoneMap,
    write_localization,
    write_sensor_readings,
    write_votes,
    write_wearable,
    write_zones,
)
from .schema import DIMENSIONS


@dataclass(frozen=True)
class Archetype:
    name: str
    thermal_bias: float = 0.0  # degC added to both thermal thresholds
    light_bias: float = 0.0  # lux
    noise_bias: float = 0.0  # dB
    response_noise: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.response_noise < 0.5:
            raise InvalidConfig(f"archetype {self.name!r}: response_noise must lie in [0, 0.5)")


@dataclass(frozen=True)
class ZoneSchedule:
    zone_id: str
    label: str
    floor: int
    rect: tuple[float, float, float, float]  # x0, y0, x1, y1 in meters
    base_temp: float = 24.5
    temp_amplitude: float = 2.5  # negative: coldest at temp_peak_hour
    temp_peak_hour: float = 15.0
    lux_day: float = 500.0
    lux_night: float = 20.0
    noise_base: float = 48.0
    noise_burst_db: float = 15.0
    noise_burst_prob: float = 0.1


@dataclass(frozen=True)
class Thresholds:
    thermal: tuple[float, float] = (22.0, 26.0)  # warmer below, cooler above
    light: tuple[float, float] = (250.0, 750.0)  # brighter below, dimmer above
    noise: tuple[float, float] = (30.0, 55.0)  # louder below (if enabled), quieter above


DEFAULT_ARCHETYPES = (
    Archetype("neutral"),
    Archetype("runs_hot", thermal_bias=-2.5, light_bias=-200.0, noise_bias=-7.0),
    Archetype("runs_cold", thermal_bias=2.5, light_bias=200.0, noise_bias=7.0),
)

_ZONE_TEMPLATES = (
    # label, base temp, amplitude, peak hour, daytime lux, base noise
    ("office", 23.5, -2.5, 13.0, 420.0, 47.0),
    ("studio", 25.0, 2.0, 15.0, 650.0, 52.0),
    ("meeting room", 24.0, 1.5, 11.0, 300.0, 44.0),
    ("outdoor seating", 28.0, 3.0, 14.0, 950.0, 58.0),
    ("lounge", 25.5, 2.0, 16.0, 200.0, 50.0),
    ("lab", 22.5, 1.0, 12.0, 800.0, 55.0),
)


def default_zones(n_zones: int) -> tuple[ZoneSchedule, ...]:
    zones = []
    for i in range(n_zones):
        label, base, amp, peak, lux, noise = _ZONE_TEMPLATES[i % len(_ZONE_TEMPLATES)]
        floor = 1 + i // 4
        col = i % 4
        rect = (col * 12.0, 0.0, col * 12.0 + 10.0, 8.0)
        zones.append(
            ZoneSchedule(
                zone_id=f"z{i + 1:02d}",
                label=label if i < len(_ZONE_TEMPLATES) else f"{label} {i + 1}",
                floor=floor,
                rect=rect,
                base_temp=base,
                temp_amplitude=amp,
                temp_peak_hour=peak,
                lux_day=lux,
                noise_base=noise,
            )
        )
    return tuple(zones)


@dataclass(frozen=True)
class SimConfig:
    n_occupants: int = 30
    n_zones: int = 6
    days: int = 14
    votes_per_day: tuple[int, int] = (5, 15)
    archetypes: tuple[Archetype, ...] = DEFAULT_ARCHETYPES
    archetype_mix: tuple[float, ...] | None = None  # weights; None = equal shares
    zones: tuple[ZoneSchedule, ...] | None = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    allow_louder: bool = False
    start_date: str = "2019-09-02"  # a Monday
    timezone: str = "Asia/Singapore"
    vote_hours: tuple[float, float] = (8.0, 20.0)
    weekdays_only: bool = False
    reading_interval: int = 300
    home_zone_prob: float = 0.5
    fix_dropout: float = 0.0
    sensor_dropout: float = 0.0
    wearable_dropout: float = 0.0
    pre_resolved_fix_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.votes_per_day
        if not (1 <= lo <= hi <= 50):
            raise InvalidConfig("votes_per_day must satisfy 1 <= low <= high <= 50")
        if self.n_occupants < 1 or self.n_zones < 1 or self.days < 1:
            raise InvalidConfig("n_occupants, n_zones and days must be positive")
        if not self.archetypes:
            raise InvalidConfig("at least one archetype is required")
        if self.archetype_mix is not None:
            if len(self.archetype_mix) != len(self.archetypes) or min(self.archetype_mix) < 0 or sum(self.archetype_mix) <= 0:
                raise InvalidConfig("archetype_mix needs one non-negative weight per archetype")
        if self.zones is not None and len(self.zones) != self.n_zones:
            raise InvalidConfig("zones must list n_zones schedules")
        start_h, end_h = self.vote_hours
        if not 0.0 <= start_h < end_h <= 24.0:
            raise InvalidConfig("vote_hours must satisfy 0 <= start < end <= 24")
        if self.reading_interval <= 0 or 86400 % self.reading_interval:
            raise InvalidConfig("reading_interval must divide a day")
        slots = len(_vote_slots(self))
        if slots < hi:
            raise InvalidConfig(f"only {slots} vote slots per day for up to {hi} votes")
        for name in ("home_zone_prob", "fix_dropout", "sensor_dropout", "wearable_dropout", "pre_resolved_fix_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must be a probability")

    def zone_schedules(self) -> tuple[ZoneSchedule, ...]:
        return self.zones if self.zones is not None else default_zones(self.n_zones)


@dataclass
class GroundTruth:
    archetype_of: dict[str, str]
    archetypes: dict[str, dict]
    home_zone: dict[str, str]
    clean_labels: dict[str, dict[str, str]]  # vote_id -> dimension -> rule class
    flipped: list[str]
    thresholds: dict
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Simulation:
    votes: list[FeedbackVote]
    readings: list[SensorReading]
    fixes: list[LocalizationFix]
    wearables: list[WearableSample]
    zones: ZoneMap
    truth: GroundTruth


def _vote_slots(cfg: SimConfig) -> list[int]:
    """Seconds after local midnight at which votes may fall."""
    step = cfg.reading_interval
    start_h, end_h = cfg.vote_hours
    first = math.ceil(start_h * 3600 / step) * step
    return [s for s in range(first, int(end_h * 3600), step)]


def rule_class(dimension: str, value: float, arch: Archetype, thresholds: Thresholds, allow_louder: bool) -> str:
    """Noise-free preference implied by a sensor value and an archetype."""
    if dimension == "thermal":
        lo, hi = thresholds.thermal
        bias = arch.thermal_bias
        if value > hi + bias:
            return "prefer_cooler"
        if value < lo + bias:
            return "prefer_warmer"
        return "no_change"
    if dimension == "light":
        lo, hi = thresholds.light
        bias = arch.light_bias
        if value > hi + bias:
            return "prefer_dimmer"
        if value < lo + bias:
            return "prefer_brighter"
        return "no_change"
    lo, hi = thresholds.noise
    bias = arch.noise_bias
    if value > hi + bias:
        return "prefer_quieter"
    if allow_louder and value < lo + bias:
        return "prefer_louder"
    return "no_change"


def _assign_archetypes(cfg: SimConfig, rng: np.random.Generator) -> list[int]:
    weights = np.asarray(cfg.archetype_mix or [1.0] * len(cfg.archetypes), dtype=float)
    quota = weights / weights.sum() * cfg.n_occupants
    counts = np.floor(quota).astype(int)
    # largest remainder, ties to the earlier archetype
    for i in np.argsort(-(quota - counts), kind="stable")[: cfg.n_occupants - counts.sum()]:
        counts[i] += 1
    labels = [i for i, c in enumerate(counts) for _ in range(c)]
    rng.shuffle(labels)
    return labels


def _environment(cfg: SimConfig, zone: ZoneSchedule, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    """(n_slots, 4) array of temperature, humidity, noise, illuminance."""
    per_day = 86400 // cfg.reading_interval
    hours = (np.arange(n_slots) % per_day) * cfg.reading_interval / 3600.0
    day = np.arange(n_slots) // per_day
    day_offset = rng.normal(0.0, 0.6, size=cfg.days)[day]
    temp = (
        zone.base_temp
        + zone.temp_amplitude * np.cos(2 * np.pi * (hours - zone.temp_peak_hour) / 24.0)
        + day_offset
        + rng.normal(0.0, 0.25, size=n_slots)
    )
    humidity = np.clip(65.0 - 2.0 * (temp - 25.0) + rng.normal(0.0, 2.0, size=n_slots), 20.0, 95.0)
    daylight = (hours >= 7.0) & (hours <= 19.0)
    shape = np.where(daylight, np.sin(np.pi * np.clip(hours - 7.0, 0.0, 12.0) / 12.0), 0.0)
    lux = zone.lux_night + (zone.lux_day - zone.lux_night) * (0.35 + 0.65 * shape) * daylight
    lux = np.clip(lux + rng.normal(0.0, 40.0, size=n_slots) * daylight, 0.0, None)
    busy = ((hours >= 9.0) & (hours <= 18.0)).astype(float)
    bursts = (rng.random(n_slots) < zone.noise_burst_prob) * zone.noise_burst_db
    noise = np.clip(zone.noise_base - 8.0 + 6.0 * busy + bursts + rng.normal(0.0, 2.5, size=n_slots), 20.0, 110.0)
    return np.round(np.stack([temp, humidity, noise, lux], axis=1), 2)


def simulate(cfg: SimConfig | None = None) -> Simulation:
    cfg = cfg or SimConfig()
    rng = np.random.default_rng(cfg.seed)
    tz = ZoneInfo(cfg.timezone)
    start = date.fromisoformat(cfg.start_date)
    step = cfg.reading_interval
    per_day = 86400 // step
    n_slots = cfg.days * per_day
    schedules = cfg.zone_schedules()
    thresholds = cfg.thresholds

    zone_map = ZoneMap(
        tuple(
            Zone(
                s.zone_id,
                s.floor,
                ((s.rect[0], s.rect[1]), (s.rect[2], s.rect[1]), (s.rect[2], s.rect[3]), (s.rect[0], s.rect[3])),
                s.label,
            )
            for s in schedules
        )
    )

    day_starts = [
        datetime.combine(start + timedelta(days=d), datetime.min.time(), tzinfo=tz).astimezone(timezone.utc)
        for d in range(cfg.days)
    ]

    def slot_time(slot: int) -> datetime:
        return day_starts[slot // per_day] + timedelta(seconds=(slot % per_day) * step)

    env = {s.zone_id: _environment(cfg, s, n_slots, rng) for s in schedules}
    readings = []
    for s in schedules:
        values = env[s.zone_id]
        keep = rng.random(n_slots) >= cfg.sensor_dropout
        for slot in np.flatnonzero(keep):
            t, h, nz, lx = values[slot]
            readings.append(
                SensorReading(f"s-{s.zone_id}", s.zone_id, slot_time(int(slot)), float(t), float(h), float(nz), float(lx))
            )

    arche_idx = _assign_archetypes(cfg, rng)
    occupants = [f"occ{i + 1:02d}" for i in range(cfg.n_occupants)]
    zone_ids = [s.zone_id for s in schedules]
    home = {o: zone_ids[int(rng.integers(len(zone_ids)))] for o in occupants}
    slots = _vote_slots(cfg)
    lo, hi = cfg.votes_per_day
    dims = list(DIMENSIONS)
    allowed = {
        dim: [c for c in classes if cfg.allow_louder or c != "prefer_louder"] for dim, classes in DIMENSIONS.items()
    }

    votes, fixes, wearables = [], [], []
    clean: dict[str, dict[str, str]] = {}
    flipped: list[str] = []
    counter = 0
    for occ, a_idx in zip(occupants, arche_idx):
        arch = cfg.archetypes[a_idx]
        nbt_offset = rng.normal(0.0, 0.5)
        hr_base = rng.uniform(60.0, 80.0)
        for d in range(cfg.days):
            if cfg.weekdays_only and (start + timedelta(days=d)).weekday() >= 5:
                continue
            n_votes = int(rng.integers(lo, hi + 1))
            chosen = np.sort(rng.choice(len(slots), size=n_votes, replace=False))
            for c in chosen:
                slot = d * per_day + slots[c] // step
                if len(zone_ids) > 1 and rng.random() >= cfg.home_zone_prob:
                    others = [z for z in zone_ids if z != home[occ]]
                    zone = others[int(rng.integers(len(others)))]
                else:
                    zone = home[occ]
                temp, _, noise_db, lux = env[zone][slot]
                observed = {"thermal": temp, "light": lux, "noise": noise_db}
                counter += 1
                vid = f"v{counter:06d}"
                labels = {}
                truth = {}
                for dim in dims:
                    cls = rule_class(dim, float(observed[dim]), arch, thresholds, cfg.allow_louder)
                    truth[dim] = cls
                    if rng.random() < arch.response_noise:
                        alternatives = [x for x in allowed[dim] if x != cls]
                        cls = alternatives[int(rng.integers(len(alternatives)))]
                        flipped.append(f"{vid}:{dim}")
                    labels[dim] = cls
                ts = slot_time(slot)
                votes.append(FeedbackVote(vid, occ, ts, labels["thermal"], labels["light"], labels["noise"]))
                clean[vid] = truth

                if rng.random() >= cfg.fix_dropout:
                    fix_t = ts + timedelta(seconds=int(rng.integers(-120, 121)))
                    if rng.random() < cfg.pre_resolved_fix_prob:
                        fixes.append(LocalizationFix(occ, fix_t, zone_id=zone))
                    else:
                        x0, y0, x1, y1 = next(s.rect for s in schedules if s.zone_id == zone)
                        x = round(float(rng.uniform(x0 + 0.5, x1 - 0.5)), 2)
                        y = round(float(rng.uniform(y0 + 0.5, y1 - 0.5)), 2)
                        floor = next(s.floor for s in schedules if s.zone_id == zone)
                        fixes.append(LocalizationFix(occ, fix_t, x, y, floor))
                if rng.random() >= cfg.wearable_dropout:
                    w_t = ts + timedelta(seconds=int(rng.integers(-60, 61)))
                    nbt = 31.0 + 0.3 * (temp - 25.0) + nbt_offset + rng.normal(0.0, 0.3)
                    hr = hr_base + rng.normal(0.0, 5.0)
                    wearables.append(
                        WearableSample(occ, w_t, round(float(np.clip(nbt, 10.0, 45.0)), 1), round(float(np.clip(hr, 25.0, 230.0)), 1))
                    )

    truth = GroundTruth(
        archetype_of={o: cfg.archetypes[i].name for o, i in zip(occupants, arche_idx)},
        archetypes={a.name: asdict(a) for a in cfg.archetypes},
        home_zone=home,
        clean_labels=clean,
        flipped=flipped,
        thresholds=asdict(thresholds),
        config=_config_dict(cfg),
    )
    votes.sort(key=lambda v: (v.occupant_id, v.timestamp, v.vote_id))
    readings.sort(key=lambda r: (r.zone_id, r.timestamp, r.sensor_id))
    fixes.sort(key=lambda f: (f.occupant_id, f.timestamp))
    wearables.sort(key=lambda w: (w.occupant_id, w.timestamp))
    return Simulation(votes, readings, fixes, wearables, zone_map, truth)


def _config_dict(cfg: SimConfig) -> dict:
    doc = asdict(replace(cfg, zones=cfg.zone_schedules()))
    return json.loads(json.dumps(doc))


def write_simulation(out_dir: str | Path, sim: Simulation) -> dict[str, Path]:
    """Write the canonical input files plus ground_truth.json; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "votes": out / "votes.csv",
        "sensors": out / "sensors.csv",
        "localization": out / "localization.csv",
        "wearable": out / "wearable.csv",
        "zones": out / "zones.geojson",
        "ground_truth": out / "ground_truth.json",
    }
    write_votes(paths["votes"], sim.votes)
    write_sensor_readings(paths["sensors"], sim.readings)
    write_localization(paths["localization"], sim.fixes)
    write_wearable(paths["wearable"], sim.wearables)
    write_zones(paths["zones"], sim.zones)
    paths["ground_truth"].write_text(json.dumps(sim.truth.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths
