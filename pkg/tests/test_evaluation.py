import json
from collections import Counter
from datetime import timedelta
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comfortpref.errors import EmptyZone, InsufficientOccupants
from comfortpref.evaluation import (
    EvalConfig,
    EvalData,
    coldstart_curve,
    eval_grouped,
    eval_individual,
    evaluate_all,
    exact_mean,
    sensor_summary,
    temporal_split,
    train_grouped,
    train_size,
    write_coldstart,
    zone_forecast,
)
from comfortpref.features import feature_set
from comfortpref.forest import ForestConfig
from comfortpref.fusion import FusedRecord, fuse_dataset
from comfortpref.ingest import FeedbackVote
from comfortpref.synth import DEFAULT_ARCHETYPES, Archetype, SimConfig, simulate

from conftest import T0, make_record

FS1, FS4, FS6 = feature_set("FS1"), feature_set("FS4"), feature_set("FS6")


@lru_cache(maxsize=None)
def synth_records(n_occupants=6, days=10, seed=0, archetypes=None, noise=0.0, **kw):
    archetypes = archetypes or DEFAULT_ARCHETYPES
    archetypes = tuple(Archetype(a.name, a.thermal_bias, a.light_bias, a.noise_bias, noise) for a in archetypes)
    sim = simulate(SimConfig(n_occupants=n_occupants, days=days, archetypes=archetypes, seed=seed, **dict(kw)))
    records, _ = fuse_dataset(sim.votes, sim.fixes, sim.readings, sim.wearables, sim.zones)
    return tuple(records), sim.truth


def cfg(n_trees=30, **kw):
    return EvalConfig(forest=ForestConfig(n_trees=n_trees), **kw)


# ---------------------------------------------------------------------------
# split


def votes_for(occupant, n, start=T0):
    return [make_record(f"{occupant}-{i}", occupant=occupant, ts=start + timedelta(hours=i)) for i in range(n)]


def test_split_sizes():
    plan = temporal_split(votes_for("a", 10) + votes_for("b", 5) + votes_for("c", 4))
    assert len(plan.train["a"]) == 6 and len(plan.test["a"]) == 4
    assert len(plan.train["b"]) == 3 and len(plan.test["b"]) == 2
    assert plan.excluded == {"c": 4} and plan.occupants == ["a", "b"]


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 10_000))
def test_train_size_is_ceiling(n):
    assert train_size(n) == -(-3 * n // 5) == int(np.ceil(0.6 * n - 1e-9))


@settings(max_examples=50, deadline=None)
@given(offsets=st.lists(st.integers(0, 10**6), min_size=5, max_size=40))
def test_split_respects_time(offsets):
    recs = [make_record(f"v{i}", ts=T0 + timedelta(seconds=o)) for i, o in enumerate(offsets)]
    plan = temporal_split(recs)
    when = {r.vote_id: r.timestamp for r in recs}
    assert max(when[v] for v in plan.train["occ01"]) <= min(when[v] for v in plan.test["occ01"])
    assert len(plan.train["occ01"]) + len(plan.test["occ01"]) == len(recs)


# ---------------------------------------------------------------------------
# grouped and individual models


def test_individual_models_learn_personal_rules():
    # every split may consult temperature, the variable the planted rule thresholds
    records, _ = synth_records(n_occupants=6, days=14)
    score = eval_individual(records, FS1, "thermal", EvalConfig(forest=ForestConfig(n_trees=50, max_features="all")))
    assert score.skipped == {}
    assert min(v["f1"] for v in score.per_occupant.values()) >= 0.95


def test_individual_aggregate_is_convex_combination():
    records, _ = synth_records(n_occupants=6, days=10, noise=0.2)
    score = eval_individual(records, FS6, "light", cfg())
    per = score.per_occupant.values()
    assert min(v["f1"] for v in per) <= score.f1_micro <= max(v["f1"] for v in per)
    weighted = sum(v["f1"] * v["n_test"] for v in per) / sum(v["n_test"] for v in per)
    assert score.f1_micro == pytest.approx(weighted, abs=1e-12)


def test_single_class_occupant_scores_class_frequency():
    recs = []
    for i in range(10):
        thermal = "no_change" if i < 8 else "prefer_cooler"
        recs.append(make_record(f"v{i}", ts=T0 + timedelta(hours=i), thermal=thermal))
    score = eval_individual(recs, FS1, "thermal", cfg(n_trees=3))
    # training labels all no_change; test holds 2 no_change and 2 prefer_cooler
    assert score.per_occupant["occ01"]["f1"] == 0.5


def test_grouped_matches_individual_with_one_occupant():
    records, _ = synth_records(n_occupants=1, days=10, noise=0.1)
    g = eval_grouped(records, FS6, "thermal", cfg())
    i = eval_individual(records, FS6, "thermal", cfg())
    assert g.f1_micro == i.f1_micro and g.confusion == i.confusion


def test_grouped_not_worse_on_shared_archetype():
    records, _ = synth_records(n_occupants=8, days=14, archetypes=(Archetype("shared"),), noise=0.1, seed=1)
    c = cfg(n_trees=50)
    for dim in ("thermal", "light", "noise"):
        g = eval_grouped(records, FS6, dim, c)
        i = eval_individual(records, FS6, dim, c)
        assert g.f1_micro >= i.f1_micro - 0.02


def test_disjoint_archetypes_report_is_well_formed():
    records, _ = synth_records(n_occupants=6, days=8, noise=0.1, seed=3)
    report = evaluate_all(records, [FS1, FS4], ["thermal"], cfg(n_trees=10))
    assert len(report.entries) == 4
    doc = json.loads(json.dumps(report.to_dict()))
    for entry in doc["entries"]:
        assert 0.0 <= entry["f1_micro"] <= 1.0
        assert sum(map(sum, entry["confusion"])) == entry["n_test"]
    assert report.get("thermal", "FS4", "individual").model_kind == "individual"


def test_test_labels_do_not_reach_the_model():
    records, _ = synth_records(n_occupants=5, days=8, noise=0.1, seed=5)
    plan = temporal_split(records)
    test_ids = plan.test_ids
    flip = {"prefer_cooler": "prefer_warmer", "prefer_warmer": "no_change", "no_change": "prefer_cooler"}
    perturbed = []
    for r in records:
        if r.vote_id in test_ids:
            v = r.vote
            v = FeedbackVote(v.vote_id, v.occupant_id, v.timestamp, flip[v.thermal], "prefer_dimmer", "prefer_quieter", v.zone_id)
            r = FusedRecord(v, r.zone_id, r.env, r.near_body_temperature, r.heart_rate)
        perturbed.append(r)
    for dim in ("thermal", "light"):
        a = train_grouped(records, FS6, dim, cfg(n_trees=10))
        b = train_grouped(perturbed, FS6, dim, cfg(n_trees=10))
        assert a.to_bytes() == b.to_bytes()


def test_leaky_scope_differs():
    records, _ = synth_records(n_occupants=5, days=8, noise=0.2, seed=5)
    data = EvalData(records, cfg(training_scope="all"))
    strict = EvalData(records, cfg())
    a, _, _ = data.matrices(FS4, "thermal", data.all_train, data.all_test)
    b, _, _ = strict.matrices(FS4, "thermal", strict.all_train, strict.all_test)
    assert not np.array_equal(a.X, b.X)


# ---------------------------------------------------------------------------
# cold start


def test_coldstart_limit_equals_grouped():
    records, _ = synth_records(n_occupants=5, days=8, archetypes=(Archetype("shared"),), noise=0.1, seed=2)
    c = cfg(n_trees=15, permutations=3)
    data = EvalData(records, c)
    curve = coldstart_curve(data, FS6, "thermal")
    grouped = eval_grouped(data, FS6, "thermal")
    n = len(data.plan.occupants)
    for occ in data.plan.occupants:
        last = [p for p in curve.for_occupant(occ) if p.k == n - 1]
        assert len(last) == 1 and last[0].f1_included == grouped.per_occupant[occ]["f1"]
    assert sorted(curve.mean_curve()) == list(range(1, n))


def test_coldstart_is_deterministic(tmp_path):
    records, _ = synth_records(n_occupants=4, days=6, noise=0.1, seed=9)
    c = cfg(n_trees=5, permutations=2)
    a = coldstart_curve(records, FS4, "light", c, ks=[1, 2])
    b = coldstart_curve(records, FS4, "light", c, ks=[1, 2])
    write_coldstart(tmp_path / "a.csv", [a])
    write_coldstart(tmp_path / "b.csv", [b])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header.startswith("occupant,dimension,feature_set,k,f1_excluded,f1_included")


def test_coldstart_needs_two_occupants():
    records, _ = synth_records(n_occupants=1, days=6)
    with pytest.raises(InsufficientOccupants):
        coldstart_curve(records, FS4, "thermal", cfg(n_trees=2))


def test_opposite_peer_is_no_better_than_majority():
    hot, cold = DEFAULT_ARCHETYPES[1], DEFAULT_ARCHETYPES[2]
    records, truth = synth_records(n_occupants=2, days=14, archetypes=(hot, cold), seed=4)
    data = EvalData(records, cfg(n_trees=30, permutations=1))
    curve = coldstart_curve(data, FS1, "thermal")
    for occ in data.plan.occupants:
        (point,) = curve.for_occupant(occ)
        test_labels = [r.label("thermal") for r in records if r.vote_id in set(data.plan.test[occ])]
        majority = Counter(test_labels).most_common(1)[0][1] / len(test_labels)
        assert point.f1_excluded <= majority


def test_history_omit_mode_runs():
    records, _ = synth_records(n_occupants=3, days=6, seed=6)
    curve = coldstart_curve(records, FS4, "thermal", cfg(n_trees=3, permutations=1, history_mode="omit"), ks=[1])
    assert len(curve.points) == 3


def test_exact_mean():
    assert exact_mean([0.1] * 7) == 0.1
    assert exact_mean([0.25, 0.75]) == 0.5


# ---------------------------------------------------------------------------
# zone forecast


def test_forecast_support_outside_vote_hours():
    records, _ = synth_records(n_occupants=6, days=14, vote_hours=(9.0, 18.0), weekdays_only=True, seed=1)
    fc = zone_forecast(records, "z02", "thermal", cfg(n_trees=20))
    assert len(fc.points) == 7 * 48
    night = [p for p in fc.points if p.timestamp.hour >= 22 or p.timestamp.hour < 7]
    assert night and all(p.support == 0 and p.low_confidence for p in night)
    weekend = [p for p in fc.points if p.timestamp.weekday() >= 5]
    assert all(p.support == 0 for p in weekend)
    day = [p for p in fc.points if p.timestamp.weekday() < 5 and 10 <= p.timestamp.hour < 17]
    assert all(p.support > 0 for p in day)
    for p in fc.points:
        assert sum(p.probabilities.values()) == pytest.approx(1.0)


def test_forecast_constant_zone():
    recs = [make_record(f"v{i}", ts=T0 + timedelta(minutes=45 * i), zone="zq") for i in range(30)]
    fc = zone_forecast(recs, "zq", "noise", cfg(n_trees=5))
    assert all(p.probabilities["no_change"] == 1.0 for p in fc.points)


def test_forecast_finds_midday_warmer_peak():
    # the office zone dips coldest around 13:00 local
    records, _ = synth_records(n_occupants=8, days=14, home_zone_prob=1.0, n_zones=1, seed=3)
    fc = zone_forecast(records, "z01", "thermal", cfg(n_trees=50))
    weekday = [p for p in fc.points if p.timestamp.weekday() == 2 and 8 <= p.timestamp.hour < 20]
    peak = max(weekday, key=lambda p: p.probabilities["prefer_warmer"])
    assert 11 <= peak.timestamp.hour <= 15
    morning = [p for p in weekday if p.timestamp.hour == 8]
    assert peak.probabilities["prefer_warmer"] > max(p.probabilities["prefer_warmer"] for p in morning)


def test_forecast_empty_zone():
    with pytest.raises(EmptyZone):
        zone_forecast([make_record("v1", zone="a")], "b", "thermal", cfg(n_trees=1))


def test_forecast_csv(tmp_path):
    recs = [make_record(f"v{i}", ts=T0 + timedelta(minutes=45 * i), zone="zq",
                        thermal="prefer_cooler" if i % 2 else "no_change") for i in range(30)]
    fc = zone_forecast(recs, "zq", "thermal", cfg(n_trees=5))
    fc.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "timestamp,weekday,prefer_cooler,no_change,prefer_warmer,support,low_confidence"
    assert len(lines) == 1 + 336


# ---------------------------------------------------------------------------
# sensor summaries


def test_sensor_summary_counts():
    recs = [make_record("v1", thermal="prefer_cooler", env=(28.0, 60, 45, 300)),
            make_record("v2", thermal="prefer_cooler", env=(30.0, 60, 45, 300)),
            make_record("v3", env=None, nbt=None)]
    rows = sensor_summary(recs)
    temp = [r for r in rows if (r["dimension"], r["class"], r["variable"]) == ("thermal", "prefer_cooler", "temperature")]
    assert temp[0]["count"] == 2 and temp[0]["mean"] == 29.0 and temp[0]["median"] == 29.0
    hr = [r for r in rows if (r["dimension"], r["class"], r["variable"]) == ("thermal", "no_change", "heart_rate")]
    assert hr[0]["count"] == 1
