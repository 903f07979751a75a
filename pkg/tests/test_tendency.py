import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comfortpref.errors import DegenerateInput
from comfortpref.schema import RESPONSE_CLASSES
from comfortpref.tendency import (
    OCCUPANT,
    TendencyVector,
    adjusted_rand_index,
    kmeans_fit,
    lloyd,
    room_profiles,
    vote_ratios,
    write_clusters,
    write_tendencies,
)

from conftest import make_record, make_vote


def tv(name, ratios):
    return TendencyVector(name, OCCUPANT, tuple(ratios), 1)


def test_direct_counts():
    votes = [
        make_vote(f"v{i}", thermal=c)
        for i, c in enumerate(["prefer_cooler", "prefer_cooler", "no_change", "prefer_warmer"])
    ]
    (vec,) = vote_ratios(votes)
    assert vec.dimension_ratios("thermal") == (0.5, 0.25, 0.25)
    assert vec.dimension_ratios("light") == (0.0, 1.0, 0.0)
    assert vec.vote_count == 4


def test_room_profiles():
    recs = [
        make_record("v1", noise="prefer_quieter", zone="z1"),
        make_record("v2", zone="z1"),
        make_record("v3", light="prefer_dimmer", zone="z2"),
        make_record("v4", noise="prefer_quieter", zone="z3", occupant="x"),
        make_record("v5", zone="z3", occupant="y"),
    ]
    rooms = {v.subject_id: v for v in room_profiles(recs)}
    assert rooms["z1"].dimension_ratios("noise") == (0.5, 0.5, 0.0)
    assert rooms["z2"].dimension_ratios("light") == (1.0, 0.0, 0.0)
    assert rooms["z1"].ratios == rooms["z3"].ratios


pref = st.fixed_dictionaries(
    {
        "thermal": st.sampled_from(["prefer_cooler", "no_change", "prefer_warmer"]),
        "light": st.sampled_from(["prefer_dimmer", "no_change", "prefer_brighter"]),
        "noise": st.sampled_from(["prefer_quieter", "no_change", "prefer_louder"]),
    }
)


@settings(max_examples=60, deadline=None)
@given(prefs=st.lists(pref, min_size=1, max_size=30), scale=st.integers(1, 4))
def test_ratios_on_simplices_and_scale_invariant(prefs, scale):
    votes = [make_vote(f"v{i}", **p) for i, p in enumerate(prefs)]
    (vec,) = vote_ratios(votes)
    for dim in ("thermal", "light", "noise"):
        r = vec.dimension_ratios(dim)
        assert all(0.0 <= x <= 1.0 for x in r)
        assert sum(r) == pytest.approx(1.0, abs=1e-12)
    scaled = [make_vote(f"v{i}_{j}", **p) for i, p in enumerate(prefs) for j in range(scale)]
    (vec2,) = vote_ratios(scaled)
    assert vec2.ratios == pytest.approx(vec.ratios, abs=1e-15)


def test_no_louder_gives_eight_clusters():
    rng = np.random.default_rng(5)
    vectors = []
    for i in range(30):
        t = rng.dirichlet([1, 1, 1])
        light = rng.dirichlet([1, 1, 1])
        q = rng.uniform()
        vectors.append(tv(f"o{i}", [*t, *light, q, 1 - q, 0.0]))
    model = kmeans_fit(vectors, k=9, seed=0)
    assert model.k == 8 and model.requested_k == 9
    assert model.dropped_classes == ["prefer_louder"]
    assert "noise_prefer_louder" not in model.feature_labels and len(model.feature_labels) == 8


def test_k_equals_distinct_points_is_exact():
    pts = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0]]
    vectors = [tv(f"o{i}", p + [0, 1, 0, 0, 1, 0]) for i, p in enumerate(pts)]
    model = kmeans_fit(vectors, k=4, merge_empty=False)
    assert model.inertia == 0.0
    assert sorted(model.assignments.values()) == [0, 1, 2, 3]


def test_too_few_distinct_points():
    vectors = [tv(f"o{i}", [1, 0, 0, 0, 1, 0, 0, 1, 0]) for i in range(5)]
    with pytest.raises(DegenerateInput):
        kmeans_fit(vectors, k=2, merge_empty=False)


def test_per_dimension_mode():
    vectors = [tv("a", [1, 0, 0, 0, 1, 0, 0, 1, 0]), tv("b", [0, 0, 1, 0, 1, 0, 0, 1, 0])]
    model = kmeans_fit(vectors, k=2, dimension="thermal", merge_empty=False)
    assert model.feature_labels == ["thermal_prefer_cooler", "thermal_prefer_warmer"]
    assert model.assignments["a"] != model.assignments["b"]


def random_vectors(seed, n=20):
    rng = np.random.default_rng(seed)
    return [tv(f"s{i}", np.concatenate([rng.dirichlet([1, 1, 1]) for _ in range(3)])) for i in range(n)]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 6))
def test_lloyd_trace_never_increases(seed, k):
    points = np.array([v.ratios for v in random_vectors(seed)])
    rng = np.random.default_rng(seed)
    init = points[rng.choice(len(points), size=k, replace=False)]
    _, _, inertia, trace = lloyd(points, init)
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert inertia <= trace[0] + 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000))
def test_kmeans_deterministic_and_relabel_invariant(seed):
    vectors = random_vectors(seed)
    a = kmeans_fit(vectors, k=4, seed=seed, merge_empty=False)
    b = kmeans_fit(vectors, k=4, seed=seed, merge_empty=False)
    assert a.assignments == b.assignments and a.inertia == b.inertia
    renamed = [TendencyVector("x" + v.subject_id, v.kind, v.ratios, v.vote_count) for v in vectors]
    c = kmeans_fit(renamed, k=4, seed=seed, merge_empty=False)
    assert [c.assignments["x" + v.subject_id] for v in vectors] == [a.assignments[v.subject_id] for v in vectors]


def test_best_restart_not_worse_than_any_single_restart():
    vectors = random_vectors(11, n=25)
    best = kmeans_fit(vectors, k=5, seed=3, restarts=10, merge_empty=False)
    for r in range(10):
        single = kmeans_fit(vectors, k=5, seed=3, restarts=r + 1, merge_empty=False)
        assert best.inertia <= single.inertia + 1e-12


def ari_pairs(a, b):
    """Pair-counting adjusted Rand index, written out over all O(n^2) pairs."""
    n = len(a)
    same_a = same_b = same_both = 0
    for i, j in itertools.combinations(range(n), 2):
        x, y = a[i] == a[j], b[i] == b[j]
        same_a += x
        same_b += y
        same_both += x and y
    pairs = n * (n - 1) / 2
    expected = same_a * same_b / pairs
    top = (same_a + same_b) / 2
    return 1.0 if top == expected else (same_both - expected) / (top - expected)


@settings(max_examples=60, deadline=None)
@given(
    labels=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=25)
)
def test_ari_matches_pair_counting(labels):
    a, b = zip(*labels)
    assert adjusted_rand_index(a, b) == pytest.approx(ari_pairs(a, b), abs=1e-12)


def test_ari_is_one_exactly_for_permuted_labels():
    truth = ["x", "x", "y", "z", "z", "y"]
    for perm in itertools.permutations([0, 1, 2]):
        mapping = dict(zip("xyz", perm))
        assert adjusted_rand_index(truth, [mapping[t] for t in truth]) == 1.0


def test_artifacts(tmp_path):
    vectors = random_vectors(2, n=6)
    write_tendencies(tmp_path / "t.csv", vectors)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["subject", "kind", "thermal_prefer_cooler"]
    assert len(lines) == 7 and len(lines[0].split(",")) == 2 + len(RESPONSE_CLASSES) + 1
    write_clusters(tmp_path / "c.json", {"occupant": kmeans_fit(vectors, k=3, merge_empty=False)})
    doc = json.loads((tmp_path / "c.json").read_text())
    assert set(doc["occupant"]) >= {"centroids", "assignments", "inertia", "dropped_classes"}
