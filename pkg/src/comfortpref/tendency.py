"""Vote-ratio tendency profiles and k-means segmentation of occupants and rooms."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInput
from .ingest import FeedbackVote
from .schema import DIMENSIONS, RESPONSE_CLASSES, check_dimension, class_label, format_float, ratio_column

OCCUPANT = "occupant"
ROOM = "room"

RATIO_COLUMNS = tuple(ratio_column(d, c) for d, c in RESPONSE_CLASSES)
MAX_ITER = 300


@dataclass(frozen=True)
class TendencyVector:
    subject_id: str
    kind: str
    ratios: tuple[float, ...]  # nine entries, RESPONSE_CLASSES order
    vote_count: int

    def dimension_ratios(self, dimension: str) -> tuple[float, float, float]:
        start = list(DIMENSIONS).index(check_dimension(dimension)) * 3
        return self.ratios[start : start + 3]


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: dict[str, int]
    inertia: float
    dropped_classes: list[str]
    feature_labels: list[str]
    requested_k: int
    trace: list[float] = field(default_factory=list)
    restart: int = 0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "requested_k": self.requested_k,
            "feature_labels": self.feature_labels,
            "dropped_classes": self.dropped_classes,
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "assignments": dict(sorted(self.assignments.items())),
            "inertia": float(self.inertia),
        }


def _vote_of(record) -> FeedbackVote:
    return record if isinstance(record, FeedbackVote) else record.vote


def _subject(record, kind: str) -> str:
    if kind == OCCUPANT:
        return _vote_of(record).occupant_id
    if kind == ROOM:
        zone = getattr(record, "zone_id", None)
        if zone is None:
            raise ValueError("room profiles need zone-resolved records")
        return zone
    raise ValueError(f"unknown subject kind {kind!r}")


def vote_ratios(records: Iterable, kind: str = OCCUPANT) -> list[TendencyVector]:
    """Per-subject share of votes in each of the nine response classes.

    Accepts fused records or bare votes; subjects come out sorted by id.
    """
    counts: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(len(RESPONSE_CLASSES), dtype=np.int64))
    totals: dict[str, int] = defaultdict(int)
    index = {pair: i for i, pair in enumerate(RESPONSE_CLASSES)}
    for rec in records:
        subject = _subject(rec, kind)
        vote = _vote_of(rec)
        row = counts[subject]
        for dim in DIMENSIONS:
            row[index[(dim, vote.preference(dim))]] += 1
        totals[subject] += 1
    return [
        TendencyVector(s, kind, tuple(float(c) / totals[s] for c in counts[s]), totals[s])
        for s in sorted(counts)
    ]


def room_profiles(records: Iterable) -> list[TendencyVector]:
    return vote_ratios(records, ROOM)


# ---------------------------------------------------------------------------
# k-means


def _sq_dist(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = _sq_dist(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point already coincides with a center; take the first unused one
            remaining = [i for i in range(n) if i not in chosen]
            nxt = remaining[0]
        else:
            nxt = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dist(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = MAX_ITER):
    """Run Lloyd iterations to an assignment fixpoint.

    Returns ``(centroids, labels, inertia, trace)`` where ``trace`` holds the
    inertia after every assignment step. Empty clusters are reseeded with the
    point currently farthest from its centroid.
    """
    k = len(centroids)
    labels = None
    trace: list[float] = []
    for _ in range(max_iter):
        dist = _sq_dist(points, centroids)
        new_labels = np.argmin(dist, axis=1)
        point_cost = dist[np.arange(len(points)), new_labels]
        for j in range(k):
            if not np.any(new_labels == j):
                far = int(np.argmax(point_cost))
                new_labels[far] = j
                point_cost[far] = 0.0
        trace.append(float(point_cost.sum()))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        centroids = np.stack([points[labels == j].mean(axis=0) for j in range(k)])
    dist = _sq_dist(points, centroids)
    inertia = float(dist[np.arange(len(points)), labels].sum())
    return centroids, labels, inertia, trace


def kmeans_fit(
    vectors: Sequence[TendencyVector],
    k: int = len(RESPONSE_CLASSES),
    seed: int = 0,
    restarts: int = 10,
    dimension: str | None = None,
    merge_empty: bool = True,
) -> ClusterModel:
    """Best-of-``restarts`` k-means++ clustering of tendency vectors.

    Response classes nobody used are removed from the feature space first;
    with ``merge_empty`` the requested ``k`` shrinks by the number of removed
    classes (nine classes with ``prefer_louder`` empty give eight clusters).
    ``dimension`` restricts clustering to that dimension's three ratios.
    """
    if not vectors:
        raise DegenerateInput("no vectors to cluster")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    pairs = list(RESPONSE_CLASSES)
    columns = list(range(len(pairs)))
    if dimension is not None:
        check_dimension(dimension)
        columns = [i for i, (d, _) in enumerate(pairs) if d == dimension]
    matrix = np.array([v.ratios for v in vectors], dtype=float)[:, columns]
    used = matrix.sum(axis=0) > 0
    dropped = [class_label(*pairs[c]) for c, u in zip(columns, used) if not u]
    kept = [c for c, u in zip(columns, used) if u]
    points = matrix[:, used]
    effective_k = k - len(dropped) if merge_empty else k
    if effective_k < 1:
        raise DegenerateInput(f"k={k} leaves no clusters after dropping {dropped}")
    if effective_k > len(points):
        raise DegenerateInput(f"k={effective_k} exceeds the {len(points)} subjects")
    distinct = len(np.unique(points, axis=0))
    if distinct < effective_k:
        raise DegenerateInput(f"only {distinct} distinct points for k={effective_k}")

    best = None
    for restart in range(restarts):
        rng = np.random.default_rng([seed, restart])
        init = _kmeans_pp(points, effective_k, rng)
        result = lloyd(points, init)
        if best is None or result[2] < best[0][2]:
            best = (result, restart)
    (centroids, labels, inertia, trace), restart = best
    return ClusterModel(
        k=effective_k,
        centroids=centroids,
        assignments={v.subject_id: int(lab) for v, lab in zip(vectors, labels)},
        inertia=inertia,
        dropped_classes=dropped,
        feature_labels=[ratio_column(*pairs[c]) for c in kept],
        requested_k=k,
        trace=trace,
        restart=restart,
    )


def adjusted_rand_index(labels_a: Sequence, labels_b: Sequence) -> float:
    """Hubert-Arabie adjusted Rand index between two partitions."""
    if len(labels_a) != len(labels_b):
        raise ValueError("partitions differ in length")
    n = len(labels_a)
    _, a = np.unique(np.asarray(labels_a, dtype=object).astype(str), return_inverse=True)
    _, b = np.unique(np.asarray(labels_b, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def comb2(x):
        return (x * (x - 1)) // 2

    index = comb2(table).sum()
    rows = comb2(table.sum(axis=1)).sum()
    cols = comb2(table.sum(axis=0)).sum()
    total = comb2(np.int64(n))
    if total == 0:
        return 1.0
    expected = rows * cols / total
    max_index = (rows + cols) / 2
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# artifacts


def write_tendencies(path: str | Path, vectors: Iterable[TendencyVector]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["subject", "kind", *RATIO_COLUMNS, "vote_count"])
        for v in vectors:
            writer.writerow([v.subject_id, v.kind, *(format_float(r) for r in v.ratios), v.vote_count])


def write_clusters(path: str | Path, models: dict[str, ClusterModel]) -> None:
    doc = {name: model.to_dict() for name, model in sorted(models.items())}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
