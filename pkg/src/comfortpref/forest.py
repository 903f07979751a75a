"""Random-forest classifier: bagged CART trees grown on Gini impurity.

Trees are grown by a numba kernel into flat node arrays. A node with
``feature == -1`` is a leaf; internal nodes send ``x[feature] <= threshold``
left. Every node keeps the class counts of the bootstrap rows that reached it.

Serialized models use a small versioned binary container::

    b"CPRF" | uint32 version | uint32 header length | header (UTF-8 JSON)
    | zlib(body)

The header holds config, class labels, feature names, node counts per tree
and the dtype/shape of each body array; the body is the concatenation of
``feature`` (int32), ``threshold`` (float64), ``left``/``right`` (int32) and
``counts`` (float64, nodes x classes), all little-endian.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DegenerateLabels, EmptyNode, FeatureMismatch, MalformedFile

FORMAT_MAGIC = b"CPRF"
FORMAT_VERSION = 1
_IMPROVEMENT_RTOL = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    split_criterion: str = "gini"
    min_samples_split: int = 2
    max_features: str | int = "sqrt"
    bootstrap: bool = True
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.split_criterion != "gini":
            raise ValueError("only the Gini criterion is supported")
        if isinstance(self.max_features, str):
            if self.max_features not in ("sqrt", "all"):
                raise ValueError(f"max_features must be 'sqrt', 'all' or an int, not {self.max_features!r}")
        elif self.max_features < 1:
            raise ValueError("max_features must be >= 1")

    def features_per_split(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, math.isqrt(n_features))
        if self.max_features == "all":
            return n_features
        return min(int(self.max_features), n_features)


def gini_impurity(class_counts: Sequence[int]) -> float:
    """1 - sum(p_i^2) of a class-count vector."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("class counts must be non-negative")
    n = counts.sum()
    if n <= 0:
        raise EmptyNode("gini impurity of an empty node")
    return float(1.0 - np.sum((counts / n) ** 2))


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _grow_tree(X, y, n_classes, bootstrap, mtry, min_samples_split, seed):
    """Grow one tree; with ``bootstrap`` it sees n rows drawn with replacement."""
    np.random.seed(seed)
    n = X.shape[0]
    if bootstrap:
        sample = np.empty(n, dtype=np.int64)
        for i in range(n):
            sample[i] = np.random.randint(0, n)
    else:
        sample = np.arange(n)
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    counts = np.zeros((cap, n_classes), dtype=np.float64)

    idx = sample.copy()
    buf = np.empty(n, dtype=np.int64)
    vals = np.empty(n, dtype=np.float64)
    feats = np.arange(d)
    lc = np.zeros(n_classes, dtype=np.float64)
    rc = np.zeros(n_classes, dtype=np.float64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        m = end - start
        for i in range(start, end):
            counts[node, y[idx[i]]] += 1.0
        sq = 0.0
        n_present = 0
        for c in range(n_classes):
            sq += counts[node, c] * counts[node, c]
            if counts[node, c] > 0:
                n_present += 1
        if m < min_samples_split or n_present <= 1:
            continue
        parent_score = sq / m
        best_score = parent_score + _IMPROVEMENT_RTOL * parent_score
        best_feat = -1
        best_thr = 0.0

        # draw features without replacement until mtry non-constant ones are seen
        for j in range(d):
            feats[j] = j
        visited = 0
        drawn = 0
        while drawn < d and visited < mtry:
            r = drawn + np.random.randint(0, d - drawn)
            f = feats[r]
            feats[r] = feats[drawn]
            feats[drawn] = f
            drawn += 1

            for i in range(m):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals[:m], kind="mergesort")
            if vals[order[0]] == vals[order[m - 1]]:
                continue
            visited += 1

            for c in range(n_classes):
                lc[c] = 0.0
                rc[c] = counts[node, c]
            lsq = 0.0
            rsq = sq
            for i in range(m - 1):
                c = y[idx[start + order[i]]]
                lsq += 2.0 * lc[c] + 1.0
                rsq -= 2.0 * rc[c] - 1.0
                lc[c] += 1.0
                rc[c] -= 1.0
                v = vals[order[i]]
                w = vals[order[i + 1]]
                if v < w:
                    nl = i + 1.0
                    score = lsq / nl + rsq / (m - nl)
                    if score > best_score:
                        best_score = score
                        best_feat = f
                        mid = 0.5 * (v + w)
                        best_thr = mid if mid < w else v

        if best_feat < 0:
            continue

        # stable partition of idx[start:end]
        nl_count = 0
        for i in range(start, end):
            if X[idx[i], best_feat] <= best_thr:
                buf[nl_count] = idx[i]
                nl_count += 1
        k = nl_count
        for i in range(start, end):
            if X[idx[i], best_feat] > best_thr:
                buf[k] = idx[i]
                k += 1
        for i in range(m):
            idx[start + i] = buf[i]

        feature[node] = best_feat
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        st_node[top] = rnode
        st_start[top] = start + nl_count
        st_end[top] = end
        top += 1
        st_node[top] = lnode
        st_start[top] = start
        st_end[top] = start + nl_count
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        counts[:n_nodes].copy(),
    )


@njit(cache=True)
def _forest_proba(X, offsets, feature, threshold, left, right, dist):
    n = X.shape[0]
    n_trees = offsets.shape[0]
    out = np.zeros((n, dist.shape[1]))
    for i in range(n):
        for t in range(n_trees):
            node = 0
            base = offsets[t]
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i] += dist[base + node]
        out[i] /= n_trees
    return out


@njit(cache=True)
def _leaf_of(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            node = left[node] if X[i, feature[node]] <= threshold[node] else right[node]
        out[i] = node
    return out


# ---------------------------------------------------------------------------
# models


@dataclass
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _leaf_of(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold, self.left, self.right)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        leaf_counts = self.counts[self.apply(X)]
        return leaf_counts / leaf_counts.sum(axis=1, keepdims=True)

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return best


@dataclass
class RandomForestModel:
    config: ForestConfig
    trees: list[DecisionTree]
    class_labels: list[str]
    feature_names: list[str]
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def _pack(self) -> tuple:
        if self._packed is None:
            sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
            counts = np.concatenate([t.counts for t in self.trees])
            dist = counts / counts.sum(axis=1, keepdims=True)
            self._packed = (
                offsets,
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                dist,
            )
        return self._packed

    def _check(self, X, feature_names: Sequence[str] | None) -> np.ndarray:
        if feature_names is not None and list(feature_names) != list(self.feature_names):
            raise FeatureMismatch(f"model expects {self.feature_names}, got {list(feature_names)}")
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise FeatureMismatch(f"expected {len(self.feature_names)} feature columns, got shape {X.shape}")
        return X

    def predict_proba(self, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
        """Mean over trees of each leaf's normalized class counts."""
        X = self._check(X, feature_names)
        if len(X) == 0:
            return np.zeros((0, self.n_classes))
        return _forest_proba(X, *self._pack())

    def predict(self, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
        proba = self.predict_proba(X, feature_names)
        # argmax returns the first maximum, i.e. ties go to the earlier class label
        return np.array(self.class_labels, dtype=object)[np.argmax(proba, axis=1)] if len(proba) else np.array([], dtype=object)

    def feature_importances(self) -> dict[str, float]:
        """Mean impurity decrease per feature, normalized to sum to 1."""
        total = np.zeros(len(self.feature_names))
        for tree in self.trees:
            n_root = tree.counts[0].sum()
            for node in range(tree.n_nodes):
                f = tree.feature[node]
                if f < 0:
                    continue
                kids = (tree.left[node], tree.right[node])
                parent = tree.counts[node]
                decrease = parent.sum() * gini_impurity(parent) - sum(
                    tree.counts[k].sum() * gini_impurity(tree.counts[k]) for k in kids
                )
                total[f] += decrease / n_root
        s = total.sum()
        if s > 0:
            total /= s
        return dict(zip(self.feature_names, map(float, total)))

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        sizes = [t.n_nodes for t in self.trees]
        header = {
            "config": asdict(self.config),
            "class_labels": list(self.class_labels),
            "feature_names": list(self.feature_names),
            "tree_sizes": sizes,
        }
        body = b"".join(
            np.concatenate([getattr(t, name) for t in self.trees]).astype(dtype).tobytes()
            for name, dtype in (
                ("feature", "<i4"),
                ("threshold", "<f8"),
                ("left", "<i4"),
                ("right", "<i4"),
                ("counts", "<f8"),
            )
        )
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return FORMAT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + zlib.compress(body, 6)

    @classmethod
    def from_bytes(cls, data: bytes) -> RandomForestModel:
        if data[:4] != FORMAT_MAGIC:
            raise MalformedFile("not a serialized forest")
        version, hlen = struct.unpack("<II", data[4:12])
        if version != FORMAT_VERSION:
            raise MalformedFile(f"unsupported forest format version {version}")
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
        body = zlib.decompress(data[12 + hlen :])
        sizes = header["tree_sizes"]
        total = sum(sizes)
        n_classes = len(header["class_labels"])
        pos = 0
        arrays = {}
        for name, dtype, width in (
            ("feature", "<i4", 1),
            ("threshold", "<f8", 1),
            ("left", "<i4", 1),
            ("right", "<i4", 1),
            ("counts", "<f8", n_classes),
        ):
            nbytes = total * width * np.dtype(dtype).itemsize
            arr = np.frombuffer(body[pos : pos + nbytes], dtype=dtype)
            arrays[name] = arr.astype(np.int32 if dtype == "<i4" else np.float64)
            pos += nbytes
        arrays["counts"] = arrays["counts"].reshape(total, n_classes)
        trees = []
        start = 0
        for size in sizes:
            sl = slice(start, start + size)
            trees.append(DecisionTree(*(arrays[k][sl].copy() for k in ("feature", "threshold", "left", "right", "counts"))))
            start += size
        return cls(ForestConfig(**header["config"]), trees, header["class_labels"], header["feature_names"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> RandomForestModel:
        return cls.from_bytes(Path(path).read_bytes())


def fit_arrays(
    X: np.ndarray,
    labels: Sequence[str],
    feature_names: Sequence[str],
    cfg: ForestConfig,
    class_order: Sequence[str] | None = None,
) -> RandomForestModel:
    """Fit a forest on a dense matrix and string labels.

    ``class_order`` fixes the order of ``class_labels`` (observed classes only);
    otherwise labels are sorted. Tree ``t`` draws its bootstrap and feature
    subsets from seed ``master_seed + t``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = list(labels)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ValueError("X rows and labels differ in length")
    if len(labels) < cfg.min_samples_split:
        raise ValueError(f"need at least {cfg.min_samples_split} rows to fit")
    observed = set(labels)
    if class_order is not None:
        classes = [c for c in class_order if c in observed]
        missing = observed - set(classes)
        if missing:
            raise ValueError(f"labels {sorted(missing)} not in class order")
    else:
        classes = sorted(observed)
    if len(classes) == 1:
        warnings.warn(f"single training class {classes[0]!r}; model is a constant predictor", DegenerateLabels, stacklevel=2)
    code = {c: i for i, c in enumerate(classes)}
    y = np.array([code[c] for c in labels], dtype=np.int64)
    mtry = cfg.features_per_split(X.shape[1]) if X.shape[1] else 0
    trees = []
    for t in range(cfg.n_trees):
        seed = (cfg.master_seed + t) % (2**32)
        arrays = _grow_tree(X, y, len(classes), cfg.bootstrap, mtry, cfg.min_samples_split, seed)
        trees.append(DecisionTree(*arrays))
    return RandomForestModel(cfg, trees, classes, list(feature_names))


def fit_forest(matrix, cfg: ForestConfig, class_order: Sequence[str] | None = None) -> RandomForestModel:
    """Fit on a :class:`~comfortpref.features.FeatureMatrix`.

    Class labels follow the canonical order of the matrix's preference dimension.
    """
    from .schema import DIMENSIONS

    if class_order is None:
        class_order = DIMENSIONS.get(matrix.dimension)
    return fit_arrays(matrix.X, [str(v) for v in matrix.y], matrix.feature_names, cfg, class_order)


def predict(model: RandomForestModel, matrix) -> np.ndarray:
    return model.predict(matrix.X, matrix.feature_names)


def predict_proba(model: RandomForestModel, matrix) -> np.ndarray:
    return model.predict_proba(matrix.X, matrix.feature_names)
