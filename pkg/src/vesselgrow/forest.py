"""Random Forest of Gini CART trees, trained from scratch.

Trees are stored flat in preorder: the left child of an internal node is the
next node, and ``right`` holds the tree-local index of the right child.
Samples with ``x[feature] <= threshold`` go left.

Randomness comes from SplitMix64 so that a model is fully determined by the
training rows (in order), the parameters and the seed:

* tree ``t`` starts from state ``mix64(seed + (t + 1) * 0x9E3779B97F4A7C15)``;
* ``below(n)`` draws ``next() >> 11``, scales it by ``2**-53`` and multiplies
  by ``n`` in IEEE double precision, truncating to an integer;
* the bootstrap takes ``n`` successive ``below(n)`` draws;
* every node then draws its ``mtry`` candidate features by a partial
  Fisher-Yates shuffle of ``0..n_features-1`` (fresh identity permutation per
  node), nodes being visited in preorder.
"""
from __future__ import annotations

import io
import json
import os
import struct
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import (
    CorruptModelError,
    DegenerateWarning,
    DimensionError,
    EmptyDatasetError,
    IoError,
    ParamError,
    VersionError,
)
from .featureset import FEATURE_NAMES, N_FEATURES

MAGIC = b"VGFOREST"
FORMAT_VERSION = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    mtry: int = 5
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ParamError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf < 1:
            raise ParamError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ParamError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if not 1 <= self.mtry <= N_FEATURES:
            raise ParamError(f"mtry must lie in [1, {N_FEATURES}], got {self.mtry}")


# -- random numbers -----------------------------------------------------------

@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _next(state):
    state[0] += _GOLDEN
    return _mix64(state[0])


@njit(cache=True)
def _below(state, n):
    u = np.float64(_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return np.int64(u * n)


def tree_state(seed: int, tree_index: int) -> np.ndarray:
    start = (int(seed) + (tree_index + 1) * int(_GOLDEN)) & _MASK64
    return np.array([_mix64(np.uint64(start))], dtype=np.uint64)


@njit(cache=True)
def _bootstrap(n, state):
    rows = np.empty(n, dtype=np.int64)
    for k in range(n):
        rows[k] = _below(state, n)
    return rows


# -- tree growing -------------------------------------------------------------

@njit(cache=True, nogil=True)
def _grow(X, y, rows, mtry, max_depth, min_leaf, state):
    n = rows.shape[0]
    n_feat = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    right = np.zeros(cap, dtype=np.int32)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)

    idx = rows.copy()
    vals = np.empty(n)
    labs = np.empty(n, dtype=np.int64)
    perm = np.empty(n_feat, dtype=np.int64)

    # stack entries: start, end, depth, parent (-1 for root / left children)
    stack = np.empty((n + 1, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = -1
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        depth = stack[top, 2]
        parent = stack[top, 3]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            right[parent] = node

        m = end - start
        pos = 0
        for k in range(start, end):
            pos += y[idx[k]]
        value[node] = pos / m
        count[node] = m
        if pos == 0 or pos == m or m < 2 * min_leaf or (max_depth > 0 and depth >= max_depth):
            continue

        parent_score = 2.0 * pos * (m - pos) / m
        best_score = parent_score - 1e-12 * m
        best_feat = -1
        best_thr = 0.0

        for f in range(n_feat):
            perm[f] = f
        n_draw = min(mtry, n_feat)
        for k in range(n_draw):
            j = k + _below(state, n_feat - k)
            tmp = perm[k]
            perm[k] = perm[j]
            perm[j] = tmp
            f = perm[k]

            for s in range(m):
                vals[s] = X[idx[start + s], f]
            order = np.argsort(vals[:m])
            for s in range(m):
                labs[s] = y[idx[start + order[s]]]
            left_pos = 0
            for s in range(m - 1):
                left_pos += labs[s]
                v0 = vals[order[s]]
                v1 = vals[order[s + 1]]
                if v0 == v1:
                    continue
                nl = s + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                right_pos = pos - left_pos
                score = (2.0 * left_pos * (nl - left_pos) / nl
                         + 2.0 * right_pos * (nr - right_pos) / nr)
                if score < best_score:
                    best_score = score
                    best_feat = f
                    thr = 0.5 * (v0 + v1)
                    if thr >= v1:
                        thr = v0
                    best_thr = thr

        if best_feat < 0:
            continue
        feature[node] = best_feat
        threshold[node] = best_thr
        # partition idx[start:end] so rows going left come first
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[idx[lo], best_feat] <= best_thr:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        mid = lo
        # push right first so the left subtree is emitted next (preorder)
        stack[top, 0] = mid
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = node
        top += 1
        stack[top, 0] = start
        stack[top, 1] = mid
        stack[top, 2] = depth + 1
        stack[top, 3] = -1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), right[:n_nodes].copy(),
            value[:n_nodes].copy(), count[:n_nodes].copy())


# -- prediction ---------------------------------------------------------------

@njit(cache=True, nogil=True)
def _tree_leaf(x, feature, threshold, right, offset):
    node = offset
    while feature[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node += 1
        else:
            node = offset + right[node]
    return node


@njit(cache=True, nogil=True)
def _predict_one(x, feature, threshold, right, value, offsets):
    n_trees = offsets.shape[0] - 1
    acc = 0.0
    for t in range(n_trees):
        acc += value[_tree_leaf(x, feature, threshold, right, offsets[t])]
    return acc / n_trees


@njit(cache=True, nogil=True)
def _predict_many(X, feature, threshold, right, value, offsets):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = _predict_one(X[i], feature, threshold, right, value, offsets)
    return out


@njit(cache=True)
def _right_from_preorder(feature):
    n = feature.shape[0]
    right = np.zeros(n, dtype=np.int32)
    pending = np.empty(n, dtype=np.int64)  # internal nodes awaiting their right child
    top = 0
    for i in range(n):
        # node i is the right child of the most recent internal node whose
        # left subtree has just been completed by a leaf
        if feature[i] >= 0:
            pending[top] = i
            top += 1
        if feature[i] < 0 and i + 1 < n:
            if top == 0:
                return right, False
            top -= 1
            right[pending[top]] = i + 1
    ok = top == 0
    return right, ok


# -- model --------------------------------------------------------------------

@dataclass
class ForestModel:
    """Trained ensemble; per-tree node arrays are concatenated with ``offsets``."""

    feature: np.ndarray
    threshold: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    offsets: np.ndarray
    params: ForestParams = field(default_factory=ForestParams)
    n_features: int = N_FEATURES
    feature_names: tuple = FEATURE_NAMES
    format_version: int = FORMAT_VERSION

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, t: int) -> dict:
        """Node arrays of tree ``t`` (tree-local indices)."""
        lo, hi = self.offsets[t], self.offsets[t + 1]
        return {
            "feature": self.feature[lo:hi],
            "threshold": self.threshold[lo:hi],
            "right": self.right[lo:hi],
            "value": self.value[lo:hi],
            "count": self.count[lo:hi],
        }

    def depth(self, t: int) -> int:
        tr = self.tree(t)
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if tr["feature"][node] >= 0:
                stack.append((node + 1, d + 1))
                stack.append((int(tr["right"][node]), d + 1))
        return best

    def predict_proba(self, X) -> np.ndarray:
        """Vessel probability for each row of ``X`` (mean of leaf fractions)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            return np.array([predict_proba(self, X)])
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(
                f"model expects {self.n_features} features, got shape {X.shape}"
            )
        return _predict_many(X, self.feature, self.threshold, self.right, self.value, self.offsets)

    def leaf_values(self, x) -> np.ndarray:
        """Leaf vessel fraction reached by ``x`` in every tree."""
        x = np.asarray(x, dtype=np.float64)
        return np.array([
            self.value[_tree_leaf(x, self.feature, self.threshold, self.right, self.offsets[t])]
            for t in range(self.n_trees)
        ])

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", self.format_version))
        header = json.dumps({
            "n_features": int(self.n_features),
            "feature_names": list(self.feature_names),
            "params": asdict(self.params),
            "n_trees": self.n_trees,
        }, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        for t in range(self.n_trees):
            tr = self.tree(t)
            nodes = np.empty(len(tr["feature"]), dtype=_NODE_DTYPE)
            nodes["feature"] = tr["feature"]
            nodes["value"] = np.where(tr["feature"] >= 0, tr["threshold"], tr["value"])
            nodes["count"] = tr["count"]
            buf.write(struct.pack("<I", len(nodes)))
            buf.write(nodes.tobytes())
        body = buf.getvalue()
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "ForestModel":
        if len(data) < len(MAGIC) + 4 or data[:len(MAGIC)] != MAGIC:
            raise CorruptModelError("missing VGFOREST magic")
        (version,) = struct.unpack_from("<I", data, len(MAGIC))
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported model format version {version}")
        if len(data) < len(MAGIC) + 12:
            raise CorruptModelError("truncated model file")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) != crc:
            raise CorruptModelError("model checksum mismatch (truncated or corrupted file)")
        try:
            pos = len(MAGIC) + 4
            (hlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            header = json.loads(body[pos:pos + hlen].decode("utf-8"))
            pos += hlen
            params = ForestParams(**header["params"])
            parts, offsets = [], [0]
            for _ in range(header["n_trees"]):
                (n_nodes,) = struct.unpack_from("<I", body, pos)
                pos += 4
                size = n_nodes * _NODE_DTYPE.itemsize
                if pos + size > len(body) or n_nodes == 0:
                    raise CorruptModelError("truncated tree record")
                parts.append(np.frombuffer(body, dtype=_NODE_DTYPE, count=n_nodes, offset=pos))
                pos += size
                offsets.append(offsets[-1] + n_nodes)
            if pos != len(body):
                raise CorruptModelError("trailing bytes after last tree")
        except (struct.error, KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
            raise CorruptModelError(f"malformed model file: {exc}") from exc

        nodes = np.concatenate(parts) if parts else np.empty(0, dtype=_NODE_DTYPE)
        feature = nodes["feature"].astype(np.int32)
        n_features = int(header["n_features"])
        if (feature >= n_features).any():
            raise CorruptModelError("node feature index out of range")
        rights = []
        for t in range(len(parts)):
            r, ok = _right_from_preorder(feature[offsets[t]:offsets[t + 1]])
            if not ok:
                raise CorruptModelError(f"tree {t} is not a valid preorder encoding")
            rights.append(r)
        is_leaf = feature < 0
        stored = nodes["value"].astype(np.float64)
        return cls(
            feature=feature,
            threshold=np.where(is_leaf, 0.0, stored),
            right=np.concatenate(rights).astype(np.int32),
            value=np.where(is_leaf, stored, 0.0),
            count=nodes["count"].astype(np.int64),
            offsets=np.array(offsets, dtype=np.int64),
            params=params,
            n_features=n_features,
            feature_names=tuple(header["feature_names"]),
            format_version=version,
        )


_NODE_DTYPE = np.dtype([("feature", "<i4"), ("value", "<f8"), ("count", "<u4")])


def predict_proba(model: ForestModel, v) -> float:
    """Vessel probability of a single feature vector."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != model.n_features:
        raise DimensionError(f"model expects {model.n_features} features, got {v.shape}")
    return float(_predict_one(v, model.feature, model.threshold, model.right,
                              model.value, model.offsets))


def _n_threads() -> int:
    env = os.environ.get("VESSELGROW_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def train(ds, params: ForestParams = ForestParams(), y=None) -> ForestModel:
    """Train a forest on a :class:`LabeledDataset` (or on ``X`` with labels ``y``)."""
    if y is None:
        X, y = ds.X, ds.label
        names = tuple(ds.feature_names)
    else:
        X = ds
        names = None
    X = np.ascontiguousarray(X, dtype=np.float64)
    yi = np.ascontiguousarray(np.asarray(y, dtype=bool), dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if len(yi) != len(X):
        raise DimensionError(f"{len(X)} rows but {len(yi)} labels")
    n, n_feat = X.shape
    if names is None:
        names = FEATURE_NAMES if n_feat == N_FEATURES else tuple(f"f{i}" for i in range(n_feat))
    if params.mtry > n_feat:
        raise ParamError(f"mtry {params.mtry} exceeds feature count {n_feat}")
    if yi.min() == yi.max():
        warnings.warn("training data contains a single class", DegenerateWarning, stacklevel=2)
    elif (X == X[0]).all():
        warnings.warn(
            "all rows share identical features with mixed labels; trees reduce to one leaf",
            DegenerateWarning, stacklevel=2,
        )

    max_depth = -1 if params.max_depth is None else int(params.max_depth)

    def grow(t):
        state = tree_state(params.seed, t)
        rows = _bootstrap(n, state)
        return _grow(X, yi, rows, params.mtry, max_depth, params.min_leaf, state)

    workers = min(_n_threads(), params.n_trees)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trees = list(pool.map(grow, range(params.n_trees)))
    else:
        trees = [grow(t) for t in range(params.n_trees)]

    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(tr[0]) for tr in trees])
    return ForestModel(
        feature=np.concatenate([tr[0] for tr in trees]),
        threshold=np.concatenate([tr[1] for tr in trees]),
        right=np.concatenate([tr[2] for tr in trees]),
        value=np.concatenate([tr[3] for tr in trees]),
        count=np.concatenate([tr[4] for tr in trees]),
        offsets=offsets,
        params=params,
        n_features=n_feat,
        feature_names=names,
    )


def oob_error(model: ForestModel, X, y, n_trees: int | None = None) -> float:
    """Out-of-bag misclassification rate using the first ``n_trees`` trees.

    Bootstrap samples are regenerated from the model seed, so ``X`` and ``y``
    must be the exact rows the model was trained on. Rows that are in-bag for
    every tree are ignored.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    n = len(X)
    k = model.n_trees if n_trees is None else int(n_trees)
    acc = np.zeros(n)
    votes = np.zeros(n, dtype=np.int64)
    for t in range(k):
        in_bag = np.zeros(n, dtype=bool)
        in_bag[_bootstrap(n, tree_state(model.params.seed, t))] = True
        oob = np.flatnonzero(~in_bag)
        lo = model.offsets[t]
        sub_off = np.array([lo, model.offsets[t + 1]], dtype=np.int64)
        acc[oob] += _predict_many(X[oob], model.feature, model.threshold, model.right,
                                  model.value, sub_off)
        votes[oob] += 1
    seen = votes > 0
    if not seen.any():
        return float("nan")
    pred = acc[seen] / votes[seen] >= 0.5
    return float(np.mean(pred != y[seen]))


def save_model(model: ForestModel, path):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        tmp.write_bytes(model.to_bytes())
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_model(path) -> ForestModel:
    """Read a model file; models with a feature count other than 30 load with a warning."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    model = ForestModel.from_bytes(data)
    if model.n_features != N_FEATURES:
        warnings.warn(
            f"{path}: model uses {model.n_features} features, expected {N_FEATURES}",
            stacklevel=2,
        )
    return model
