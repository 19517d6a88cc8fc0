"""Stratified-bootstrap random forest with Gini splitting, built from scratch.

Class skew is extreme (a fraction of a percent positive), so every tree is
grown on a stratified bootstrap drawing fixed counts from each class.  Tree
votes are hard: a tree votes "pump" when the leaf majority is the positive
class, and the forest likelihood is the fraction of trees voting pump.

Determinism: tree i draws its bootstrap and its per-node feature subsets
from a counter-based stream keyed by (master seed, i), so serial and
thread-parallel training produce bit-identical forests.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import ModelError
from .features import FEATURE_NAMES, N_FEATURES, Dataset, FeatureVector

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


def gini_impurity(class_counts: tuple[float, float]) -> float:
    """Binary Gini impurity 2p(1-p) for (true, false) counts; max 0.5."""
    n_true, n_false = class_counts
    if n_true < 0 or n_false < 0:
        raise ValueError("class counts must be non-negative")
    total = n_true + n_false
    if total == 0:
        raise ValueError("Gini impurity undefined for zero counts")
    p = n_true / total
    return 2.0 * p * (1.0 - p)


@dataclass
class RFConfig:
    n_true_per_tree: int
    n_false_per_tree: int
    n_trees: int
    mtry: int = 7               # floor(sqrt(54))
    min_leaf: int = 1
    max_depth: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_true_per_tree < 1:
            raise ValueError("n_true_per_tree must be >= 1")
        if self.n_false_per_tree < 0:
            raise ValueError("n_false_per_tree must be >= 0")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 1 <= self.mtry <= N_FEATURES:
            raise ValueError(f"mtry must be in 1..{N_FEATURES}")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


RF_PRESETS = {
    "rf1": RFConfig(n_true_per_tree=60, n_false_per_tree=20_000, n_trees=5_000),
    "rf2": RFConfig(n_true_per_tree=60, n_false_per_tree=5_000, n_trees=10_000),
    "rf3": RFConfig(n_true_per_tree=60, n_false_per_tree=1_000, n_trees=20_000),
}


@dataclass
class Split:
    feature: int
    threshold: float
    impurity_decrease: float


@dataclass
class DecisionTree:
    """Flat-array CART tree: feature == -1 marks a leaf."""

    feature: np.ndarray    # int64
    threshold: np.ndarray  # float64
    left: np.ndarray       # int64
    right: np.ndarray      # int64
    count_true: np.ndarray   # float64, weighted leaf/node class counts
    count_false: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class Forest:
    trees: list[DecisionTree]
    config: RFConfig
    feature_names: tuple[str, ...]
    impurity_decrease_sums: np.ndarray   # per feature, summed over trees
    imputation_values: np.ndarray        # per-feature train medians

    @property
    def n_trees(self) -> int:
        return len(self.trees)


# --------------------------------------------------------------------------
# numba kernels

@njit(cache=True, nogil=True, inline="always")
def _mix64(state):
    # splitmix64 step
    z = (state + _U64(0x9E3779B97F4A7C15)) & _U64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)) & _U64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)) & _U64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> _U64(31))


@njit(cache=True, nogil=True)
def _scan_split(X, y8, w, perm, lo, hi, feats, min_leaf):
    """Best (feature, threshold) by weighted Gini decrease over perm[lo:hi].

    Thresholds are midpoints between consecutive distinct sorted values;
    ties resolve to the lowest feature index, then the lowest threshold,
    which the ascending scan realizes via strict improvement.
    Returns (feature, threshold, decrease); feature == -1 when no split
    strictly decreases impurity.
    """
    n = hi - lo
    wt = 0.0
    wf = 0.0
    for k in range(lo, hi):
        i = perm[k]
        if y8[i] == 1:
            wt += w[i]
        else:
            wf += w[i]
    wtot = wt + wf
    p = wt / wtot
    g_parent = 2.0 * p * (1.0 - p)

    best_f = np.int64(-1)
    best_thr = 0.0
    best_dec = 0.0
    vals = np.empty(n, np.float64)
    for fi in range(len(feats)):
        f = feats[fi]
        for k in range(n):
            vals[k] = X[perm[lo + k], f]
        order = np.argsort(vals, kind="mergesort")
        wl_t = 0.0
        wl_f = 0.0
        for pos in range(n - 1):
            i = perm[lo + order[pos]]
            if y8[i] == 1:
                wl_t += w[i]
            else:
                wl_f += w[i]
            v_here = vals[order[pos]]
            v_next = vals[order[pos + 1]]
            if v_here == v_next:
                continue
            wl = wl_t + wl_f
            wr = wtot - wl
            if wl < min_leaf or wr < min_leaf:
                continue
            wr_t = wt - wl_t
            wr_f = wf - wl_f
            pl = wl_t / wl
            pr = wr_t / wr
            g_l = 2.0 * pl * (1.0 - pl)
            g_r = 2.0 * pr * (1.0 - pr)
            dec = g_parent - (wl * g_l + wr * g_r) / wtot
            thr = (v_here + v_next) / 2.0
            if thr <= v_here:
                thr = v_next
            if dec > best_dec:
                best_dec = dec
                best_f = f
                best_thr = thr
    return best_f, best_thr, best_dec


@njit(cache=True, nogil=True)
def _build_tree(X, y8, w, members, mtry, min_leaf, max_depth, seed, imp_out):
    """Grow one CART tree over `members` (row ids) with weights `w`.

    Returns flat node arrays.  Importance is accumulated into imp_out as the
    node-fraction-weighted impurity decrease, so a root-only split reports
    exactly its decrease.
    """
    m = members.shape[0]
    n_features = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    wtrue = np.zeros(cap, np.float64)
    wfalse = np.zeros(cap, np.float64)

    perm = members.copy()
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)

    pool = np.empty(n_features, np.int64)
    k_feats = mtry if mtry < n_features else n_features
    feats = np.empty(k_feats, np.int64)

    rng = _mix64(_U64(seed))
    w_root = 0.0
    for k in range(m):
        w_root += w[members[k]]

    n_nodes = 1
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        depth = st_depth[sp]

        wt = 0.0
        wf = 0.0
        for k in range(lo, hi):
            i = perm[k]
            if y8[i] == 1:
                wt += w[i]
            else:
                wf += w[i]
        wtrue[node] = wt
        wfalse[node] = wf
        if wt == 0.0 or wf == 0.0 or hi - lo < 2:
            continue
        if wt + wf < 2.0 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        # sample mtry distinct features, then scan them in ascending order
        for j in range(n_features):
            pool[j] = j
        for j in range(k_feats):
            rng = _mix64(rng)
            r = j + np.int64(rng % _U64(n_features - j))
            tmp = pool[j]
            pool[j] = pool[r]
            pool[r] = tmp
            feats[j] = pool[j]
        feats[:k_feats].sort()

        f, thr, dec = _scan_split(X, y8, w, perm, lo, hi, feats[:k_feats], min_leaf)
        if f < 0 or dec <= 0.0:
            continue

        imp_out[f] += ((wt + wf) / w_root) * dec
        feature[node] = f
        threshold[node] = thr
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid

        # two-pointer partition of perm[lo:hi]: x < thr goes left
        i = lo
        j = hi - 1
        while i <= j:
            if X[perm[i], f] < thr:
                i += 1
            else:
                tmp = perm[i]
                perm[i] = perm[j]
                perm[j] = tmp
                j -= 1
        mid = i
        st_node[sp] = rid
        st_lo[sp] = mid
        st_hi[sp] = hi
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lid
        st_lo[sp] = lo
        st_hi[sp] = mid
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], wtrue[:n_nodes], wfalse[:n_nodes])


@njit(cache=True, nogil=True)
def _tree_votes(feature, threshold, left, right, wtrue, wfalse, X, out):
    """Add each row's hard vote (leaf majority, ties vote true) into out."""
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        if wtrue[node] >= wfalse[node]:
            out[r] += 1


# --------------------------------------------------------------------------
# public operations

def best_split(rows: np.ndarray, labels: Sequence[bool],
               candidate_features: Optional[Sequence[int]] = None,
               min_leaf: int = 1,
               weights: Optional[np.ndarray] = None) -> Optional[Split]:
    """Exhaustive best Gini split of `rows` over the candidate features.

    Considers every midpoint between consecutive distinct sorted values per
    feature; returns None when no split strictly decreases impurity.
    """
    X = np.ascontiguousarray(np.asarray(rows, dtype=np.float64))
    y8 = np.asarray(labels, dtype=np.int8)
    if X.ndim != 2 or len(y8) != X.shape[0]:
        raise ValueError("rows must be 2-D with one label per row")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    if candidate_features is None:
        feats = np.arange(X.shape[1], dtype=np.int64)
    else:
        feats = np.array(sorted(candidate_features), dtype=np.int64)
    perm = np.arange(X.shape[0], dtype=np.int64)
    f, thr, dec = _scan_split(X, y8, w, perm, 0, X.shape[0], feats, float(min_leaf))
    if f < 0 or dec <= 0.0:
        return None
    return Split(int(f), float(thr), float(dec))


def _bootstrap_indices(y: np.ndarray, n_true: int, n_false: int,
                       rng: np.random.Generator) -> np.ndarray:
    true_pool = np.flatnonzero(y)
    false_pool = np.flatnonzero(~y)
    if n_true > 0 and len(true_pool) == 0:
        raise ModelError("cannot bootstrap: no true observations")
    if n_false > 0 and len(false_pool) == 0:
        raise ModelError("cannot bootstrap: no false observations")
    picks_t = true_pool[rng.integers(0, len(true_pool), n_true)] if n_true else np.empty(0, np.int64)
    picks_f = false_pool[rng.integers(0, len(false_pool), n_false)] if n_false else np.empty(0, np.int64)
    return np.concatenate([picks_t, picks_f]).astype(np.int64)


def stratified_bootstrap(dataset: Dataset, n_true: int, n_false: int,
                         rng: np.random.Generator) -> Dataset:
    """Draw n_true + n_false observations with replacement, per class."""
    _, y = dataset.to_matrix()
    idx = _bootstrap_indices(y, n_true, n_false, rng)
    return Dataset([dataset.observations[i] for i in idx],
                   dataset.feature_names, dataset.split_tag)


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    # counter-based (master seed, tree index) stream: parallel == serial
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, index]))


def train_medians(X: np.ndarray) -> np.ndarray:
    """Per-feature imputation values: median of present entries, 0 if none."""
    medians = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        col = X[:, j]
        present = col[~np.isnan(col)]
        if len(present):
            medians[j] = float(np.median(present))
    return medians


def impute(X: np.ndarray, medians: np.ndarray) -> np.ndarray:
    out = np.array(X, dtype=np.float64, copy=True)
    nan_r, nan_c = np.nonzero(np.isnan(out))
    out[nan_r, nan_c] = medians[nan_c]
    return out


def train_forest(dataset: Dataset, cfg: RFConfig, threads: int = 1) -> Forest:
    """Grow cfg.n_trees stratified-bootstrap trees; deterministic in (data, cfg)."""
    X_raw, y = dataset.to_matrix()
    if not y.any() or y.all():
        raise ModelError("training data must contain both classes")
    medians = train_medians(X_raw)
    X = np.ascontiguousarray(impute(X_raw, medians))
    y8 = y.astype(np.int8)
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth

    def grow(i: int):
        rng = _tree_rng(cfg.seed, i)
        idx = _bootstrap_indices(y, cfg.n_true_per_tree, cfg.n_false_per_tree, rng)
        node_seed = int(rng.integers(0, 2 ** 63, dtype=np.uint64))
        members, counts = np.unique(idx, return_counts=True)
        w = np.zeros(X.shape[0])
        w[members] = counts.astype(np.float64)
        imp = np.zeros(N_FEATURES)
        arrays = _build_tree(X, y8, w, members.astype(np.int64),
                             cfg.mtry, float(cfg.min_leaf), max_depth,
                             node_seed, imp)
        return DecisionTree(*[np.array(a) for a in arrays]), imp

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(grow, range(cfg.n_trees)))
    else:
        results = [grow(i) for i in range(cfg.n_trees)]

    imp_sums = np.zeros(N_FEATURES)
    trees = []
    for tree, imp in results:
        trees.append(tree)
        imp_sums += imp
    return Forest(trees, cfg, FEATURE_NAMES, imp_sums, medians)


def _as_matrix(fv) -> np.ndarray:
    if isinstance(fv, FeatureVector):
        return fv.values.reshape(1, -1)
    arr = np.asarray(fv, dtype=np.float64)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def predict_votes(forest: Forest, fvs) -> np.ndarray:
    """Vote fraction in [0, 1] per row; missing values use stored medians."""
    X = _as_matrix(fvs)
    if X.shape[1] != N_FEATURES:
        raise ModelError(f"feature count mismatch: expected {N_FEATURES}, got {X.shape[1]}")
    X = np.ascontiguousarray(impute(X, forest.imputation_values))
    counts = np.zeros(X.shape[0], np.int64)
    for tree in forest.trees:
        _tree_votes(tree.feature, tree.threshold, tree.left, tree.right,
                    tree.count_true, tree.count_false, X, counts)
    return counts / forest.n_trees


def predict_vote(forest: Forest, fv) -> float:
    """Pump likelihood for one feature vector."""
    return float(predict_votes(forest, fv)[0])


def feature_importance(forest: Forest) -> np.ndarray:
    """Mean decrease in Gini per feature, in the fixed feature order."""
    return forest.impurity_decrease_sums / forest.n_trees
