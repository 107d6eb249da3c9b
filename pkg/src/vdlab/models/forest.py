"""Random forest of CART trees (Gini impurity) in numpy.

Trees are stored as flat arrays. Each node's feature subsample draws from its
own generator keyed by (tree seed, depth, path), so a tree grown deeper is an
extension of the shallower one with the same seed.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

LEAF = -1


def gini(counts):
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 20
    min_leaf: int = 1
    feature_subsample: int = 0      # 0 -> round(sqrt(n_features))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1 or self.feature_subsample < 0:
            raise ValueError(f"invalid forest parameters {self}")


@dataclass
class Tree:
    feature: np.ndarray     # int, LEAF for leaves
    threshold: np.ndarray   # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # vocal probability at the node

    @property
    def n_nodes(self):
        return len(self.feature)

    def depth(self):
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())


@dataclass
class ForestModel:
    trees: list
    n_features: int
    params: ForestParams = field(default_factory=ForestParams)


def _best_split(x, y, min_leaf):
    """Best threshold on one feature; returns (weighted gini * n, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    n_l = np.arange(1, n)
    pos_l = np.cumsum(ys)[:-1]
    n_r = n - n_l
    pos_r = ys.sum() - pos_l
    ok = (xs[1:] > xs[:-1]) & (n_l >= min_leaf) & (n_r >= min_leaf)
    if not ok.any():
        return None
    # n_l * gini_l + n_r * gini_r, each gini = 2 p (1 - p)
    cost = 2 * (pos_l * (n_l - pos_l) / n_l + pos_r * (n_r - pos_r) / n_r)
    cost = np.where(ok, cost, np.inf)
    i = int(np.argmin(cost))
    a, b = xs[i], xs[i + 1]
    thr = a + (b - a) / 2
    if thr >= b:
        thr = a
    return float(cost[i]), float(thr)


def grow_tree(x, y, params, tree_seed):
    n_feat = x.shape[1]
    k = params.feature_subsample or max(1, int(round(np.sqrt(n_feat))))
    k = min(k, n_feat)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0, 1)]
    while stack:
        node, idx, depth, path = stack.pop()
        yi = y[idx]
        pos = yi.sum()
        if depth >= params.max_depth or pos == 0 or pos == len(yi) or len(yi) < 2 * params.min_leaf:
            continue
        rng = np.random.default_rng([tree_seed, depth, path])
        best = None
        for f in rng.choice(n_feat, k, replace=False):
            s = _best_split(x[idx, f], yi, params.min_leaf)
            if s is not None and (best is None or s[0] < best[0]):
                best = (s[0], int(f), s[1])
        if best is None:
            continue
        _, f, thr = best
        go_left = x[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1, 2 * path + 1))
        stack.append((left[node], li, depth + 1, 2 * path))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value))


def _train_one(args):
    x, y, params, seq = args
    seed = int(seq.generate_state(1, dtype=np.uint64)[0])
    rng = np.random.default_rng(seq)
    boot = rng.integers(0, len(y), len(y))
    return grow_tree(x[boot], y[boot], params, seed)


def forest_train(rows, labels, params=None, jobs=1):
    """Bootstrap-aggregated CART trees; identical output for any ``jobs``."""
    params = params or ForestParams()
    x = np.asarray(rows, dtype=float)
    y = np.asarray(labels, dtype=bool).astype(float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("empty feature matrix")
    if len(y) != len(x):
        raise ValueError(f"{len(y)} labels for {len(x)} rows")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature rows contain non-finite values")
    if y.min() == y.max():
        raise ValueError("training data holds a single class")
    seqs = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    work = [(x, y, params, s) for s in seqs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            trees = list(ex.map(_train_one, work))
    else:
        trees = [_train_one(w) for w in work]
    return ForestModel(trees, x.shape[1], params)


def tree_predict(tree, x):
    node = np.zeros(len(x), dtype=np.int64)
    rows = np.arange(len(x))
    while True:
        f = tree.feature[node]
        inner = f != LEAF
        if not inner.any():
            return tree.value[node]
        r, n = rows[inner], node[inner]
        go_left = x[r, f[inner]] <= tree.threshold[n]
        node[inner] = np.where(go_left, tree.left[n], tree.right[n])


def forest_predict(model, rows):
    x = np.asarray(rows, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(f"forest trained on {model.n_features} columns, got shape {x.shape}")
    return np.mean([tree_predict(t, x) for t in model.trees], axis=0)
