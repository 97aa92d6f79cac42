"""CART decision trees (Gini impurity) and the bagged forest.

Trees grow until pure or fewer than 2 samples, choosing midpoint thresholds
over sqrt(F) randomly sampled features per split; when the sampled features
are all constant within a node the remaining features are searched before
declaring a leaf. Ties break toward the lowest feature index, then the
lowest threshold, so fits are deterministic given the per-tree seed.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from ..features import SliceTensor, flatten_for_tabular
from ..numcore import RngStream

_LEAF = -1


def _gini(pos, n):
    p = pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


class DecisionTree:
    """Array-encoded binary tree; x <= threshold goes left."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.n_samples = []
        self.n_pos = []

    def _new_node(self, n, pos):
        self.feature.append(_LEAF)
        self.threshold.append(0.0)
        self.left.append(_LEAF)
        self.right.append(_LEAF)
        self.n_samples.append(int(n))
        self.n_pos.append(int(pos))
        return len(self.feature) - 1

    def fit(self, x, y, rng: RngStream, max_features=None):
        n, f = x.shape
        if max_features is None:
            max_features = max(1, int(np.sqrt(f)))
        root = self._new_node(n, y.sum())
        stack = [(root, np.arange(n))]
        while stack:
            node, idx = stack.pop()
            ys = y[idx]
            pos = int(ys.sum())
            if pos == 0 or pos == len(idx) or len(idx) < 2:
                continue
            split = self._best_split(x, idx, ys, rng, max_features, f)
            if split is None:
                continue
            feat, thr = split
            go_left = x[idx, feat] <= thr
            left_idx = idx[go_left]
            right_idx = idx[~go_left]
            left_id = self._new_node(len(left_idx), y[left_idx].sum())
            right_id = self._new_node(len(right_idx), y[right_idx].sum())
            self.feature[node] = feat
            self.threshold[node] = thr
            self.left[node] = left_id
            self.right[node] = right_id
            stack.append((right_id, right_idx))
            stack.append((left_id, left_idx))
        self._pack()
        return self

    def _best_split(self, x, idx, ys, rng, max_features, n_features):
        sampled = np.sort(rng.choice(n_features, size=min(max_features, n_features),
                                     replace=False))
        found = self._search_features(x, idx, ys, sampled)
        if found is None and max_features < n_features:
            rest = np.setdiff1d(np.arange(n_features), sampled)
            found = self._search_features(x, idx, ys, rest)
        return found

    @staticmethod
    def _search_features(x, idx, ys, features):
        n = len(idx)
        total_pos = ys.sum()
        best = None  # (cost, feature, threshold)
        for feat in features:
            col = x[idx, feat]
            order = np.argsort(col, kind="stable")
            sv = col[order]
            sy = ys[order]
            distinct = sv[1:] != sv[:-1]
            if not distinct.any():
                continue
            cut = np.nonzero(distinct)[0]  # left part = sorted positions [0, cut]
            pos_l = np.cumsum(sy)[cut].astype(np.float64)
            nl = (cut + 1).astype(np.float64)
            nr = n - nl
            pos_r = total_pos - pos_l
            gini_l = 1.0 - (pos_l / nl) ** 2 - (1.0 - pos_l / nl) ** 2
            gini_r = 1.0 - (pos_r / nr) ** 2 - (1.0 - pos_r / nr) ** 2
            cost = (nl * gini_l + nr * gini_r) / n
            j = int(np.argmin(cost))  # first minimum = lowest threshold
            thr = (sv[cut[j]] + sv[cut[j] + 1]) / 2.0
            if best is None or cost[j] < best[0]:
                best = (cost[j], int(feat), float(thr))
        if best is None:
            return None
        return best[1], best[2]

    def _pack(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.n_samples = np.asarray(self.n_samples, dtype=np.int64)
        self.n_pos = np.asarray(self.n_pos, dtype=np.int64)

    @property
    def leaf_fractions(self):
        p1 = self.n_pos / self.n_samples
        return np.stack([1.0 - p1, p1], axis=1)

    def predict_proba(self, x):
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            feat = self.feature[node]
            live = feat >= 0
            if not live.any():
                break
            rows = np.nonzero(live)[0]
            goes_left = x[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(goes_left, self.left[node[rows]], self.right[node[rows]])
        return self.leaf_fractions[node]

    def feature_importances(self, n_features):
        """Impurity decrease credited to each split feature, sample-weighted."""
        imp = np.zeros(n_features)
        root_n = self.n_samples[0]
        for node, feat in enumerate(self.feature):
            if feat < 0:
                continue
            l, r = self.left[node], self.right[node]
            drop = (
                self.n_samples[node] * _gini(self.n_pos[node], self.n_samples[node])
                - self.n_samples[l] * _gini(self.n_pos[l], self.n_samples[l])
                - self.n_samples[r] * _gini(self.n_pos[r], self.n_samples[r])
            )
            imp[feat] += drop / root_n
        return imp


class RandomForestModel:
    """Unweighted average of per-tree leaf class fractions."""

    kind = "rf"

    def __init__(self, n_estimators, seed=0, bootstrap=True, max_features=None):
        self.n_estimators = int(n_estimators)
        self.seed = int(seed)
        self.bootstrap = bootstrap
        self.max_features = max_features
        self.trees = []
        self.n_features = None

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_features = x.shape[1]
        rng = RngStream(self.seed, (71,))
        self.trees = []
        for i in range(self.n_estimators):
            tree_rng = rng.child(i)
            if self.bootstrap:
                idx = tree_rng.integers(0, len(x), len(x))
            else:
                idx = np.arange(len(x))
            tree = DecisionTree().fit(x[idx], y[idx], tree_rng.child(1), self.max_features)
            self.trees.append(tree)
        return self

    def with_trees(self, k):
        """Prefix forest over the first k trees; identical to fitting k trees
        directly because tree i only consumes its own child stream."""
        out = RandomForestModel(k, self.seed, self.bootstrap, self.max_features)
        out.trees = self.trees[:k]
        out.n_features = self.n_features
        return out

    def prepare(self, tensor: SliceTensor):
        x = flatten_for_tabular(tensor)
        if self.n_features is not None and x.shape[1] != self.n_features:
            raise DimensionError("tabular input", x.shape, (self.n_features,))
        return (x,)

    def predict_proba_matrix(self, x):
        acc = np.zeros((len(x), 2))
        for tree in self.trees:
            acc += tree.predict_proba(x)
        return acc / len(self.trees)

    def feature_importances(self):
        """Mean impurity decrease over trees, normalized to sum to 1."""
        imp = np.zeros(self.n_features)
        for tree in self.trees:
            imp += tree.feature_importances(self.n_features)
        imp /= len(self.trees)
        total = imp.sum()
        return imp / total if total > 0 else imp
