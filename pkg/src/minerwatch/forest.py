"""Random forest classifier built on CART-style trees.

Trees split greedily by impurity decrease (gini or entropy) over a random
feature subset per node, growing until leaves are pure or the depth cap is
hit.  A split is accepted even at zero decrease as long as it separates the
node, so parity-style class layouts are still learnable.  Prediction is a
majority vote with ties resolved toward the lowest class index.

Determinism: every tree draws its randomness from a seed derived from
(random_state, tree index), so results are identical no matter how many
worker threads fit the trees.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


class TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "impurity", "n", "leaf_class")

    def __init__(self, impurity: float, n: int):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.impurity = impurity
        self.n = n
        self.leaf_class = -1

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"class": int(self.leaf_class), "n": int(self.n)}
        return {
            "feature": int(self.feature),
            "threshold": float(self.threshold),
            "n": int(self.n),
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TreeNode":
        node = cls(0.0, data["n"])
        if "class" in data:
            node.leaf_class = data["class"]
            return node
        node.feature = data["feature"]
        node.threshold = data["threshold"]
        node.left = cls.from_dict(data["left"])
        node.right = cls.from_dict(data["right"])
        return node


def _impurity(counts: np.ndarray, n: int, criterion: str) -> float:
    p = counts / n
    if criterion == "gini":
        return float(1.0 - np.sum(p * p))
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _xlog2(counts: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """counts * log2(counts / sizes), elementwise, with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = counts * np.log2(counts / sizes, where=counts > 0)
    return np.where(counts > 0, out, 0.0)


def _child_impurities(counts: np.ndarray, sizes: np.ndarray, criterion: str) -> np.ndarray:
    # counts: (..., K) running class counts, sizes broadcastable to counts[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = counts / sizes[..., None]
        if criterion == "gini":
            return 1.0 - np.sum(p * p, axis=-1)
        logp = np.where(p > 0, np.log2(p, where=p > 0), 0.0)
        return -np.sum(p * logp, axis=-1)


class DecisionTree:
    """Single CART classification tree over dense float features."""

    def __init__(
        self,
        max_depth: int | None = None,
        max_features: str | None = "sqrt",
        criterion: str = "gini",
        n_classes: int = 2,
    ):
        self.max_depth = np.inf if max_depth is None else max_depth
        self.max_features = max_features
        self.criterion = criterion
        self.n_classes = n_classes
        self.root: TreeNode | None = None
        self.importances_: np.ndarray | None = None

    def _n_candidate_features(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if self.max_features == "log2":
            return max(1, int(np.log2(n_features)))
        if self.max_features is None:
            return n_features
        raise ValueError(f"unknown max_features {self.max_features!r}")

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.intp)
        n, d = X.shape
        m = self._n_candidate_features(d)
        raw_importance = np.zeros(d)
        eye = np.eye(self.n_classes)

        counts0 = np.bincount(y, minlength=self.n_classes)
        self.root = TreeNode(_impurity(counts0, n, self.criterion), n)
        stack = [(self.root, np.arange(n), counts0, 0)]
        while stack:
            node, idx, counts, depth = stack.pop()
            n_node = idx.size
            majority = int(np.argmax(counts))  # argmax takes lowest index on ties
            if node.impurity == 0.0 or n_node < 2 or depth >= self.max_depth:
                node.leaf_class = majority
                continue

            feats = rng.choice(d, size=m, replace=False) if m < d else np.arange(d)
            split = self._best_split(X, y, idx, feats, eye)
            if split is None:
                node.leaf_class = majority
                continue
            feature, threshold, child_sum, left_counts = split
            raw_importance[feature] += n_node * node.impurity - child_sum

            mask = X[idx, feature] <= threshold
            left_idx, right_idx = idx[mask], idx[~mask]
            right_counts = counts - left_counts
            node.feature = feature
            node.threshold = threshold
            node.left = TreeNode(
                _impurity(left_counts, left_idx.size, self.criterion), left_idx.size
            )
            node.right = TreeNode(
                _impurity(right_counts, right_idx.size, self.criterion), right_idx.size
            )
            stack.append((node.left, left_idx, left_counts, depth + 1))
            stack.append((node.right, right_idx, right_counts, depth + 1))

        total = raw_importance.sum()
        self.importances_ = raw_importance / total if total > 0 else raw_importance
        return self

    def _best_split(self, X, y, idx, feats, eye):
        """Lowest weighted child impurity over all (feature, threshold) pairs.

        Returns (feature, threshold, weighted child impurity * n, left counts)
        or None when every candidate feature is constant on this node.
        """
        n = idx.size
        Xs = X[np.ix_(idx, feats)]
        order = np.argsort(Xs, axis=0)
        Xsort = np.take_along_axis(Xs, order, axis=0)
        ysort = y[idx][order]  # (n, m)
        nl = np.arange(1, n, dtype=np.float64)[:, None]
        nr = n - nl

        if self.n_classes == 2:
            # two-class shortcut: one cumulative count instead of a one-hot tensor
            left1 = np.cumsum(ysort, axis=0)[:-1].astype(np.float64)
            left0 = nl - left1
            total1 = ysort.sum(axis=0, dtype=np.float64)
            right1 = total1[None, :] - left1
            right0 = nr - right1
            if self.criterion == "gini":
                wsum = (nl - (left0**2 + left1**2) / nl) + (nr - (right0**2 + right1**2) / nr)
            else:
                wsum = -(_xlog2(left0, nl) + _xlog2(left1, nl)
                         + _xlog2(right0, nr) + _xlog2(right1, nr))
            left_counts_at = lambda i, j: np.array(
                [left0[i, j], left1[i, j]], dtype=np.int64
            )
        else:
            cum = np.cumsum(eye[ysort], axis=0)  # (n, m, K)
            left_counts = cum[:-1]
            right_counts = cum[-1][None, :, :] - left_counts
            wsum = nl * _child_impurities(left_counts, nl, self.criterion)
            wsum += nr * _child_impurities(right_counts, nr, self.criterion)
            left_counts_at = lambda i, j: left_counts[i, j].astype(np.int64)

        valid = Xsort[1:] > Xsort[:-1]
        if not valid.any():
            return None
        wsum[~valid] = np.inf

        # feature-major argmin: prefer the first candidate feature, then the
        # lowest threshold, so ties break deterministically
        flat = np.argmin(wsum.T)
        j, i = divmod(int(flat), n - 1)
        threshold = 0.5 * (Xsort[i, j] + Xsort[i + 1, j])
        if not Xsort[i, j] <= threshold < Xsort[i + 1, j]:
            threshold = Xsort[i, j]  # midpoint collapsed by rounding
        return int(feats[j]), float(threshold), float(wsum[i, j]), left_counts_at(i, j)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.intp)
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, ids = stack.pop()
            if ids.size == 0:
                continue
            if node.is_leaf:
                out[ids] = node.leaf_class
                continue
            mask = X[ids, node.feature] <= node.threshold
            stack.append((node.left, ids[mask]))
            stack.append((node.right, ids[~mask]))
        return out

    def walk(self):
        """Yield every node (for structural audits)."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend((node.left, node.right))


class RandomForest:
    """Bagged ensemble of decision trees with per-tree derived seeds."""

    def __init__(
        self,
        n_estimators: int = 100,
        max_depth: int | None = None,
        max_features: str | None = "sqrt",
        criterion: str = "gini",
        bootstrap: bool = True,
        random_state: int = 10,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.criterion = criterion
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.trees: list[DecisionTree] = []
        self.n_classes_ = 0
        self.bootstrap_unique_fractions_: list[float] = []

    def _fit_one(self, t: int, X: np.ndarray, y: np.ndarray) -> tuple[DecisionTree, float]:
        rng = np.random.default_rng(np.random.SeedSequence((self.random_state, t)))
        n = X.shape[0]
        if self.bootstrap:
            sample = rng.integers(0, n, size=n)
            unique_fraction = np.unique(sample).size / n
        else:
            sample = np.arange(n)
            unique_fraction = 1.0
        tree = DecisionTree(
            max_depth=self.max_depth,
            max_features=self.max_features,
            criterion=self.criterion,
            n_classes=self.n_classes_,
        )
        tree.fit(X[sample], y[sample], rng)
        return tree, unique_fraction

    def fit(self, X: np.ndarray, y: np.ndarray, threads: int = 1) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.intp)
        if X.shape[0] < 2:
            raise ValueError("need at least 2 training samples")
        self.n_classes_ = int(y.max()) + 1
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda t: self._fit_one(t, X, y), range(self.n_estimators)))
        else:
            results = [self._fit_one(t, X, y) for t in range(self.n_estimators)]
        self.trees = [tree for tree, _ in results]
        self.bootstrap_unique_fractions_ = [f for _, f in results]
        return self

    def vote_fractions(self, X: np.ndarray) -> np.ndarray:
        """Per-class fraction of trees voting for each row, shape (n, K)."""
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros((X.shape[0], self.n_classes_))
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            votes[rows, tree.predict(X)] += 1.0
        return votes / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.vote_fractions(X), axis=1)

    @property
    def feature_importances_(self) -> np.ndarray:
        """Mean decrease in impurity, normalized to sum to 1."""
        stacked = np.mean([t.importances_ for t in self.trees], axis=0)
        total = stacked.sum()
        return stacked / total if total > 0 else stacked
