"""CART classification tree grown best-first under a leaf budget."""
from __future__ import annotations

import heapq

import numpy as np


def _gini_from_counts(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / total[..., None]
    return np.where(total > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


def _best_split(x: np.ndarray, y: np.ndarray, order: np.ndarray, n_classes: int):
    """Return (gain, feature, threshold) of the best Gini split, or None.

    ``order[:, f]`` lists the node's sample indices sorted by feature ``f``.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, d = order.shape
    if n < 2:
        return None
    parent_counts = np.bincount(y[order[:, 0]], minlength=n_classes).astype(float)
    parent = float(_gini_from_counts(parent_counts))
    if parent == 0.0:
        return None
    xs = x[order, np.arange(d)]
    ys = y[order]
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    # n * weighted child impurity = n - (sum_c L_c^2 / n_L + sum_c R_c^2 / n_R)
    purity = np.zeros((n - 1, d))
    for c in range(n_classes):
        if parent_counts[c] == 0:
            continue
        left = np.cumsum(ys == c, axis=0, dtype=float)[:-1]
        right = parent_counts[c] - left
        purity += left * left / n_left + right * right / n_right
    gain = parent - (n - purity) / n
    valid = xs[1:] > xs[:-1]
    gain = np.where(valid, gain, -np.inf).T            # (d, n-1): feature-major tie-break
    flat = int(np.argmax(gain))
    best = gain.flat[flat]
    if not np.isfinite(best) or best <= 1e-12:
        return None
    f, i = divmod(flat, n - 1)
    threshold = 0.5 * (xs[i, f] + xs[i + 1, f])
    return float(best), int(f), float(threshold)


class DecisionTree:
    """Gini tree; ``max_leaves=None`` grows until every leaf is pure."""

    def __init__(self, max_leaves: int | None = 100):
        if max_leaves is not None and max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")
        self.max_leaves = max_leaves

    def fit(self, x: np.ndarray, y: np.ndarray, n_classes: int) -> "DecisionTree":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=int)
        self.n_classes = n_classes
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.counts: list[np.ndarray] = []

        def new_node(idx):
            self.feature.append(-1)
            self.threshold.append(0.0)
            self.left.append(-1)
            self.right.append(-1)
            self.counts.append(np.bincount(y[idx], minlength=n_classes).astype(float))
            return len(self.feature) - 1

        root = new_node(np.arange(len(y)))
        heap = []
        # each node keeps its members pre-sorted along every feature
        members = {root: np.argsort(x, axis=0, kind="stable")}

        def push(node):
            split = _best_split(x, y, members[node], n_classes)
            if split is not None:
                # node id breaks gain ties so growth order is deterministic
                heapq.heappush(heap, (-split[0], node, split[1], split[2]))

        push(root)
        leaves = 1
        limit = self.max_leaves if self.max_leaves is not None else np.inf
        while heap and leaves < limit:
            _, node, f, thr = heapq.heappop(heap)
            order = members.pop(node)
            to_left = np.zeros(len(y), dtype=bool)
            to_left[order[x[order[:, f], f] <= thr, f]] = True
            n_left = int(to_left[order[:, 0]].sum())
            mask = to_left[order].T                    # (d, m), same count per column
            left_order = order.T[mask].reshape(order.shape[1], n_left).T
            right_order = order.T[~mask].reshape(order.shape[1], -1).T
            l_node, r_node = new_node(left_order[:, 0]), new_node(right_order[:, 0])
            self.feature[node], self.threshold[node] = f, thr
            self.left[node], self.right[node] = l_node, r_node
            members[l_node], members[r_node] = left_order, right_order
            leaves += 1
            push(l_node)
            push(r_node)
        self._freeze()
        return self

    def _freeze(self):
        self.feature = np.asarray(self.feature, dtype=int)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=int)
        self.right = np.asarray(self.right, dtype=int)
        self.counts = np.asarray(self.counts, dtype=float).reshape(-1, self.n_classes)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def leaf_counts(self, x: np.ndarray) -> np.ndarray:
        """Class counts of the leaf each row lands in, shape (n, k)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        node = np.zeros(len(x), dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = x[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return self.counts[node]

    def to_dict(self) -> dict:
        return {
            "max_leaves": self.max_leaves,
            "n_classes": self.n_classes,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionTree":
        tree = cls(data["max_leaves"])
        tree.n_classes = int(data["n_classes"])
        tree.feature = data["feature"]
        tree.threshold = data["threshold"]
        tree.left = data["left"]
        tree.right = data["right"]
        tree.counts = data["counts"]
        tree._freeze()
        return tree
