"""Feature normalization, small classifiers and accuracy metrics.

Labels are device-id strings. Internally every model keeps its classes in
sorted order, so "lowest class index" and "lexicographically smallest id"
are the same thing and every tie-break below reduces to ``argmax``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cart import DecisionTree
from .circuit import magnitude_db
from .synth import S21Sweep

KINDS = ("fine-tree", "fine-knn", "gaussian-nb", "bagged-trees")


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray
    labels: tuple

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.size == 0:
            rows = rows.reshape(0, rows.shape[-1] if rows.ndim == 2 else 0)
        if len(self.labels) != rows.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for {rows.shape[0]} rows")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", tuple(str(lab) for lab in self.labels))

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]

    def subset(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(self.rows[idx], tuple(self.labels[i] for i in idx))

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.labels))


# --- normalization ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "degenerate": self.degenerate.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        return cls(np.asarray(data["mean"], float), np.asarray(data["std"], float),
                   np.asarray(data["degenerate"], bool))


def fit_normalizer(train: FeatureMatrix) -> Normalizer:
    """Z-score statistics from the training rows only."""
    if len(train) == 0:
        raise ValueError("cannot fit a normalizer on an empty matrix")
    mean = train.rows.mean(axis=0)
    std = train.rows.std(axis=0)
    # spread below float resolution of the mean counts as constant
    degenerate = std <= 1e-12 * np.maximum(np.abs(mean), np.finfo(float).tiny)
    std = np.where(degenerate, 1.0, std)
    return Normalizer(mean, std, degenerate)


def apply_normalizer(norm: Normalizer, vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    if v.shape[-1] != norm.mean.size:
        raise DimensionError(f"expected {norm.mean.size} features, got {v.shape[-1]}")
    out = (v - norm.mean) / norm.std
    return np.where(norm.degenerate, 0.0, out)


def normalize_matrix(norm: Normalizer, fm: FeatureMatrix) -> FeatureMatrix:
    return FeatureMatrix(apply_normalizer(norm, fm.rows), fm.labels)


# --- splitting -------------------------------------------------------------

def split_dataset(features: FeatureMatrix, train_fraction: float, seed: int) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Stratified random split; each class contributes ``round(n_c * fraction)`` training rows."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    labels = np.asarray(features.labels)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(3,)))
    train_idx, test_idx = [], []
    for cls in features.classes:
        members = np.nonzero(labels == cls)[0]
        if members.size < 2:
            raise ValueError(f"class {cls!r} has fewer than 2 samples")
        perm = rng.permutation(members)
        n_train = int(np.clip(np.floor(members.size * train_fraction + 0.5), 1, members.size - 1))
        train_idx.extend(perm[:n_train])
        test_idx.extend(perm[n_train:])
    return features.subset(np.sort(train_idx)), features.subset(np.sort(test_idx))


# --- classifiers -----------------------------------------------------------

class ClassifierModel:
    """Common surface: ``scores(x)`` gives an (n, k) matrix over ``classes``."""

    kind: str = ""

    def __init__(self, classes: Sequence[str], dim: int):
        self.classes = list(classes)
        self.dim = dim

    def _check(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise DimensionError(f"model expects {self.dim} features, got {x.shape[1]}")
        return x

    def scores(self, x) -> np.ndarray:
        raise NotImplementedError

    def predict_many(self, x) -> tuple[list[str], np.ndarray]:
        s = self.scores(self._check(x))
        best = np.argmax(s, axis=1)   # first maximum == smallest id
        return [self.classes[i] for i in best], s[np.arange(len(best)), best]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "classes": self.classes, "dim": self.dim, "state": self._state()}

    def _state(self) -> dict:
        raise NotImplementedError


class FineTree(ClassifierModel):
    kind = "fine-tree"

    def __init__(self, classes, dim, tree: DecisionTree):
        super().__init__(classes, dim)
        self.tree = tree

    def scores(self, x):
        counts = self.tree.leaf_counts(x)
        return counts / counts.sum(axis=1, keepdims=True)

    def _state(self):
        return self.tree.to_dict()

    @classmethod
    def _from_state(cls, classes, dim, state):
        return cls(classes, dim, DecisionTree.from_dict(state))


class FineKNN(ClassifierModel):
    """k-nearest neighbours; equal distances are ordered by label, not by row."""

    kind = "fine-knn"

    def __init__(self, classes, dim, x, y, k=1):
        super().__init__(classes, dim)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=int)
        self.k = int(k)

    def scores(self, x):
        out = np.zeros((len(x), len(self.classes)))
        k = min(self.k, len(self.y))
        for i, row in enumerate(x):
            dist = np.sqrt(np.sum((self.x - row) ** 2, axis=1))
            nearest = np.lexsort((self.y, dist))[:k]
            d = dist[nearest]
            if np.any(d == 0):
                w = (d == 0).astype(float)
            else:
                w = 1.0 / d
            np.add.at(out[i], self.y[nearest], w)
            out[i] /= w.sum()
        return out

    def _state(self):
        return {"x": self.x.tolist(), "y": self.y.tolist(), "k": self.k}

    @classmethod
    def _from_state(cls, classes, dim, state):
        return cls(classes, dim, state["x"], state["y"], state["k"])


class GaussianNB(ClassifierModel):
    kind = "gaussian-nb"

    def __init__(self, classes, dim, means, variances, log_prior):
        super().__init__(classes, dim)
        self.means = np.asarray(means, float)
        self.variances = np.asarray(variances, float)
        self.log_prior = np.asarray(log_prior, float)

    def scores(self, x):
        diff = x[:, None, :] - self.means[None]
        loglik = -0.5 * np.sum(np.log(2 * np.pi * self.variances)[None] + diff ** 2 / self.variances[None], axis=2)
        joint = loglik + self.log_prior
        joint -= joint.max(axis=1, keepdims=True)
        post = np.exp(joint)
        return post / post.sum(axis=1, keepdims=True)

    def _state(self):
        return {"means": self.means.tolist(), "variances": self.variances.tolist(),
                "log_prior": self.log_prior.tolist()}

    @classmethod
    def _from_state(cls, classes, dim, state):
        return cls(classes, dim, state["means"], state["variances"], state["log_prior"])


class BaggedTrees(ClassifierModel):
    kind = "bagged-trees"

    def __init__(self, classes, dim, trees: list[DecisionTree]):
        super().__init__(classes, dim)
        self.trees = trees

    def scores(self, x):
        votes = np.zeros((len(x), len(self.classes)))
        for tree in self.trees:
            counts = tree.leaf_counts(x)
            votes[np.arange(len(x)), np.argmax(counts, axis=1)] += 1
        return votes / len(self.trees)

    def _state(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def _from_state(cls, classes, dim, state):
        return cls(classes, dim, [DecisionTree.from_dict(t) for t in state["trees"]])


_MODEL_TYPES = {m.kind: m for m in (FineTree, FineKNN, GaussianNB, BaggedTrees)}


def model_from_dict(data: dict) -> ClassifierModel:
    try:
        cls = _MODEL_TYPES[data["kind"]]
    except KeyError:
        raise ValueError(f"unknown classifier kind {data.get('kind')!r}") from None
    return cls._from_state(list(data["classes"]), int(data["dim"]), data["state"])


def train_classifier(kind: str, train: FeatureMatrix, hyper: dict | None = None) -> ClassifierModel:
    """Fit one of :data:`KINDS` on ``train``.

    Hyper-parameters: ``max_leaves`` (fine-tree, default 100), ``k``
    (fine-knn, default 1), ``var_smoothing`` (gaussian-nb, default 1e-9),
    ``n_trees`` and ``seed`` (bagged-trees, defaults 30 and 0).
    """
    hyper = dict(hyper or {})
    classes = train.classes
    if len(classes) < 2:
        raise ValueError("need at least two classes to train a classifier")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[lab] for lab in train.labels])
    x = train.rows

    if kind == "fine-tree":
        tree = DecisionTree(hyper.get("max_leaves", 100)).fit(x, y, len(classes))
        return FineTree(classes, train.dim, tree)
    if kind == "fine-knn":
        return FineKNN(classes, train.dim, x, y, hyper.get("k", 1))
    if kind == "gaussian-nb":
        means = np.array([x[y == i].mean(axis=0) for i in range(len(classes))])
        var = np.array([x[y == i].var(axis=0) for i in range(len(classes))])
        var = var + hyper.get("var_smoothing", 1e-9) * max(float(x.var(axis=0).max()), 1e-300)
        prior = np.log(np.bincount(y, minlength=len(classes)) / len(y))
        return GaussianNB(classes, train.dim, means, var, prior)
    if kind == "bagged-trees":
        rng = np.random.default_rng(np.random.SeedSequence(int(hyper.get("seed", 0)), spawn_key=(4,)))
        trees = []
        for _ in range(int(hyper.get("n_trees", 30))):
            boot = rng.integers(0, len(y), len(y))
            trees.append(DecisionTree(hyper.get("max_leaves")).fit(x[boot], y[boot], len(classes)))
        return BaggedTrees(classes, train.dim, trees)
    raise ValueError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")


def predict(model: ClassifierModel, vector) -> tuple[str, float]:
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1:
        raise DimensionError("predict takes a single feature vector")
    labels, scores = model.predict_many(v[None])
    return labels[0], float(scores[0])


# --- metrics ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Metrics:
    accuracy: float
    confusion: np.ndarray
    classes: list

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "classes": list(self.classes),
                "confusion": self.confusion.tolist()}


def evaluate(model: ClassifierModel, test: FeatureMatrix) -> Metrics:
    """Accuracy and confusion (rows: true class, columns: predicted)."""
    if len(test) == 0:
        raise ValueError("empty test set")
    if test.dim != model.dim:
        raise DimensionError(f"model expects {model.dim} features, got {test.dim}")
    classes = sorted(set(model.classes) | set(test.labels))
    index = {c: i for i, c in enumerate(classes)}
    predicted, _ = model.predict_many(test.rows)
    confusion = np.zeros((len(classes), len(classes)), dtype=int)
    for truth, guess in zip(test.labels, predicted):
        confusion[index[truth], index[guess]] += 1
    return Metrics(float(np.trace(confusion) / confusion.sum()), confusion, classes)


# --- features --------------------------------------------------------------

def raw_s21_features(sweep: S21Sweep) -> np.ndarray:
    """Per-point S21 magnitude in dB: the unprocessed baseline representation."""
    return magnitude_db(sweep.values)


def fisher_ratio(features: FeatureMatrix, dim_index: int) -> float:
    """Mean over class pairs of ``(mu_a - mu_b)^2 / (var_a + var_b)`` for one column."""
    classes = features.classes
    if len(classes) < 2:
        raise ValueError("fisher_ratio needs at least two classes")
    col = features.rows[:, dim_index]
    labels = np.asarray(features.labels)
    stats = [(col[labels == c].mean(), col[labels == c].var()) for c in classes]
    if all(v == 0 for _, v in stats):
        return float("inf")
    terms = []
    for (ma, va), (mb, vb) in itertools.combinations(stats, 2):
        num, den = (ma - mb) ** 2, va + vb
        terms.append(num / den if den > 0 else (float("inf") if num > 0 else 0.0))
    return float(np.mean(terms))
