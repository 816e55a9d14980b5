"""Gradient-boosted regression trees with exact greedy split search.

Squared loss ``(y - yhat)^2 / 2`` gives per-sample gradient ``yhat - y`` and
hessian 1. Each tree is grown greedily: every feature and every midpoint
between consecutive distinct sorted values is scored with

    gain = 1/2 [GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)] - gamma

and a node splits only when the best gain is positive. Leaves output
``-G / (H + lam)``; the ensemble predicts ``base + eta * sum(tree outputs)``.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from .dataset import WindowedDataset
from .report import TrainReport, array_hash

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Leaf:
    weight: float


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


@dataclass
class GbtConfig:
    rounds: int = 100
    max_depth: int = 6
    eta: float = 0.3
    lam: float = 1.0
    gamma: float = 0.0
    min_child: int = 1
    base_score: float | None = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.min_child < 1:
            raise ValueError("min_child must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def split_gain(GL, HL, GR, HR, lam):
    """Loss reduction of a split, before subtracting gamma."""
    G = GL + GR
    H = HL + HR
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam))


def leaf_weight(G: float, H: float, lam: float) -> float:
    return float(-G / (H + lam))


def best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, config: GbtConfig):
    """Return ``(gain, feature, threshold)`` of the best split, or ``None``.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, k = X.shape
    if n < 2 * config.min_child:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    GR = G - GL
    HR = H - HL
    gain = split_gain(GL, HL, GR, HR, config.lam) - config.gamma
    n_left = np.arange(1, n)[:, None]
    valid = (xs[:-1] < xs[1:]) & (n_left >= config.min_child) & (n - n_left >= config.min_child)
    gain = np.where(valid, gain, -np.inf).T  # feature-major so argmax honours the tie rule
    flat = int(np.argmax(gain))
    f, j = divmod(flat, n - 1)
    best = gain[f, j]
    if not best > 0:
        return None
    lo, hi = xs[j, f], xs[j + 1, f]
    thr = lo + (hi - lo) / 2
    if not lo < thr <= hi:
        thr = hi
    return float(best), int(f), float(thr)


def build_tree(gradients, hessians, features, config: GbtConfig, depth: int = 0) -> TreeNode:
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(g) or len(g) != len(h):
        raise ValueError("gradients, hessians and features must be aligned")
    if depth < config.max_depth:
        found = best_split(X, g, h, config)
        if found is not None:
            _, f, thr = found
            left = X[:, f] < thr
            right = ~left
            return Split(
                f, thr,
                build_tree(g[left], h[left], X[left], config, depth + 1),
                build_tree(g[right], h[right], X[right], config, depth + 1),
            )
    return Leaf(leaf_weight(g.sum(), h.sum(), config.lam))


def tree_predict(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    _route(node, X, np.arange(len(X)), out)
    return out


def _route(node: TreeNode, X, idx, out):
    if isinstance(node, Leaf):
        out[idx] = node.weight
        return
    go_left = X[idx, node.feature] < node.threshold
    _route(node.left, X, idx[go_left], out)
    _route(node.right, X, idx[~go_left], out)


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.weight}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict, k: int | None) -> TreeNode:
    if "leaf" in d:
        return Leaf(float(d["leaf"]))
    f = int(d["feature"])
    if f < 0 or (k is not None and f >= k):
        raise ValueError(f"split feature {f} out of range")
    return Split(f, float(d["threshold"]), _node_from_dict(d["left"], k), _node_from_dict(d["right"], k))


@dataclass
class GbtModel:
    base: float
    eta: float
    trees: list[TreeNode] = field(default_factory=list)
    k: int | None = None

    def predict_raw(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(len(X), self.base)
        for tree in self.trees:
            out += self.eta * tree_predict(tree, X)
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "gbt",
            "base": self.base,
            "eta": self.eta,
            "k": self.k,
            "trees": [_node_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        if d.get("format_version") != FORMAT_VERSION or d.get("kind", "gbt") != "gbt":
            raise ValueError(f"unsupported gbt model format_version {d.get('format_version')!r}")
        k = d.get("k")
        return cls(float(d["base"]), float(d["eta"]), [_node_from_dict(t, k) for t in d["trees"]], k)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GbtModel":
        return cls.from_dict(json.loads(text))


def train(train_set: WindowedDataset, config: GbtConfig = GbtConfig()) -> tuple[GbtModel, TrainReport]:
    """Boost ``config.rounds`` trees; the report holds training MSE after each round."""
    if len(train_set) == 0:
        raise ValueError("empty training set")
    X = np.asarray(train_set.features, dtype=np.float64)
    y = np.asarray(train_set.targets, dtype=np.float64)
    base = float(np.mean(y)) if config.base_score is None else float(config.base_score)
    model = GbtModel(base=base, eta=config.eta, k=train_set.k)
    report = TrainReport(model="gbt", scheme="double", config=config.to_dict())
    pred = np.full(len(y), base)
    hess = np.ones(len(y))
    t_start = time.perf_counter()
    for _ in range(config.rounds):
        t0 = time.perf_counter()
        tree = build_tree(pred - y, hess, X, config)
        model.trees.append(tree)
        pred = pred + config.eta * tree_predict(tree, X)
        report.losses.append(float(np.mean((y - pred) ** 2)))
        report.epoch_seconds.append(time.perf_counter() - t0)
    report.total_seconds = time.perf_counter() - t_start
    report.peak_memory_bytes = int(X.nbytes + 4 * y.nbytes)
    report.split_hash = array_hash(train_set.features, train_set.targets)
    return model, report


def fit(train_set: WindowedDataset, config: GbtConfig = GbtConfig()) -> GbtModel:
    return train(train_set, config)[0]


def predict(model: GbtModel, dataset: WindowedDataset) -> np.ndarray:
    """Forecasts in kW."""
    return dataset.to_kw(model.predict_raw(dataset.features))
