"""Probabilistic binary classifiers: logistic regression and a small GBT.

Both are deterministic.  The logistic model is trained by full-batch
gradient descent from zero weights; the boosted trees pick splits by best
gain with ties resolved toward the lowest feature index and threshold.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

EPS = 1e-12
SPARSE_DENSITY = 0.25


class DegenerateTrainingError(ValueError):
    """Training labels contain a single class."""


class InputError(ValueError):
    """Features are non-finite or have the wrong width."""


def _check_xy(features, labels):
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InputError("features must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise InputError("features contain non-finite values")
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("training labels contain a single class")
    return X, y


# --------------------------------------------------------------------------
# logistic regression

@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 0.1
    l2_penalty: float = 1e-4
    max_iters: int = 2000
    tolerance: float = 1e-8


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    config: LogisticConfig = field(default_factory=LogisticConfig)
    n_iters: int = 0

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def decision_function(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise InputError(f"expected {self.n_features} features, got shape {X.shape}")
        return X @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        return expit(self.decision_function(features))


def _loss_from_logits(z, weights, y, l2_penalty) -> float:
    p = np.clip(expit(z), EPS, 1.0 - EPS)
    nll = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(nll + 0.5 * l2_penalty * weights @ weights)


def _grad_from_logits(z, weights, X_t, y, l2_penalty) -> tuple[np.ndarray, float]:
    r = expit(z) - y
    n = len(y)
    return X_t @ r / n + l2_penalty * weights, float(r.sum() / n)


def logistic_loss(weights, bias, X, y, l2_penalty) -> float:
    """Mean log loss plus ``l2/2 * ||w||^2`` (the bias is not penalised)."""
    return _loss_from_logits(X @ weights + bias, weights, y, l2_penalty)


def logistic_gradient(weights, bias, X, y, l2_penalty) -> tuple[np.ndarray, float]:
    return _grad_from_logits(X @ weights + bias, weights, X.T, y, l2_penalty)


def fit_logistic(train_features, train_labels, config: Optional[LogisticConfig] = None) -> LogisticModel:
    cfg = config or LogisticConfig()
    X, y = _check_xy(train_features, train_labels)
    if X.size and np.count_nonzero(X) < SPARSE_DENSITY * X.size:
        # one-hot heavy tables: same arithmetic, far fewer multiplications
        X = sparse.csr_matrix(X)
        X_t = X.T.tocsr()
    else:
        X = np.ascontiguousarray(X)
        X_t = X.T
    w = np.zeros(X.shape[1])
    b = 0.0
    z = np.zeros(X.shape[0])
    loss = _loss_from_logits(z, w, y, cfg.l2_penalty)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        gw, gb = _grad_from_logits(z, w, X_t, y, cfg.l2_penalty)
        w = w - cfg.learning_rate * gw
        b = b - cfg.learning_rate * gb
        z = X @ w + b
        new_loss = _loss_from_logits(z, w, y, cfg.l2_penalty)
        if loss - new_loss < cfg.tolerance:
            loss = new_loss
            break
        loss = new_loss
    if cfg.max_iters == 0:
        it = 0
    return LogisticModel(weights=w, bias=float(b), config=cfg, n_iters=it)


# --------------------------------------------------------------------------
# gradient boosted trees

@dataclass(frozen=True)
class GbtConfig:
    n_rounds: int = 50
    max_depth: int = 3
    shrinkage: float = 0.1
    min_samples_leaf: int = 1
    l2_leaf: float = 1.0


@dataclass
class Node:
    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: Optional["Node"] = None
    right: Optional["Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        if "value" in d:
            return cls(value=float(d["value"]))
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.is_leaf:
            return np.full(X.shape[0], self.value)
        out = np.empty(X.shape[0])
        go_left = X[:, self.feature] <= self.threshold
        out[go_left] = self.left.predict(X[go_left])
        out[~go_left] = self.right.predict(X[~go_left])
        return out


@dataclass(eq=False)
class GbtModel:
    trees: list[Node]
    shrinkage: float
    base_score: float
    n_features: int
    config: GbtConfig = field(default_factory=GbtConfig)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def decision_function(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise InputError(f"expected {self.n_features} features, got shape {X.shape}")
        score = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            score += self.shrinkage * tree.predict(X)
        return score

    def predict_proba(self, features) -> np.ndarray:
        return expit(self.decision_function(features))


def _best_split(X, grad, hess, rows, order, cfg: GbtConfig):
    """Best (gain, feature, threshold) for the rows in ``rows`` (boolean mask)."""
    G, H = grad[rows].sum(), hess[rows].sum()
    parent = G * G / (H + cfg.l2_leaf)
    best = (0.0, -1, 0.0)
    for j in range(X.shape[1]):
        idx = order[j][rows[order[j]]]
        if len(idx) < 2 * cfg.min_samples_leaf:
            continue
        xs = X[idx, j]
        gl = np.cumsum(grad[idx])[:-1]
        hl = np.cumsum(hess[idx])[:-1]
        # valid cut positions sit between distinct consecutive values
        cut = xs[1:] > xs[:-1]
        pos = np.arange(1, len(idx))
        cut &= (pos >= cfg.min_samples_leaf) & (len(idx) - pos >= cfg.min_samples_leaf)
        if not cut.any():
            continue
        gain = gl**2 / (hl + cfg.l2_leaf) + (G - gl) ** 2 / (H - hl + cfg.l2_leaf) - parent
        gain = np.where(cut, gain, -np.inf)
        k = int(np.argmax(gain))  # first maximiser = lowest threshold
        if gain[k] > best[0] + 1e-12:
            best = (float(gain[k]), j, float((xs[k] + xs[k + 1]) / 2.0))
    return best


def _grow(X, grad, hess, rows, order, depth, cfg: GbtConfig) -> Node:
    value = -grad[rows].sum() / (hess[rows].sum() + cfg.l2_leaf)
    if depth >= cfg.max_depth or rows.sum() < 2 * cfg.min_samples_leaf:
        return Node(value=float(value))
    gain, j, thr = _best_split(X, grad, hess, rows, order, cfg)
    if j < 0:
        return Node(value=float(value))
    go_left = X[:, j] <= thr
    return Node(
        feature=j,
        threshold=thr,
        left=_grow(X, grad, hess, rows & go_left, order, depth + 1, cfg),
        right=_grow(X, grad, hess, rows & ~go_left, order, depth + 1, cfg),
    )


def fit_gbt(train_features, train_labels, config: Optional[GbtConfig] = None) -> GbtModel:
    """Newton boosting on the logistic loss with depth-limited trees."""
    cfg = config or GbtConfig()
    X, y = _check_xy(train_features, train_labels)
    rate = float(np.clip(y.mean(), EPS, 1 - EPS))
    base = float(np.log(rate / (1.0 - rate)))
    order = [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]
    score = np.full(len(y), base)
    all_rows = np.ones(len(y), dtype=bool)
    trees = []
    for _ in range(cfg.n_rounds):
        p = expit(score)
        grad, hess = p - y, np.maximum(p * (1 - p), EPS)
        tree = _grow(X, grad, hess, all_rows, order, 0, cfg)
        trees.append(tree)
        score += cfg.shrinkage * tree.predict(X)
    return GbtModel(trees=trees, shrinkage=cfg.shrinkage, base_score=base, n_features=X.shape[1], config=cfg)


# --------------------------------------------------------------------------

Model = Union[LogisticModel, GbtModel]


def predict_proba(model, features) -> np.ndarray:
    """Scores in (0, 1) from any object exposing ``predict_proba``."""
    return model.predict_proba(features)


def fit(kind: str, train_features, train_labels, **config) -> Model:
    if kind == "logistic":
        return fit_logistic(train_features, train_labels, LogisticConfig(**config))
    if kind == "gbt":
        return fit_gbt(train_features, train_labels, GbtConfig(**config))
    raise ValueError(f"unknown learner {kind!r}")


def model_to_dict(model: Model) -> dict:
    if isinstance(model, LogisticModel):
        return {
            "kind": "logistic",
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "config": asdict(model.config),
            "n_iters": model.n_iters,
        }
    return {
        "kind": "gbt",
        "base_score": model.base_score,
        "shrinkage": model.shrinkage,
        "n_features": model.n_features,
        "config": asdict(model.config),
        "trees": [t.to_dict() for t in model.trees],
    }


def model_from_dict(d: dict) -> Model:
    if d["kind"] == "logistic":
        return LogisticModel(
            weights=np.asarray(d["weights"], dtype=float),
            bias=float(d["bias"]),
            config=LogisticConfig(**d["config"]),
            n_iters=int(d.get("n_iters", 0)),
        )
    if d["kind"] == "gbt":
        return GbtModel(
            trees=[Node.from_dict(t) for t in d["trees"]],
            shrinkage=float(d["shrinkage"]),
            base_score=float(d["base_score"]),
            n_features=int(d["n_features"]),
            config=GbtConfig(**d["config"]),
        )
    raise ValueError(f"unknown model kind {d.get('kind')!r}")


def save_model(model: Model, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path: str | os.PathLike) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
