"""From-scratch GNB, logistic regression, linear SVM, and random forest.

All four expose one interface: :func:`fit` produces a :class:`TrainedModel`
and :func:`score` maps a feature vector to a real-valued positive-class
score (posterior for GNB, sigmoid for LR, vote fraction for RF, signed
margin for SVM). Fits are deterministic given (data, hyperparameters,
seed). LR and SVM standardize features internally using the training data;
GNB and RF consume raw features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from vulnsieve import forest as _forest

LR_MAX_ITER = 1000
LR_TOL = 1e-6
SVM_EPOCHS = 20
SVM_BATCH = 64


class ModelKind(str, Enum):
    GNB = "gnb"
    LR = "lr"
    SVM = "svm"
    RF = "rf"


@dataclass
class TrainedModel:
    kind: ModelKind
    hyper: dict[str, Any]
    params: dict[str, Any] = field(repr=False)
    seed: int = 0

    @property
    def n_features(self) -> int:
        if self.kind is ModelKind.GNB:
            return self.params["theta"].shape[1]
        if self.kind in (ModelKind.LR, ModelKind.SVM):
            return len(self.params["mean"])
        return self.params["forest"].n_features


def _validate_training_data(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-d array")
    if y.shape != (X.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    classes = np.unique(y)
    if not np.array_equal(classes, np.array([0, 1])):
        raise ValueError(f"need both classes 0 and 1 present, found {classes.tolist()}")
    return X, y


def _standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    return mean, scale


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_grad(
    params: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float
) -> tuple[float, np.ndarray]:
    """L2-regularized mean negative log-likelihood and its gradient.

    ``params`` is the weight vector with the unregularized bias appended.
    Exposed so the gradient can be checked against finite differences.
    """
    w, b = params[:-1], params[-1]
    z = X @ w + b
    s = 2.0 * y - 1.0
    loss = float(np.mean(np.logaddexp(0.0, -s * z)) + 0.5 * lam * (w @ w))
    p = _sigmoid(z)
    n = X.shape[0]
    grad = np.empty_like(params)
    grad[:-1] = X.T @ (p - y) / n + lam * w
    grad[-1] = float(np.mean(p - y))
    return loss, grad


def _sq_spectral_norm(X: np.ndarray, iters: int = 50) -> float:
    d = X.shape[1]
    v = np.ones(d) / math.sqrt(d)
    est = 0.0
    for _ in range(iters):
        u = X.T @ (X @ v)
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return 0.0
        v = u / norm
        est = norm
    return est


def _fit_lr(X: np.ndarray, y: np.ndarray, hyper: dict, seed: int) -> dict:
    lam = float(hyper.get("lam", 0.1))
    mean, scale = _standardize_fit(X)
    Xs = (X - mean) / scale
    n = Xs.shape[0]
    lipschitz = 1.05 * _sq_spectral_norm(Xs) / (4.0 * n) + lam + 1e-12
    step = 1.0 / lipschitz
    params = np.zeros(Xs.shape[1] + 1)
    momentum = params.copy()
    t_prev = 1.0
    for _ in range(LR_MAX_ITER):
        loss, grad = logistic_loss_grad(momentum, Xs, y, lam)
        if not math.isfinite(loss):
            step *= 0.5
            momentum = params.copy()
            t_prev = 1.0
            continue
        if float(np.max(np.abs(grad))) < LR_TOL:
            params = momentum
            break
        new_params = momentum - step * grad
        # Adaptive restart: drop momentum when it points against the gradient.
        if float(grad @ (new_params - params)) > 0.0:
            t_prev = 1.0
        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev)) / 2.0
        momentum = new_params + ((t_prev - 1.0) / t_new) * (new_params - params)
        params = new_params
        t_prev = t_new
    return {"w": params[:-1], "b": float(params[-1]), "mean": mean, "scale": scale, "lam": lam}


def _fit_svm(X: np.ndarray, y: np.ndarray, hyper: dict, seed: int) -> dict:
    c = float(hyper.get("C", 1.0))
    epochs = int(hyper.get("epochs", SVM_EPOCHS))
    batch = int(hyper.get("batch_size", SVM_BATCH))
    mean, scale = _standardize_fit(X)
    Xs = np.hstack([(X - mean) / scale, np.ones((X.shape[0], 1))])
    n = Xs.shape[0]
    lam = 1.0 / (c * n)
    s = 2.0 * y - 1.0
    rng = np.random.default_rng(seed)
    w = np.zeros(Xs.shape[1])
    radius = 1.0 / math.sqrt(lam)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            sel = order[start : start + batch]
            t += 1
            eta = 1.0 / (lam * t)
            margins = s[sel] * (Xs[sel] @ w)
            viol = margins < 1.0
            w *= 1.0 - eta * lam
            if np.any(viol):
                w += (eta / len(sel)) * (s[sel][viol] @ Xs[sel][viol])
            norm = float(np.linalg.norm(w))
            if norm > radius:
                w *= radius / norm
    return {"w": w[:-1], "b": float(w[-1]), "mean": mean, "scale": scale, "C": c}


def _fit_gnb(X: np.ndarray, y: np.ndarray, hyper: dict, seed: int) -> dict:
    vs = float(hyper.get("var_smoothing", 1e-9))
    theta = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    var = np.stack([X[y == c].var(axis=0) for c in (0, 1)])
    epsilon = vs * float(X.var(axis=0).max())
    if epsilon == 0.0:
        epsilon = vs
    var += epsilon
    counts = np.array([np.sum(y == 0), np.sum(y == 1)], dtype=np.float64)
    return {
        "theta": theta,
        "var": var,
        "log_prior": np.log(counts / counts.sum()),
        "epsilon": epsilon,
    }


def fit(
    kind: ModelKind | str,
    X: np.ndarray,
    y: np.ndarray,
    hyper: dict[str, Any] | None = None,
    seed: int = 0,
) -> TrainedModel:
    """Fit one classifier; ``y`` holds 0/1 labels with 1 = positive class."""
    kind = ModelKind(kind)
    hyper = dict(hyper or {})
    X, y = _validate_training_data(X, y)
    if kind is ModelKind.GNB:
        params = _fit_gnb(X, y, hyper, seed)
    elif kind is ModelKind.LR:
        params = _fit_lr(X, y, hyper, seed)
    elif kind is ModelKind.SVM:
        params = _fit_svm(X, y, hyper, seed)
    else:
        params = {
            "forest": _forest.fit_forest(
                X,
                y,
                n_trees=int(hyper.get("n_trees", 100)),
                max_depth=hyper.get("max_depth"),
                min_leaf=int(hyper.get("min_leaf", 1)),
                seed=seed,
                bootstrap=bool(hyper.get("bootstrap", True)),
            )
        }
    return TrainedModel(kind=kind, hyper=hyper, params=params, seed=seed)


def score_many(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Positive-class scores for a batch of rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    p = model.params
    if model.kind is ModelKind.GNB:
        log_lik = np.empty((X.shape[0], 2))
        for c in (0, 1):
            diff = X - p["theta"][c]
            log_lik[:, c] = p["log_prior"][c] - 0.5 * np.sum(
                np.log(2.0 * np.pi * p["var"][c]) + diff * diff / p["var"][c], axis=1
            )
        return _sigmoid(log_lik[:, 1] - log_lik[:, 0])
    if model.kind is ModelKind.LR:
        z = ((X - p["mean"]) / p["scale"]) @ p["w"] + p["b"]
        return _sigmoid(z)
    if model.kind is ModelKind.SVM:
        return ((X - p["mean"]) / p["scale"]) @ p["w"] + p["b"]
    return _forest.forest_scores(p["forest"], X)


def score(model: TrainedModel, x: np.ndarray) -> float:
    return float(score_many(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Hard 0/1 predictions at the natural threshold per score type."""
    scores = score_many(model, X)
    threshold = 0.0 if model.kind is ModelKind.SVM else 0.5
    return (scores > threshold).astype(np.int64)


def default_grid(kind: ModelKind | str) -> list[dict[str, Any]]:
    """Hyperparameter candidates searched per classifier, order fixed."""
    kind = ModelKind(kind)
    if kind is ModelKind.GNB:
        return [{"var_smoothing": v} for v in (1e-9, 1e-8, 1e-7)]
    if kind is ModelKind.LR:
        return [{"lam": v} for v in (0.01, 0.1, 1.0)]
    if kind is ModelKind.SVM:
        return [{"C": v} for v in (0.1, 1.0, 10.0)]
    return [{"n_trees": 100, "max_depth": d} for d in (8, 16, None)]


# ---------------------------------------------------------------------------
# Serialization: versioned JSON document per model
# ---------------------------------------------------------------------------

_FORMAT = "vulnsieve-model"
_VERSION = 1


def _params_to_json(model: TrainedModel) -> dict:
    p = model.params
    if model.kind is ModelKind.RF:
        f: _forest.Forest = p["forest"]
        return {
            "n_features": f.n_features,
            "edges": [e.tolist() for e in f.edges_list],
            "trees": [
                {
                    "feature": t[0].tolist(),
                    "threshold_bin": t[1].tolist(),
                    "left": t[2].tolist(),
                    "right": t[3].tolist(),
                    "value": t[4].tolist(),
                }
                for t in f.trees
            ],
        }
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in p.items()}


def _params_from_json(kind: ModelKind, data: dict) -> dict:
    if kind is ModelKind.RF:
        trees = [
            (
                np.asarray(t["feature"], dtype=np.int32),
                np.asarray(t["threshold_bin"], dtype=np.uint8),
                np.asarray(t["left"], dtype=np.int32),
                np.asarray(t["right"], dtype=np.int32),
                np.asarray(t["value"], dtype=np.float64),
            )
            for t in data["trees"]
        ]
        edges = [np.asarray(e, dtype=np.float64) for e in data["edges"]]
        return {"forest": _forest.Forest(edges, trees, int(data["n_features"]))}
    out: dict[str, Any] = {}
    for k, v in data.items():
        out[k] = np.asarray(v, dtype=np.float64) if isinstance(v, list) else v
    return out


def save_model(model: TrainedModel, path: Path | str) -> None:
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "kind": model.kind.value,
        "hyper": model.hyper,
        "seed": model.seed,
        "params": _params_to_json(model),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_model(path: Path | str) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != _FORMAT or doc.get("version") != _VERSION:
        raise ValueError(f"{path}: not a {_FORMAT} v{_VERSION} document")
    kind = ModelKind(doc["kind"])
    return TrainedModel(
        kind=kind,
        hyper=doc["hyper"],
        params=_params_from_json(kind, doc["params"]),
        seed=int(doc["seed"]),
    )
