"""Black-box predictor contract and the built-in reference models.

Every predictor consumes *encoded* rows (see :class:`codice.data.Preprocessor`):
standardized continuous columns followed in schema order by one-hot blocks.
Any object exposing ``task``, ``n_classes``, ``predict_proba`` and
``predict`` with the semantics below can be explained.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit, log_expit, logsumexp, softmax

from .data import CLASSIFICATION, REGRESSION
from .errors import CodiceError, ConfigurationError


class Predictor(ABC):
    task: str = CLASSIFICATION
    n_classes: int | None = None

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities; a 1-D row gives a 1-D probability vector."""
        if self.task != CLASSIFICATION:
            raise CodiceError("predict_proba called on a regression predictor")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        P = self._proba(np.atleast_2d(X))
        return P[0] if single else P

    def predict(self, X) -> np.ndarray:
        """Argmax class (ties to the lowest index) or regression value."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if self.task == CLASSIFICATION:
            out = np.argmax(self._proba(X2), axis=1)
        else:
            out = self._value(X2)
        return out[0] if single else out

    def _proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _value(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @abstractmethod
    def to_dict(self) -> dict[str, Any]: ...


class LogisticModel(Predictor):
    """Binary (sigmoid, 1-D ``coef``) or multinomial (softmax, 2-D ``coef``)
    logistic regression."""

    def __init__(self, coef, intercept=0.0, loss_history=None):
        self.coef = np.asarray(coef, dtype=float)
        self.intercept = np.asarray(intercept, dtype=float)
        if self.coef.ndim == 1:
            self.n_classes = 2
            self.intercept = self.intercept.reshape(())
        else:
            self.n_classes = self.coef.shape[1]
            if self.intercept.shape != (self.n_classes,):
                raise ValueError("multinomial intercept needs one entry per class")
        self.task = CLASSIFICATION
        self.loss_history = list(loss_history or [])

    def logits(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.coef + self.intercept

    def _proba(self, X):
        z = self.logits(X)
        if self.n_classes == 2 and self.coef.ndim == 1:
            p1 = expit(z)
            return np.column_stack([1.0 - p1, p1])
        return softmax(z, axis=1)

    def to_dict(self):
        return {"kind": "logistic", "coef": self.coef.tolist(), "intercept": self.intercept.tolist()}


class KNNProbabilityModel(Predictor):
    """Class frequencies among the k nearest training rows (Euclidean)."""

    def __init__(self, X, y, k: int, n_classes: int | None = None):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=np.int64)
        if not 1 <= k <= len(self.X):
            raise ValueError(f"k={k} must lie in [1, n_train={len(self.X)}]")
        self.k = int(k)
        self.n_classes = int(n_classes if n_classes is not None else self.y.max() + 1)
        self.task = CLASSIFICATION
        self._tree = cKDTree(self.X)

    def _proba(self, X):
        _, idx = self._tree.query(X, k=self.k)
        idx = np.asarray(idx).reshape(len(X), self.k)
        labels = self.y[idx]
        counts = np.zeros((len(X), self.n_classes))
        for c in range(self.n_classes):
            counts[:, c] = (labels == c).sum(axis=1)
        return counts / self.k

    def to_dict(self):
        return {"kind": "knn", "k": self.k, "n_classes": self.n_classes, "X": self.X.tolist(), "y": self.y.tolist()}


class LinearRegressionModel(Predictor):
    def __init__(self, coef, intercept=0.0):
        self.coef = np.asarray(coef, dtype=float).reshape(-1)
        self.intercept = float(intercept)
        self.task = REGRESSION
        self.n_classes = None

    def _value(self, X):
        return X @ self.coef + self.intercept

    def to_dict(self):
        return {"kind": "linear", "coef": self.coef.tolist(), "intercept": self.intercept}


def _logistic_objective(n_features: int, n_classes: int, X, y, l2):
    n = len(X)
    if n_classes == 2:
        s = 2.0 * y - 1.0  # +-1 labels

        def f(theta):
            w, b = theta[:-1], theta[-1]
            z = X @ w + b
            loss = -np.mean(log_expit(s * z)) + 0.5 * l2 * w @ w
            r = -s * expit(-s * z) / n
            grad = np.concatenate([X.T @ r + l2 * w, [r.sum()]])
            return loss, grad

        return f, n_features + 1

    Y = np.eye(n_classes)[y]

    def f(theta):
        W = theta[: n_features * n_classes].reshape(n_features, n_classes)
        b = theta[n_features * n_classes:]
        Z = X @ W + b
        lse = logsumexp(Z, axis=1)
        loss = np.mean(lse - (Z * Y).sum(axis=1)) + 0.5 * l2 * np.sum(W * W)
        R = (np.exp(Z - lse[:, None]) - Y) / n
        grad = np.concatenate([(X.T @ R + l2 * W).ravel(), R.sum(axis=0)])
        return loss, grad

    return f, (n_features + 1) * n_classes


def train_logistic(X, y, l2_penalty: float = 1e-3, max_iter: int = 5000, tol: float = 1e-6) -> LogisticModel:
    """Full-batch gradient descent with Armijo backtracking on the
    L2-regularized mean log-loss, starting from zero weights.

    Stops when the gradient norm drops below ``tol`` or after ``max_iter``
    iterations. The per-iteration loss is kept in ``loss_history``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if l2_penalty < 0:
        raise ValueError("l2_penalty must be >= 0")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ConfigurationError("training data contains a single class")
    n_classes = int(y.max()) + 1
    p = X.shape[1]
    f, size = _logistic_objective(p, n_classes, X, y, l2_penalty)
    theta = np.zeros(size)
    loss, grad = f(theta)
    history = [loss]
    step = 1.0
    for _ in range(max_iter):
        gnorm2 = grad @ grad
        if np.sqrt(gnorm2) < tol:
            break
        step *= 2.0
        while True:
            cand = theta - step * grad
            new_loss, new_grad = f(cand)
            if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            break
        theta, loss, grad = cand, new_loss, new_grad
        history.append(loss)
    if n_classes == 2:
        return LogisticModel(theta[:-1], theta[-1], history)
    W = theta[: p * n_classes].reshape(p, n_classes)
    return LogisticModel(W, theta[p * n_classes:], history)


def train_knn_prob(X, y, k: int = 10, n_classes: int | None = None) -> KNNProbabilityModel:
    if k > len(X):
        raise ValueError(f"k={k} exceeds the number of training rows ({len(X)})")
    return KNNProbabilityModel(X, y, k, n_classes)


def train_linear_regression(X, y, l2_penalty: float = 0.0) -> LinearRegressionModel:
    """Ridge regression with an unpenalized intercept."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    if l2_penalty > 0:
        w = np.linalg.solve(Xc.T @ Xc + l2_penalty * np.eye(X.shape[1]), Xc.T @ yc)
    else:
        w = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    return LinearRegressionModel(w, ym - xm @ w)


def accuracy(predictor: Predictor, X, y) -> float:
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    if predictor.task != CLASSIFICATION:
        raise CodiceError("accuracy needs a classifier")
    return float(np.mean(predictor.predict(np.atleast_2d(X)) == y))


def model_from_dict(doc: dict[str, Any]) -> Predictor:
    kind = doc.get("kind")
    if kind == "logistic":
        return LogisticModel(doc["coef"], doc["intercept"])
    if kind == "knn":
        return KNNProbabilityModel(doc["X"], doc["y"], doc["k"], doc["n_classes"])
    if kind == "linear":
        return LinearRegressionModel(doc["coef"], doc["intercept"])
    raise ConfigurationError(f"unknown model kind {kind!r}")


def save_model(model: Predictor, path: str | Path, schema_hash: str | None = None, **extra) -> None:
    doc = {"model": model.to_dict(), "schema_hash": schema_hash, **extra}
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path, schema_hash: str | None = None) -> Predictor:
    doc = json.loads(Path(path).read_text())
    if schema_hash is not None and doc.get("schema_hash") not in (None, schema_hash):
        raise ConfigurationError(f"{path}: model was trained on a different schema")
    return model_from_dict(doc["model"])
