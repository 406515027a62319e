"""Differentiable objectives over flat parameter vectors.

Conventions: squared loss is half the squared residual; classification
losses are cross-entropy with natural log. Batch losses and gradients are
means over the batch.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import DivergenceError, InvalidParameterError


class Objective:
    kind = "base"
    is_classifier = False
    n_features: int
    param_dim: int

    def _check(self, params, X):
        if params.shape != (self.param_dim,):
            raise InvalidParameterError(f"expected {self.param_dim} parameters, got shape {params.shape}")
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise InvalidParameterError(f"expected {self.n_features} features, got shape {X.shape}")

    def pointwise_loss(self, params, X, y) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, params, X, y, weights=None) -> np.ndarray:
        """Mean gradient over the batch; ``weights`` scales each point's term."""
        raise NotImplementedError

    def predict(self, params, X) -> np.ndarray:
        raise NotImplementedError

    def loss(self, params, X, y) -> float:
        return float(np.mean(self.pointwise_loss(params, X, y)))

    def init_params(self, rng: np.random.Generator, scale: float) -> np.ndarray:
        return scale * rng.standard_normal(self.param_dim)

    def describe(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features, "param_dim": self.param_dim}


class SquaredLossLinear(Objective):
    """``f(w; x, y) = 0.5 * (<w, x> - y)**2`` without intercept."""

    kind = "linear"

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.param_dim = n_features

    def predict(self, params, X):
        return X @ params

    def pointwise_loss(self, params, X, y):
        self._check(params, X)
        r = X @ params - y
        return 0.5 * r * r

    def gradient(self, params, X, y, weights=None):
        self._check(params, X)
        r = X @ params - y
        if weights is not None:
            r = r * weights
        return (X * r[:, None]).mean(axis=0)

    def hessian(self, X) -> np.ndarray:
        return X.T @ X / len(X)


class MultinomialLogistic(Objective):
    """Softmax regression; parameters are ``W`` (features x classes) then bias."""

    kind = "logistic"
    is_classifier = True

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes
        self.param_dim = (n_features + 1) * n_classes

    def _unpack(self, params):
        k = self.n_features * self.n_classes
        return params[:k].reshape(self.n_features, self.n_classes), params[k:]

    def logits(self, params, X):
        W, b = self._unpack(params)
        return X @ W + b

    def predict(self, params, X):
        return np.argmax(self.logits(params, X), axis=1)

    def pointwise_loss(self, params, X, y):
        self._check(params, X)
        z = self.logits(params, X)
        return logsumexp(z, axis=1) - z[np.arange(len(y)), y]

    def gradient(self, params, X, y, weights=None):
        self._check(params, X)
        p = softmax(self.logits(params, X), axis=1)
        p[np.arange(len(y)), y] -= 1.0
        if weights is not None:
            p *= weights[:, None]
        p /= len(y)
        return np.concatenate([(X.T @ p).ravel(), p.sum(axis=0)])


class TanhMLP(Objective):
    """One hidden tanh layer followed by a softmax output layer."""

    kind = "mlp"
    is_classifier = True

    def __init__(self, n_features: int, n_classes: int, hidden: int = 16):
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden = hidden
        d, h, k = n_features, hidden, n_classes
        self._sizes = [d * h, h, h * k, k]
        self.param_dim = sum(self._sizes)

    def _unpack(self, params):
        d, h, k = self.n_features, self.hidden, self.n_classes
        a, b, c, _ = np.cumsum(self._sizes)
        return params[:a].reshape(d, h), params[a:b], params[b:c].reshape(h, k), params[c:]

    def _forward(self, params, X):
        W1, b1, W2, b2 = self._unpack(params)
        H = np.tanh(X @ W1 + b1)
        return H, H @ W2 + b2

    def predict(self, params, X):
        return np.argmax(self._forward(params, X)[1], axis=1)

    def pointwise_loss(self, params, X, y):
        self._check(params, X)
        z = self._forward(params, X)[1]
        return logsumexp(z, axis=1) - z[np.arange(len(y)), y]

    def gradient(self, params, X, y, weights=None):
        self._check(params, X)
        W1, b1, W2, b2 = self._unpack(params)
        H, z = self._forward(params, X)
        dz = softmax(z, axis=1)
        dz[np.arange(len(y)), y] -= 1.0
        if weights is not None:
            dz *= weights[:, None]
        dz /= len(y)
        dH = (dz @ W2.T) * (1.0 - H * H)
        return np.concatenate([(X.T @ dH).ravel(), dH.sum(axis=0), (H.T @ dz).ravel(), dz.sum(axis=0)])

    def init_params(self, rng, scale):
        # hidden layer needs a non-degenerate start regardless of `scale`
        n_w1 = self.n_features * self.hidden
        w1 = rng.standard_normal(n_w1) / math.sqrt(self.n_features)
        rest = scale * rng.standard_normal(self.param_dim - n_w1)
        return np.concatenate([w1, rest])


def make_objective(kind: str, n_features: int, n_classes: int | None = None, hidden: int = 16) -> Objective:
    if kind == "linear":
        return SquaredLossLinear(n_features)
    if n_classes is None or n_classes < 2:
        raise InvalidParameterError(f"{kind} objective needs n_classes >= 2")
    if kind == "logistic":
        return MultinomialLogistic(n_features, n_classes)
    if kind == "mlp":
        return TanhMLP(n_features, n_classes, hidden)
    raise InvalidParameterError(f"unknown objective kind {kind!r}")


def _as_batch(features, labels):
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if X.ndim == 1:
        X, y = X[None, :], y.reshape(1)
    return X, y


def loss(objective: Objective, params, features, labels) -> float:
    """Loss of one point (1-D ``features``) or mean loss of a batch."""
    X, y = _as_batch(features, labels)
    return objective.loss(np.asarray(params, dtype=float), X, y)


def gradient(objective: Objective, params, features, labels) -> np.ndarray:
    X, y = _as_batch(features, labels)
    if len(y) == 0:
        raise InvalidParameterError("gradient of an empty batch")
    return objective.gradient(np.asarray(params, dtype=float), X, y)


def sgd_steps(objective: Objective, params, X, y, steps: int, lr: float, batch_size: int | None,
              rng: np.random.Generator | None, sample_weight=None) -> np.ndarray:
    """Run ``steps`` SGD updates from ``params``.

    Minibatches of ``batch_size`` are drawn uniformly with replacement from
    ``(X, y)``; ``batch_size=None`` uses the full batch and draws nothing.
    """
    if steps < 0:
        raise InvalidParameterError("steps must be >= 0")
    if lr < 0:
        raise InvalidParameterError("lr must be non-negative")
    n = len(y)
    if n == 0:
        raise InvalidParameterError("sgd on an empty dataset")
    w = np.array(params, dtype=float, copy=True)
    # overflow is reported as DivergenceError below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            if batch_size is None:
                g = objective.gradient(w, X, y, sample_weight)
            else:
                idx = rng.integers(0, n, size=batch_size)
                g = objective.gradient(w, X[idx], y[idx], None if sample_weight is None else sample_weight[idx])
            w = w - lr * g
            if not np.all(np.isfinite(w)):
                raise DivergenceError(f"non-finite parameters after SGD step {step}", step=step)
    return w


def epoch_steps(n_points: int, batch_size: int | None) -> int:
    """SGD steps that make up one pass over ``n_points``."""
    if batch_size is None:
        return 1
    return max(1, math.ceil(n_points / batch_size))


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0 when either is the zero vector."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidParameterError("cosine_similarity needs equal shapes")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
