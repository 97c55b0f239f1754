"""From-scratch classifiers trained by minibatch SGD.

Two models live here: a one-hidden-layer ReLU MLP (target, shadow and
distilled models) and binary logistic regression (the shadow attack's final
classifier). Both follow the scikit-learn estimator protocol and keep their
fitted weights in plain dataclasses so the functional API and JSON
serialization do not need the estimator object.

The minibatch update uses the gradient of the loss *summed* over the batch,
``w -= lr * sum_i grad_i``. At desk scale (a few hundred examples, 15 epochs)
the mean-reduced update barely moves the weights at ``lr = 0.01``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset
from .exceptions import (
    DegenerateLabelsError,
    InvalidInputError,
    InvalidParameterError,
    TrainingDivergedError,
)
from .numerics import softmax


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    learning_rate: float = 0.01
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise InvalidParameterError(f"epochs must be an integer >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise InvalidParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvalidParameterError(f"batch_size must be an integer >= 1, got {self.batch_size}")


@dataclass
class MlpParams:
    """Weights of a ``d -> h -> k`` ReLU network (row-vector convention)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def shape(self):
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def arrays(self):
        return self.W1, self.b1, self.W2, self.b2

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()))

    def to_dict(self) -> dict:
        d, h, k = self.shape
        return {
            "kind": "mlp",
            "input_dim": d,
            "hidden_width": h,
            "num_classes": k,
            "W1": self.W1.ravel().tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.ravel().tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MlpParams":
        d, h, k = obj["input_dim"], obj["hidden_width"], obj["num_classes"]
        return cls(
            np.asarray(obj["W1"], dtype=np.float64).reshape(d, h),
            np.asarray(obj["b1"], dtype=np.float64),
            np.asarray(obj["W2"], dtype=np.float64).reshape(h, k),
            np.asarray(obj["b2"], dtype=np.float64),
        )


@dataclass
class LogRegParams:
    """Binary logistic regression on standardized features.

    ``feature_mean`` and ``feature_scale`` are the training-set statistics;
    inputs are mapped to ``(x - mean) / scale`` before ``w . x + b``.
    """

    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray = field(default=None)
    feature_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        m = self.weights.shape[0]
        self.feature_mean = np.zeros(m) if self.feature_mean is None else np.asarray(self.feature_mean, float)
        self.feature_scale = np.ones(m) if self.feature_scale is None else np.asarray(self.feature_scale, float)
        self.bias = float(self.bias)

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_scale

    def to_dict(self) -> dict:
        return {
            "kind": "logreg",
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LogRegParams":
        return cls(obj["weights"], obj["bias"], obj["feature_mean"], obj["feature_scale"])


# -- MLP math ----------------------------------------------------------------

def init_mlp(d: int, h: int, k: int, rng: np.random.Generator) -> MlpParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init for weights and biases."""
    b_in, b_hid = 1.0 / math.sqrt(d), 1.0 / math.sqrt(h)
    return MlpParams(
        rng.uniform(-b_in, b_in, (d, h)),
        rng.uniform(-b_in, b_in, h),
        rng.uniform(-b_hid, b_hid, (h, k)),
        rng.uniform(-b_hid, b_hid, k),
    )


def mlp_forward(params: MlpParams, X: np.ndarray) -> np.ndarray:
    hidden = np.maximum(X @ params.W1 + params.b1, 0.0)
    return hidden @ params.W2 + params.b2


def mlp_loss_and_grad(params: MlpParams, X: np.ndarray, targets: np.ndarray):
    """Summed soft-target cross-entropy and its gradient.

    ``targets`` is an (n, k) matrix of probability rows; one-hot rows give the
    usual hard-label loss.
    """
    pre = X @ params.W1 + params.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params.W2 + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -float(np.sum(targets * log_p))
    g = np.exp(log_p) - targets
    gW2 = hidden.T @ g
    gb2 = g.sum(axis=0)
    gh = g @ params.W2.T
    gh[pre <= 0] = 0.0
    gW1 = X.T @ gh
    gb1 = gh.sum(axis=0)
    return loss, MlpParams(gW1, gb1, gW2, gb2)


def _sgd_mlp(params: MlpParams, X, targets, cfg: TrainConfig, rng: np.random.Generator) -> MlpParams:
    n = X.shape[0]
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # overflow here is caught below as divergence
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = mlp_loss_and_grad(params, X[idx], targets[idx])
                epoch_loss += loss
                for w, gw in zip(params.arrays(), grad.arrays()):
                    w -= lr * gw
        if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(a)) for a in params.arrays()):
            raise TrainingDivergedError(
                f"loss diverged in epoch {epoch + 1}; try a smaller learning_rate (now {lr})"
            )
    return params


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """One-hidden-layer ReLU network trained with minibatch SGD.

    Labels are class indices ``0..n_classes-1``; ``n_classes`` defaults to
    ``max(y) + 1`` and should be set explicitly when a training subset may
    miss a class.
    """

    def __init__(self, hidden_width=64, epochs=15, learning_rate=0.01, batch_size=64,
                 n_classes=None, random_state=0):
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.learning_rate, self.batch_size, self.random_state)

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise InvalidInputError("y must be a 1-D array of class indices matching X")
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= k:
            raise InvalidInputError(f"labels must lie in [0, {k})")
        return self._fit_targets(X, np.eye(k)[y])

    def fit_soft(self, X, targets):
        """Fit against per-example probability targets (knowledge distillation)."""
        X = check_array(X, dtype=np.float64)
        targets = check_array(targets, dtype=np.float64)
        if targets.shape[0] != X.shape[0]:
            raise InvalidInputError("targets must have one row per example")
        return self._fit_targets(X, targets)

    def _fit_targets(self, X, targets):
        cfg = self._train_config()
        if int(self.hidden_width) != self.hidden_width or self.hidden_width < 1:
            raise InvalidParameterError(f"hidden_width must be >= 1, got {self.hidden_width}")
        d, k = X.shape[1], targets.shape[1]
        if k < 2:
            raise InvalidParameterError("need at least 2 classes")
        rng = np.random.default_rng(cfg.seed)
        params = init_mlp(d, int(self.hidden_width), k, rng)
        self.params_ = _sgd_mlp(params, X, targets, cfg, rng)
        self.classes_ = np.arange(k)
        self.n_features_in_ = d
        return self

    def decision_function(self, X) -> np.ndarray:
        """Raw logits, shape (n, k)."""
        check_is_fitted(self, "params_")
        return predict_logits(self.params_, X)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    @classmethod
    def from_params(cls, params: MlpParams, **kwargs) -> "MLPClassifier":
        d, h, k = params.shape
        est = cls(hidden_width=h, n_classes=k, **kwargs)
        est.params_ = params
        est.classes_ = np.arange(k)
        est.n_features_in_ = d
        return est


def train_mlp(train: Dataset, cfg: TrainConfig, hidden_width: int = 64) -> MlpParams:
    est = MLPClassifier(hidden_width, cfg.epochs, cfg.learning_rate, cfg.batch_size,
                        n_classes=train.num_classes, random_state=cfg.seed)
    return est.fit(train.X, train.y).params_


def predict_logits(params: MlpParams, features) -> np.ndarray:
    """Forward pass. Accepts one feature vector (returns (k,)) or a batch (returns (n, k))."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    d = params.W1.shape[0]
    if X.ndim != 2 or X.shape[1] != d:
        raise InvalidInputError(f"expected {d} features, got shape {x.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features must be finite")
    out = mlp_forward(params, X)
    return out[0] if single else out


def argmax_accuracy(scores, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidInputError("cannot score an empty set")
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def model_accuracy(params: MlpParams, eval_set: Dataset) -> float:
    return argmax_accuracy(predict_logits(params, eval_set.X), eval_set.y)


# -- logistic regression -----------------------------------------------------

def _sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logreg_loss_and_grad(weights: np.ndarray, bias: float, Xs: np.ndarray, y: np.ndarray):
    """Summed binary cross-entropy on already-standardized ``Xs``."""
    t = Xs @ weights + bias
    # log(1 + e^t) - y t, written stably
    loss = float(np.sum(np.logaddexp(0.0, t) - y * t))
    g = _sigmoid(t) - y
    return loss, Xs.T @ g, float(g.sum())


class LogisticAttackClassifier(ClassifierMixin, BaseEstimator):
    """Binary logistic regression with built-in feature standardization."""

    def __init__(self, epochs=15, learning_rate=0.01, batch_size=64, random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],) or not np.all(np.isin(y, (0, 1))):
            raise InvalidInputError("y must be a 1-D array of 0/1 labels matching X")
        if np.all(y == y[0]):
            raise DegenerateLabelsError("logistic regression needs both classes present")
        cfg = TrainConfig(self.epochs, self.learning_rate, self.batch_size, self.random_state)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        Xs = (X - mean) / scale
        w = np.zeros(X.shape[1])
        b = 0.0
        rng = np.random.default_rng(cfg.seed)
        yf = y.astype(np.float64)
        for epoch in range(cfg.epochs):
            order = rng.permutation(X.shape[0])
            for start in range(0, X.shape[0], cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                _, gw, gb = logreg_loss_and_grad(w, b, Xs[idx], yf[idx])
                w -= cfg.learning_rate * gw
                b -= cfg.learning_rate * gb
            if not (np.all(np.isfinite(w)) and math.isfinite(b)):
                raise TrainingDivergedError(f"logistic regression diverged in epoch {epoch + 1}")
        self.params_ = LogRegParams(w, b, mean, scale)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return logreg_score(self.params_, X)

    def predict_proba(self, X) -> np.ndarray:
        s = self.decision_function(X)
        return np.column_stack([1.0 - s, s])

    def predict(self, X) -> np.ndarray:
        # strict: a score of exactly 0.5 is class 0
        return (self.decision_function(X) > 0.5).astype(np.int64)

    @classmethod
    def from_params(cls, params: LogRegParams, **kwargs) -> "LogisticAttackClassifier":
        est = cls(**kwargs)
        est.params_ = params
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = params.weights.shape[0]
        return est


def logreg_score(params: LogRegParams, X) -> np.ndarray:
    """``sigmoid(w . standardize(x) + b)`` for a batch (n, m) or single vector (m,)."""
    x = np.asarray(X, dtype=np.float64)
    if x.shape[-1] != params.weights.shape[0]:
        raise InvalidInputError(f"expected {params.weights.shape[0]} features, got shape {x.shape}")
    return _sigmoid(params.standardize(x) @ params.weights + params.bias)


def train_logreg(features, labels, cfg: TrainConfig) -> LogRegParams:
    est = LogisticAttackClassifier(cfg.epochs, cfg.learning_rate, cfg.batch_size, cfg.seed)
    return est.fit(features, labels).params_
