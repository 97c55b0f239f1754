"""Output-side membership defenses.

``dynanoise_transform`` perturbs a query's logits with isotropic Gaussian
noise whose variance grows with the model's confidence on that query, then
re-normalizes through a temperature softmax. ``static_noise_transform`` is
the same pipeline with a fixed variance. The SELENA-style ensemble trains
sub-models on overlapping splits and distills their held-out predictions
into one deployable MLP.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .exceptions import ConfigurationError, InvalidParameterError
from .models import MLPClassifier, MlpParams, TrainConfig, predict_logits
from .numerics import SeededRng, check_logits, derive_seed, shannon_entropy, softmax


class LowTemperatureWarning(UserWarning):
    """Smoothing temperature at or below 1 sharpens rather than smooths outputs."""


def _check_temperature(t):
    if not t > 0 or not math.isfinite(t):
        raise InvalidParameterError(f"temperature must be positive and finite, got {t}")
    if t <= 1:
        warnings.warn(f"temperature {t} <= 1 does not smooth the output distribution",
                      LowTemperatureWarning, stacklevel=3)


@dataclass(frozen=True)
class DynaNoiseConfig:
    base_variance: float = 0.5
    lambda_scale: float = 4.0
    temperature: float = 2.0

    def __post_init__(self):
        if not self.base_variance >= 0 or not math.isfinite(self.base_variance):
            raise InvalidParameterError(f"base_variance must be >= 0, got {self.base_variance}")
        if not self.lambda_scale >= 0 or not math.isfinite(self.lambda_scale):
            raise InvalidParameterError(f"lambda_scale must be >= 0, got {self.lambda_scale}")
        _check_temperature(self.temperature)


@dataclass(frozen=True)
class StaticNoiseConfig:
    variance: float = 0.5
    temperature: float = 2.0

    def __post_init__(self):
        if not self.variance >= 0 or not math.isfinite(self.variance):
            raise InvalidParameterError(f"variance must be >= 0, got {self.variance}")
        _check_temperature(self.temperature)


def sensitivity_score(z) -> float:
    """Normalized confidence ``1 - H(softmax(z)) / ln k``, clamped to [0, 1]."""
    z = check_logits(z)
    k = z.shape[-1]
    r = 1.0 - shannon_entropy(softmax(z)) / math.log(k)
    return float(min(max(r, 0.0), 1.0))


def noise_variance(r: float, cfg: DynaNoiseConfig) -> float:
    if not 0.0 <= r <= 1.0:
        raise InvalidParameterError(f"sensitivity score must be in [0, 1], got {r}")
    return cfg.base_variance * (1.0 + cfg.lambda_scale * r)


def _perturb_and_smooth(z: np.ndarray, variance: float, temperature: float, rng: SeededRng) -> np.ndarray:
    eta = rng.normal_vector(variance, z.shape[0])
    return softmax(z + eta, temperature)


def dynanoise_transform(z, cfg: DynaNoiseConfig, rng: SeededRng) -> np.ndarray:
    """Defend one logit vector; consumes ``k`` normal draws from ``rng`` in logit order."""
    z = check_logits(z)
    if z.ndim != 1:
        raise InvalidParameterError("dynanoise_transform takes a single logit vector")
    var = noise_variance(sensitivity_score(z), cfg)
    return _perturb_and_smooth(z, var, cfg.temperature, rng)


def static_noise_transform(z, cfg: StaticNoiseConfig, rng: SeededRng) -> np.ndarray:
    z = check_logits(z)
    if z.ndim != 1:
        raise InvalidParameterError("static_noise_transform takes a single logit vector")
    return _perturb_and_smooth(z, cfg.variance, cfg.temperature, rng)


class _NoiseDefense(TransformerMixin, BaseEstimator):
    """Shared batch plumbing: row ``i`` uses stream ``stream_offset + i`` of ``random_state``."""

    def fit(self, X=None, y=None):
        return self

    def _row_transform(self, z, rng):
        raise NotImplementedError

    def transform(self, X, stream_offset: int = 0) -> np.ndarray:
        Z = check_logits(X)
        if Z.ndim != 2:
            raise InvalidParameterError("transform expects an (n, k) logit matrix")
        out = np.empty_like(Z)
        for i, z in enumerate(Z):
            out[i] = self._row_transform(z, SeededRng(self.random_state, stream_offset + i))
        return out


class DynaNoise(_NoiseDefense):
    """Confidence-adaptive logit noise followed by temperature smoothing.

    Stateless: ``fit`` is a no-op and ``transform`` maps an (n, k) logit
    matrix to (n, k) probability rows.
    """

    def __init__(self, base_variance=0.5, lambda_scale=4.0, temperature=2.0, random_state=0):
        self.base_variance = base_variance
        self.lambda_scale = lambda_scale
        self.temperature = temperature
        self.random_state = random_state

    @property
    def config(self) -> DynaNoiseConfig:
        return DynaNoiseConfig(self.base_variance, self.lambda_scale, self.temperature)

    def transform(self, X, stream_offset: int = 0):
        self._cfg = self.config
        return super().transform(X, stream_offset)

    def _row_transform(self, z, rng):
        var = noise_variance(sensitivity_score(z), self._cfg)
        return _perturb_and_smooth(z, var, self._cfg.temperature, rng)


class StaticNoise(_NoiseDefense):
    """Fixed-variance logit noise followed by temperature smoothing."""

    def __init__(self, variance=0.5, temperature=2.0, random_state=0):
        self.variance = variance
        self.temperature = temperature
        self.random_state = random_state

    @property
    def config(self) -> StaticNoiseConfig:
        return StaticNoiseConfig(self.variance, self.temperature)

    def transform(self, X, stream_offset: int = 0):
        self._cfg = self.config
        return super().transform(X, stream_offset)

    def _row_transform(self, z, rng):
        return _perturb_and_smooth(z, self._cfg.variance, self._cfg.temperature, rng)


# -- SELENA-style ensemble ---------------------------------------------------

@dataclass(frozen=True)
class SelenaConfig:
    num_submodels: int = 5
    partitions_per_sample: int = 2
    submodel_train: TrainConfig = field(default_factory=TrainConfig)
    distill_train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        K, L = self.num_submodels, self.partitions_per_sample
        if K < 2:
            raise InvalidParameterError(f"num_submodels must be >= 2, got {K}")
        if not 1 <= L < K:
            raise InvalidParameterError(f"partitions_per_sample must satisfy 1 <= L < K, got L={L}, K={K}")


@dataclass
class SelenaModel:
    """Deployed distilled network plus the training-time ensemble.

    ``excluders[s]`` lists the ``L`` sub-models that never see sample ``s``.
    """

    distilled: MlpParams
    submodels: list
    excluders: np.ndarray

    def training_mask(self) -> np.ndarray:
        """Boolean (K, n) matrix: ``mask[i, s]`` iff sub-model ``i`` trains on sample ``s``."""
        K = len(self.submodels)
        n = self.excluders.shape[0]
        mask = np.ones((K, n), dtype=bool)
        for s, ex in enumerate(self.excluders):
            mask[ex, s] = False
        return mask


def exclusion_map(n: int, K: int, L: int, seed: int) -> np.ndarray:
    """Pick, for each of ``n`` samples, ``L`` distinct sub-models that exclude it."""
    rng = np.random.default_rng(seed)
    return np.stack([np.sort(rng.choice(K, size=L, replace=False)) for _ in range(n)]) if n else \
        np.empty((0, L), dtype=np.int64)


def selena_train(pool: Dataset, cfg: SelenaConfig, seed: int, hidden_width: int = 64,
                 threads: int = 1) -> SelenaModel:
    K, L = cfg.num_submodels, cfg.partitions_per_sample
    n = len(pool)
    if n < K:
        raise InvalidParameterError(f"need at least K={K} samples, got {n}")
    excluders = exclusion_map(n, K, L, derive_seed(seed, 0))
    mask = np.ones((K, n), dtype=bool)
    for s, ex in enumerate(excluders):
        mask[ex, s] = False
    for i in range(K):
        if not mask[i].any():
            raise ConfigurationError(f"sub-model {i} has an empty training set", key="selena")

    def fit_sub(i):
        sub_cfg = replace(cfg.submodel_train, seed=derive_seed(seed, 1, i))
        est = MLPClassifier(hidden_width, sub_cfg.epochs, sub_cfg.learning_rate, sub_cfg.batch_size,
                            n_classes=pool.num_classes, random_state=sub_cfg.seed)
        return est.fit(pool.X[mask[i]], pool.y[mask[i]]).params_

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            submodels = list(ex.map(fit_sub, range(K)))
    else:
        submodels = [fit_sub(i) for i in range(K)]

    soft = np.zeros((n, pool.num_classes))
    for i, params in enumerate(submodels):
        held_out = ~mask[i]
        if held_out.any():
            soft[held_out] += softmax(predict_logits(params, pool.X[held_out]))
    soft /= L

    d_cfg = replace(cfg.distill_train, seed=derive_seed(seed, 2))
    student = MLPClassifier(hidden_width, d_cfg.epochs, d_cfg.learning_rate, d_cfg.batch_size,
                            n_classes=pool.num_classes, random_state=d_cfg.seed)
    student.fit_soft(pool.X, soft)
    return SelenaModel(student.params_, submodels, excluders)


def selena_inference(model: SelenaModel, features) -> np.ndarray:
    return softmax(predict_logits(model.distilled, features))


class SelenaClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around :func:`selena_train`; predicts with the distilled model."""

    def __init__(self, num_submodels=5, partitions_per_sample=2, hidden_width=64, epochs=15,
                 learning_rate=0.01, batch_size=64, n_classes=None, random_state=0, threads=1):
        self.num_submodels = num_submodels
        self.partitions_per_sample = partitions_per_sample
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.random_state = random_state
        self.threads = threads

    def fit(self, X, y):
        y = np.asarray(y)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        tc = TrainConfig(self.epochs, self.learning_rate, self.batch_size)
        cfg = SelenaConfig(self.num_submodels, self.partitions_per_sample, tc, tc)
        self.model_ = selena_train(Dataset(X, y, k), cfg, self.random_state, self.hidden_width, self.threads)
        self.classes_ = np.arange(k)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return predict_logits(self.model_.distilled, X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)
