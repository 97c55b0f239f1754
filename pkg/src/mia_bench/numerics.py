"""Scalar and vector primitives: softmax, entropy, KL, seeded Gaussian draws.

Every function here is pure. Randomness is threaded explicitly through
:class:`SeededRng`, whose draw sequence is a function of
``(master_seed, stream_id)`` only, so per-sample work gives the same result
whether it runs serially or in parallel.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import (
    DivergenceUndefinedError,
    InvalidInputError,
    InvalidLabelError,
    InvalidParameterError,
)

LOSS_FLOOR = 1e-12
PROB_SUM_TOL = 1e-9

_UINT64_MASK = (1 << 64) - 1


def check_logits(z) -> np.ndarray:
    """Return ``z`` as a float64 array with at least two finite entries on its last axis."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 2:
        raise InvalidInputError(f"logit vectors need k >= 2 entries, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite (no NaN or inf)")
    return z


def check_probs(p) -> np.ndarray:
    """Validate a probability vector (or a batch of them along the last axis)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] < 2:
        raise InvalidInputError(f"probability vectors need k >= 2 entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError("probabilities must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > PROB_SUM_TOL):
        raise InvalidInputError("probabilities must sum to 1")
    return p


def check_label(label, k: int) -> int:
    if isinstance(label, (bool, np.bool_)) or int(label) != label:
        raise InvalidLabelError(f"label {label!r} is not an integer class index")
    label = int(label)
    if not 0 <= label < k:
        raise InvalidLabelError(f"label {label} outside [0, {k})")
    return label


def softmax(z, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis.

    Uses max-subtraction, so logits up to ``|z| ~ 1e4`` do not overflow.
    ``temperature == 1`` leaves ``z`` untouched before exponentiation, which
    keeps the zero-noise defense bit-identical to a plain softmax.
    """
    if not temperature > 0 or not math.isfinite(temperature):
        raise InvalidParameterError(f"temperature must be positive and finite, got {temperature}")
    z = check_logits(z)
    if temperature != 1.0:
        z = z / temperature
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _entropy_terms(p: np.ndarray) -> np.ndarray:
    # 0 * log 0 = 0 by continuity
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, -p * np.log(safe), 0.0)


def shannon_entropy(p) -> float | np.ndarray:
    """Entropy in nats, ``-sum p_i ln p_i``; batched over leading axes."""
    p = check_probs(p)
    h = _entropy_terms(p).sum(axis=-1)
    h = np.clip(h, 0.0, math.log(p.shape[-1]))
    return float(h) if h.ndim == 0 else h


def kl_divergence(p, q) -> float:
    """``D_KL(p || q)`` in nats.

    Raises
    ------
    DivergenceUndefinedError
        If some ``p_i > 0`` has ``q_i == 0``.
    """
    p = check_probs(p)
    q = check_probs(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(support & (q == 0)):
        raise DivergenceUndefinedError("q has zero mass where p is positive")
    terms = np.where(support, p * (np.log(np.where(support, p, 1.0)) - np.log(np.where(support, q, 1.0))), 0.0)
    return max(float(terms.sum()), 0.0)


def cross_entropy_loss(p, true_label) -> float:
    """``-ln p[y]`` with the probability floored at ``LOSS_FLOOR``."""
    p = check_probs(p)
    if p.ndim != 1:
        raise InvalidInputError("cross_entropy_loss takes a single probability vector")
    y = check_label(true_label, p.shape[0])
    return -math.log(max(float(p[y]), LOSS_FLOOR))


class SeededRng:
    """Counter-derived random stream.

    The generator for ``(master_seed, stream_id)`` is built from
    ``numpy.random.SeedSequence(master_seed, spawn_key=(stream_id,))``, so
    stream ``i`` never depends on how many draws other streams consumed.

    Parameters
    ----------
    master_seed : int
        64-bit unsigned experiment seed.
    stream_id : int
        64-bit unsigned per-sample (or per-task) counter.
    """

    __slots__ = ("master_seed", "stream_id", "_gen")

    def __init__(self, master_seed: int, stream_id: int = 0):
        for name, v in (("master_seed", master_seed), ("stream_id", stream_id)):
            if int(v) != v or not 0 <= int(v) <= _UINT64_MASK:
                raise InvalidParameterError(f"{name} must be a 64-bit unsigned integer, got {v!r}")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"SeededRng(master_seed={self.master_seed}, stream_id={self.stream_id})"

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def normal_vector(self, variance: float, k: int) -> np.ndarray:
        """``k`` draws from ``N(0, variance)``, consumed in index order.

        Equivalent to ``k`` successive :func:`gaussian_sample` calls on the
        same stream.
        """
        variance = _check_variance(variance)
        z = self._gen.standard_normal(k)
        if variance == 0.0:
            return np.zeros(k)
        return math.sqrt(variance) * z


def derive_seed(master_seed: int, *keys: int) -> int:
    """Deterministically mix ``master_seed`` with integer ``keys`` into a new 64-bit seed."""
    ss = np.random.SeedSequence([int(master_seed) & _UINT64_MASK, *[int(k) & _UINT64_MASK for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_variance(variance: float) -> float:
    variance = float(variance)
    if not variance >= 0 or not math.isfinite(variance):
        raise InvalidParameterError(f"variance must be finite and >= 0, got {variance}")
    return variance


def gaussian_sample(rng: SeededRng, variance: float) -> float:
    """One draw from ``N(0, variance)``; exactly ``0.0`` when ``variance == 0``.

    A standard-normal value is consumed even at zero variance so the
    stream position does not depend on the variance.
    """
    variance = _check_variance(variance)
    z = float(rng.standard_normal())
    if variance == 0.0:
        return 0.0
    return math.sqrt(variance) * z
