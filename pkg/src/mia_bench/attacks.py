"""Confidence-threshold, loss-threshold and shadow-model membership attacks.

All verdicts use strict inequalities, so inputs sitting exactly on a
threshold are called non-members.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import MEMBER, NONMEMBER, Dataset
from .exceptions import InvalidInputError, InvalidParameterError
from .models import (
    LogisticAttackClassifier,
    LogRegParams,
    MLPClassifier,
    TrainConfig,
    logreg_score,
)
from .numerics import LOSS_FLOOR, check_label, check_probs, derive_seed

ATTACKS = ("confidence", "loss", "shadow")


@dataclass(frozen=True)
class AttackThresholds:
    tau: float = 0.9
    gamma: float = 0.5

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise InvalidParameterError(f"tau must be in (0, 1), got {self.tau}")
        if not self.gamma > 0:
            raise InvalidParameterError(f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class ShadowFeatures:
    max_confidence: float
    ce_loss: float
    margin: float

    def as_array(self) -> np.ndarray:
        return np.array([self.max_confidence, self.ce_loss, self.margin])


@dataclass(frozen=True)
class AttackDecision:
    sample_id: str
    verdict: str
    attack: str


@dataclass
class AttackSuiteResult:
    decisions: dict = field(default_factory=dict)
    asr: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)


def _verdict(flag) -> str:
    return MEMBER if flag else NONMEMBER


def confidence_attack(p, tau: float = 0.9) -> str:
    p = check_probs(p)
    return _verdict(float(p.max()) > tau)


def loss_attack(p, true_label: int, gamma: float = 0.5) -> str:
    p = check_probs(p)
    y = check_label(true_label, p.shape[-1])
    loss = -math.log(max(float(p[y]), LOSS_FLOOR))
    return _verdict(loss < gamma)


def shadow_feature_matrix(P, labels) -> np.ndarray:
    """Vectorized shadow features for an (n, k) probability matrix: columns max, loss, margin."""
    P = check_probs(P)
    labels = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or labels.shape != (P.shape[0],):
        raise InvalidInputError("need an (n, k) probability matrix and n labels")
    k = P.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidInputError(f"labels must lie in [0, {k})")
    top2 = np.sort(P, axis=1)[:, -2:]
    loss = -np.log(np.maximum(P[np.arange(P.shape[0]), labels], LOSS_FLOOR))
    return np.column_stack([top2[:, 1], loss, top2[:, 1] - top2[:, 0]])


def extract_shadow_features(p, true_label: int) -> ShadowFeatures:
    p = check_probs(p)
    check_label(true_label, p.shape[-1])
    row = shadow_feature_matrix(p[None, :], [true_label])[0]
    return ShadowFeatures(*map(float, row))


def train_shadow_attack(shadow_pool: Dataset, target_arch, cfg: TrainConfig,
                        thresholds: AttackThresholds | None = None, seed: int = 0) -> LogRegParams:
    """Train a same-architecture shadow MLP and a logistic attack on its outputs.

    ``target_arch`` is ``(d, h, k)``. The pool is split in half (members /
    non-members) under ``seed``; ``thresholds`` is accepted for interface
    symmetry and does not affect the learned classifier.
    """
    return ShadowModelAttack(hidden_width=target_arch[1], epochs=cfg.epochs,
                             learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                             random_state=seed, n_classes=target_arch[2],
                             ).fit(shadow_pool.X, shadow_pool.y, input_dim=target_arch[0]).params_


def shadow_attack(classifier: LogRegParams, features: ShadowFeatures) -> str:
    score = float(logreg_score(classifier, features.as_array()))
    return _verdict(score > 0.5)


class ShadowModelAttack(ClassifierMixin, BaseEstimator):
    """Shadow-model membership attack as an estimator.

    ``fit`` takes the attacker's auxiliary labelled data. ``predict`` takes
    an (n, k) matrix of the victim's output probabilities plus the true
    labels and returns 1 for "member".
    """

    def __init__(self, hidden_width=64, epochs=15, learning_rate=0.01, batch_size=64,
                 n_classes=None, random_state=0):
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y, input_dim=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] < 4:
            raise InvalidParameterError(f"shadow pool needs at least 4 samples, got {X.shape[0]}")
        if input_dim is not None and X.shape[1] != input_dim:
            raise InvalidInputError(f"shadow pool has {X.shape[1]} features, target expects {input_dim}")
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        perm = np.random.default_rng(derive_seed(self.random_state, 0)).permutation(X.shape[0])
        half = X.shape[0] // 2
        s_in, s_out = perm[:half], perm[half:]
        shadow = MLPClassifier(self.hidden_width, self.epochs, self.learning_rate, self.batch_size,
                               n_classes=k, random_state=derive_seed(self.random_state, 1))
        shadow.fit(X[s_in], y[s_in])
        feats = np.vstack([
            shadow_feature_matrix(shadow.predict_proba(X[s_in]), y[s_in]),
            shadow_feature_matrix(shadow.predict_proba(X[s_out]), y[s_out]),
        ])
        membership = np.concatenate([np.ones(len(s_in), np.int64), np.zeros(len(s_out), np.int64)])
        attack = LogisticAttackClassifier(self.epochs, self.learning_rate, self.batch_size,
                                          random_state=derive_seed(self.random_state, 2))
        attack.fit(feats, membership)
        self.shadow_ = shadow
        self.shadow_split_ = (s_in, s_out)
        self.params_ = attack.params_
        self.train_features_ = feats
        self.train_membership_ = membership
        self.classes_ = np.array([0, 1])
        return self

    def predict(self, P, labels):
        check_is_fitted(self, "params_")
        return (logreg_score(self.params_, shadow_feature_matrix(P, labels)) > 0.5).astype(np.int64)

    def score(self, P, labels, membership):
        return float(np.mean(self.predict(P, labels) == np.asarray(membership)))


def run_attack_suite(samples, thresholds: AttackThresholds, classifier: LogRegParams | None,
                     sample_ids=None) -> AttackSuiteResult:
    """Apply every attack to every sample and compute per-attack ASR.

    ``samples`` is a sequence of ``(probs, true_label, membership)`` with
    membership given as ``"member"``/``"nonmember"`` or a bool. With
    ``classifier=None`` the shadow attack is skipped.
    """
    samples = list(samples)
    if not samples:
        raise InvalidInputError("attack suite needs at least one sample")
    P = check_probs(np.array([s[0] for s in samples], dtype=np.float64))
    labels = np.array([s[1] for s in samples], dtype=np.int64)
    truth = np.array([s[2] == MEMBER if isinstance(s[2], str) else bool(s[2]) for s in samples])
    ids = [str(i) for i in range(len(samples))] if sample_ids is None else [str(s) for s in sample_ids]

    feats = shadow_feature_matrix(P, labels)
    verdicts = {
        "confidence": feats[:, 0] > thresholds.tau,
        "loss": feats[:, 1] < thresholds.gamma,
    }
    if classifier is not None:
        verdicts["shadow"] = logreg_score(classifier, feats) > 0.5
    result = AttackSuiteResult()
    for name, v in verdicts.items():
        result.decisions[name] = [AttackDecision(sid, _verdict(flag), name) for sid, flag in zip(ids, v)]
        result.asr[name] = float(np.mean(v == truth))
    result.truth = dict(zip(ids, (_verdict(t) for t in truth)))
    return result


def write_decisions_csv(path, result: AttackSuiteResult) -> None:
    """``sample_id,attack,verdict,truth`` rows, grouped by attack in suite order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "attack", "verdict", "truth"])
        for name in ATTACKS:
            for d in result.decisions.get(name, []):
                w.writerow([d.sample_id, d.attack, d.verdict, result.truth[d.sample_id]])
