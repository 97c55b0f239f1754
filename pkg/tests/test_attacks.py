import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from mia_bench.attacks import (
    AttackThresholds,
    ShadowFeatures,
    ShadowModelAttack,
    confidence_attack,
    extract_shadow_features,
    loss_attack,
    run_attack_suite,
    shadow_attack,
    train_shadow_attack,
    write_decisions_csv,
)
from mia_bench.data import generate_blobs, split_target_shadow
from mia_bench.exceptions import InvalidInputError, InvalidLabelError, InvalidParameterError
from mia_bench.models import LogRegParams, TrainConfig, logreg_score
from mia_bench.numerics import softmax

NEG_LN_07 = 0.356674943938732379
LN_2 = 0.693147180559945309


def probs(k_max=6):
    return st.lists(st.floats(-10, 10), min_size=2, max_size=k_max).map(lambda z: softmax(z))


class TestThresholdAttacks:
    def test_confidence_examples(self):
        assert confidence_attack([0.95, 0.05], 0.9) == "member"
        assert confidence_attack([0.9, 0.1], 0.9) == "nonmember"
        assert confidence_attack([0.25] * 4, 0.25) == "nonmember"

    def test_loss_examples(self):
        assert loss_attack([0.9, 0.1], 0, 0.5) == "member"
        assert loss_attack([0.5, 0.5], 0, 0.5) == "nonmember"
        assert loss_attack([1.0, 0.0], 0, 1e-9) == "member"

    def test_loss_floor_handles_zero(self):
        assert loss_attack([1.0, 0.0], 1, 0.5) == "nonmember"

    def test_loss_boundary_is_nonmember(self):
        p = math.exp(-0.5)
        gamma = -math.log(p)
        assert loss_attack([p, 1 - p], 0, gamma) == "nonmember"

    def test_bad_label(self):
        with pytest.raises(InvalidLabelError):
            loss_attack([0.5, 0.5], 2)

    def test_bad_thresholds(self):
        for kw in ({"tau": 0.0}, {"tau": 1.0}, {"gamma": 0.0}):
            with pytest.raises(InvalidParameterError):
                AttackThresholds(**kw)

    @given(probs(), st.floats(0.01, 0.98), st.floats(0.0, 0.5))
    def test_confidence_monotone_in_tau(self, p, tau, bump):
        if confidence_attack(p, tau) == "nonmember":
            assert confidence_attack(p, min(tau + bump, 0.99)) == "nonmember"

    @given(probs(), st.floats(0.01, 5.0), st.floats(0.0, 1.0))
    def test_loss_monotone_in_gamma(self, p, gamma, frac):
        if loss_attack(p, 0, gamma) == "nonmember":
            assert loss_attack(p, 0, gamma * frac + 1e-12) == "nonmember"


class TestShadowFeatures:
    def test_example(self):
        f = extract_shadow_features([0.7, 0.2, 0.1], 0)
        assert f.max_confidence == pytest.approx(0.7)
        assert f.ce_loss == pytest.approx(NEG_LN_07, abs=1e-12)
        assert f.margin == pytest.approx(0.5)

    def test_one_hot_and_uniform(self):
        assert extract_shadow_features([1.0, 0.0, 0.0], 0) == ShadowFeatures(1.0, 0.0, 1.0)
        f = extract_shadow_features([0.5, 0.5], 1)
        assert (f.max_confidence, f.margin) == (0.5, 0.0)
        assert f.ce_loss == pytest.approx(LN_2, abs=1e-15)

    def test_floor(self):
        assert extract_shadow_features([1.0, 0.0], 1).ce_loss == pytest.approx(-math.log(1e-12))

    @given(probs(), st.integers(0, 1))
    def test_margin_bounds(self, p, y):
        f = extract_shadow_features(p, y)
        assert 0 <= f.margin <= f.max_confidence <= 1
        assert f.ce_loss >= 0


class TestShadowVerdict:
    def test_zero_weights_score_half(self):
        clf = LogRegParams(np.zeros(3), 0.0)
        assert shadow_attack(clf, ShadowFeatures(0.9, 0.1, 0.8)) == "nonmember"

    def test_monotone_in_positive_weight(self):
        clf = LogRegParams(np.array([2.0, 0.0, 0.0]), -1.0)
        verdicts = [shadow_attack(clf, ShadowFeatures(c, 0.0, 0.0)) for c in np.linspace(0, 1, 21)]
        first = verdicts.index("member")
        assert all(v == "member" for v in verdicts[first:])


class TestShadowTraining:
    def test_pool_of_three(self):
        tiny = generate_blobs(3, 1, 4, 1.0, seed=0)
        with pytest.raises(InvalidParameterError):
            train_shadow_attack(tiny, (4, 8, 3), TrainConfig(), seed=0)

    def test_deterministic(self):
        pool = generate_blobs(4, 30, 16, 1.0, seed=1)
        a = train_shadow_attack(pool, (16, 64, 4), TrainConfig(), seed=3)
        b = train_shadow_attack(pool, (16, 64, 4), TrainConfig(), seed=3)
        assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias

    def test_arch_mismatch(self):
        pool = generate_blobs(4, 30, 16, 1.0, seed=1)
        with pytest.raises(InvalidInputError):
            train_shadow_attack(pool, (8, 64, 4), TrainConfig(), seed=3)

    def test_attack_learns_when_shadow_overfits(self):
        accs = []
        for seed in range(5):
            ds = generate_blobs(4, 200, 16, 1.0, seed=seed)
            pool = ds.subset(split_target_shadow(ds, 0.7, 0.5, seed=seed).shadow_pool)
            est = ShadowModelAttack(random_state=seed, n_classes=4).fit(pool.X, pool.y)
            s_in, s_out = est.shadow_split_
            gap = est.shadow_.score(pool.X[s_in], pool.y[s_in]) - est.shadow_.score(pool.X[s_out], pool.y[s_out])
            if gap >= 0.1:
                pred = logreg_score(est.params_, est.train_features_) > 0.5
                accs.append(float(np.mean(pred == est.train_membership_)))
        assert len(accs) >= 3
        assert sum(a >= 0.55 for a in accs) > len(accs) / 2, accs

    def test_estimator_params(self):
        est = ShadowModelAttack(hidden_width=8, random_state=2)
        assert clone(est).get_params() == est.get_params()


class TestSuite:
    def test_uniform_balanced_is_chance(self):
        u = [0.25] * 4
        samples = [(u, 0, True)] * 5 + [(u, 1, False)] * 5
        res = run_attack_suite(samples, AttackThresholds(), None)
        assert res.asr["confidence"] == 0.5
        assert "shadow" not in res.asr

    def test_asr_arithmetic(self):
        hi, lo = [0.95, 0.05], [0.6, 0.4]
        samples = [(hi, 0, True)] * 4 + [(lo, 0, True)] * 1 + [(lo, 0, False)] * 3 + [(hi, 0, False)] * 2
        assert run_attack_suite(samples, AttackThresholds(), None).asr["confidence"] == pytest.approx(0.7)

    def test_perfect_loss_separation(self):
        samples = [([1.0, 0.0, 0.0], 0, "member")] * 6 + [([1 / 3] * 3, 0, "nonmember")] * 6
        assert run_attack_suite(samples, AttackThresholds(), None).asr["loss"] == 1.0

    @given(st.lists(st.tuples(probs(3).filter(lambda p: len(p) == 3), st.integers(0, 2)), min_size=1, max_size=20))
    def test_flip_identity(self, rows):
        samples = [(p, y, True) for p, y in rows] + [(p, y, False) for p, y in rows]
        flipped = [(p, y, not m) for p, y, m in samples]
        clf = LogRegParams(np.array([1.0, -1.0, 0.5]), 0.1)
        a = run_attack_suite(samples, AttackThresholds(), clf).asr
        b = run_attack_suite(flipped, AttackThresholds(), clf).asr
        for name in a:
            assert 0 <= a[name] <= 1
            assert a[name] == pytest.approx(1 - b[name], abs=1e-12)

    def test_matches_single_sample_functions(self):
        rng = np.random.default_rng(0)
        P = softmax(rng.standard_normal((20, 3)) * 3)
        y = rng.integers(0, 3, 20)
        clf = LogRegParams(np.array([3.0, -1.0, 1.0]), -1.0)
        res = run_attack_suite([(p, t, i < 10) for i, (p, t) in enumerate(zip(P, y))], AttackThresholds(), clf)
        for i, (p, t) in enumerate(zip(P, y)):
            assert res.decisions["confidence"][i].verdict == confidence_attack(p, 0.9)
            assert res.decisions["loss"][i].verdict == loss_attack(p, t, 0.5)
            assert res.decisions["shadow"][i].verdict == shadow_attack(clf, extract_shadow_features(p, t))

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            run_attack_suite([], AttackThresholds(), None)

    def test_decisions_csv(self, tmp_path):
        samples = [([0.95, 0.05], 0, True), ([0.5, 0.5], 1, False)]
        res = run_attack_suite(samples, AttackThresholds(), None, sample_ids=["a", "b"])
        write_decisions_csv(tmp_path / "d.csv", res)
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines == ["sample_id,attack,verdict,truth",
                         "a,confidence,member,member", "b,confidence,nonmember,nonmember",
                         "a,loss,member,member", "b,loss,nonmember,nonmember"]
