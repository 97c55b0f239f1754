import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mia_bench.exceptions import InvalidInputError, SchemaError
from mia_bench.metrics import (
    EvalReport,
    MidputRangeWarning,
    compute_midput,
    confidence_histogram,
    eval_reports_to_csv,
    leakage_kl,
    midput_reports_to_csv,
    read_eval_reports,
    reports_to_json,
)
from reference_results import MIDPUT, ROWS, TOLERANCE

# n/(n+20) * ln(n+1) at n=50, the smoothed-histogram KL for one-hot vs uniform k=4
ONE_HOT_VS_UNIFORM_KL = 2.808446880517375551


def report(dataset, cond):
    return EvalReport(cond, *ROWS[dataset][cond])


unit = st.floats(0.0, 1.0)


def reports():
    return st.tuples(unit, unit, unit, unit)


class TestMidput:
    @pytest.mark.parametrize("dataset,cond", [("CIFAR10", "DynaNoise"), ("ImageNet-10", "SELENA")])
    def test_published_rows(self, dataset, cond):
        m = compute_midput(report(dataset, "None"), report(dataset, cond))
        got = (m.midput_c, m.midput_l, m.midput_s, m.midput_overall)
        np.testing.assert_allclose(got, MIDPUT[dataset, cond], atol=TOLERANCE, rtol=0)

    def test_identity_is_zero(self):
        base = report("CIFAR10", "None")
        m = compute_midput(base, EvalReport("Same", *ROWS["CIFAR10"]["None"]))
        assert all(abs(v) < 1e-12 for v in m.row()[1:])

    @given(reports(), reports(), st.floats(0.0, 0.2))
    def test_accuracy_antisymmetry(self, a, b, delta):
        b = (min(b[0], 0.8),) + b[1:]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MidputRangeWarning)
            m0 = compute_midput(EvalReport("None", *a), EvalReport("D", *b))
            m1 = compute_midput(EvalReport("None", *a), EvalReport("D", b[0] + delta, *b[1:]))
        for name in ("midput_c", "midput_l", "midput_s", "midput_overall"):
            assert getattr(m1, name) - getattr(m0, name) == pytest.approx(delta, abs=1e-12)

    @given(reports(), reports())
    def test_bounded_or_warned(self, a, b):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            m = compute_midput(EvalReport("None", *a), EvalReport("D", *b))
        vals = (m.midput_c, m.midput_l, m.midput_s, m.midput_overall)
        assert all(-2 <= v <= 2 for v in vals)
        out_of_range = any(not -1 <= v <= 1 for v in vals)
        assert out_of_range == any(issubclass(w.category, MidputRangeWarning) for w in caught)

    def test_extremes_are_warned_not_rejected(self):
        # defended accuracy up and every ASR down by 1 gives the largest value, 2
        with pytest.warns(MidputRangeWarning):
            m = compute_midput(EvalReport("None", 0.0, 1.0, 1.0, 1.0), EvalReport("D", 1.0, 0.0, 0.0, 0.0))
        assert m.midput_overall == pytest.approx(2.0)
        with pytest.warns(MidputRangeWarning):
            m = compute_midput(EvalReport("None", 1.0, 0.0, 0.0, 0.0), EvalReport("D", 0.0, 1.0, 1.0, 1.0))
        assert m.midput_overall == pytest.approx(-2.0)

    def test_baseline_must_be_none(self):
        with pytest.raises(InvalidInputError):
            compute_midput(report("CIFAR10", "SELENA"), report("CIFAR10", "DynaNoise"))

    def test_report_range(self):
        with pytest.raises(InvalidInputError):
            EvalReport("None", 1.2, 0.5, 0.5, 0.5)


class TestLeakage:
    def test_identical_is_zero(self):
        P = np.random.default_rng(0).dirichlet(np.ones(4), 30)
        assert leakage_kl(P, P) == pytest.approx(0.0, abs=1e-12)

    def test_one_hot_vs_uniform(self):
        members = np.tile([1.0, 0.0, 0.0, 0.0], (50, 1))
        nonmembers = np.full((50, 4), 0.25)
        assert leakage_kl(members, nonmembers) == pytest.approx(ONE_HOT_VS_UNIFORM_KL, abs=1e-12)
        assert leakage_kl(members, nonmembers) > 1

    @given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 1000))
    def test_nonnegative(self, n, m, seed):
        rng = np.random.default_rng(seed)
        assert leakage_kl(rng.dirichlet(np.ones(3), n), rng.dirichlet(np.ones(3), m)) >= 0

    def test_histogram_edges(self):
        h = confidence_histogram([[1.0, 0.0], [0.5, 0.5]], num_bins=4)
        # counts [0,0,1,1] + 1 each
        np.testing.assert_allclose(h, [1 / 6, 1 / 6, 2 / 6, 2 / 6])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            leakage_kl(np.empty((0, 2)), [[0.5, 0.5]])


class TestSerialization:
    def test_csv_roundtrip(self, tmp_path):
        reps = [report("CIFAR10", c) for c in ("None", "SELENA", "DynaNoise")]
        path = tmp_path / "r.csv"
        path.write_text(eval_reports_to_csv(reps))
        assert read_eval_reports(path) == reps
        assert path.read_text().splitlines()[0] == "defense,model,confidence,loss,shadow"

    def test_midput_csv_columns(self):
        m = compute_midput(report("CIFAR10", "None"), report("CIFAR10", "DynaNoise"))
        lines = midput_reports_to_csv([m]).splitlines()
        assert lines[0].split(",")[5:] == ["midput_c", "midput_l", "midput_s", "midput_overall"]
        assert math.isclose(float(lines[1].split(",")[-1]), m.midput_overall)

    def test_json(self):
        base, dyn = report("CIFAR10", "None"), report("CIFAR10", "DynaNoise")
        obj = json.loads(reports_to_json([base, dyn], [compute_midput(base, dyn)]))
        assert EvalReport.from_dict(obj["eval"][1]) == dyn
        assert obj["midput"][0]["defense"] == "DynaNoise"

    def test_bad_csv(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("defense,model,confidence,loss,shadow\nNone,0.5,x,0.5,0.5\n")
        with pytest.raises(SchemaError, match="line 2"):
            read_eval_reports(p)
        p.write_text("a,b\n")
        with pytest.raises(SchemaError, match="line 1"):
            read_eval_reports(p)
