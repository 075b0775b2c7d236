import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from presel.budgeting import (
    resolve_tau,
    task_quotas,
    task_scores,
    task_weights,
)
from presel.errors import InfeasibleBudget, InvalidScore, MalformedRecord
from presel.relevance import IrsRecord

from conftest import manifest_from


def irs_rec(sample_id, value):
    return IrsRecord(sample_id=sample_id, nll_with_q=value, nll_without_q=1.0, irs=value)


class TestTaskScores:
    def test_single_value(self):
        m = manifest_from([("a", ["A"], True), ("b", ["A"])])
        scores = task_scores([irs_rec("a", 1.0)], m)
        assert scores.scores["A"] == 1.0
        assert scores.ref_counts["A"] == 1

    def test_mean(self):
        m = manifest_from([("a", ["B"], True), ("b", ["B"], True), ("c", ["B"])])
        scores = task_scores([irs_rec("a", 0.5), irs_rec("b", 1.5)], m)
        assert scores.scores["B"] == 1.0

    def test_multi_task_reference_counts_for_each_task(self):
        m = manifest_from([("a", ["A", "B"], True), ("b", ["A"]), ("c", ["B"])])
        scores = task_scores([irs_rec("a", 0.75)], m)
        assert scores.scores["A"] == 0.75
        assert scores.scores["B"] == 0.75

    def test_fallback_is_mean_of_observed(self):
        m = manifest_from([("a", ["A"], True), ("b", ["B"], True), ("c", ["C"])])
        scores = task_scores([irs_rec("a", 0.5), irs_rec("b", 1.5)], m)
        assert scores.scores["C"] == 1.0
        assert scores.fallback_tasks == ("C",)

    def test_no_observed_scores_is_neutral(self):
        m = manifest_from([("a", ["A"]), ("b", ["B"])])
        scores = task_scores([], m)
        assert scores.scores == {"A": 1.0, "B": 1.0}
        assert set(scores.fallback_tasks) == {"A", "B"}

    def test_unknown_sample_rejected(self):
        m = manifest_from([("a", ["A"], True)])
        with pytest.raises(MalformedRecord):
            task_scores([irs_rec("zzz", 1.0)], m)

    def test_non_reference_sample_rejected(self):
        m = manifest_from([("a", ["A"], True), ("b", ["A"])])
        with pytest.raises(MalformedRecord):
            task_scores([irs_rec("b", 1.0)], m)

    def test_matches_groupby_mean(self, rng):
        tasks = ["t0", "t1", "t2"]
        spec = []
        values = {}
        for i in range(150):
            t = tasks[i % 3]
            spec.append((f"s{i}", [t], True))
            values[f"s{i}"] = float(rng.uniform(0.1, 3.0))
        m = manifest_from(spec)
        scores = task_scores([irs_rec(s, v) for s, v in values.items()], m)
        for t in tasks:
            members = [values[f"s{i}"] for i in range(150) if tasks[i % 3] == t]
            assert math.isclose(scores.scores[t], sum(members) / len(members), rel_tol=1e-12)


class TestTaskWeights:
    def test_single_task(self):
        assert task_weights({"A": 7.3}) == {"A": 1.0}

    def test_equal_scores_symmetric(self):
        w = task_weights({t: 2.0 for t in "ABCD"})
        assert all(v == pytest.approx(0.25, abs=1e-15) for v in w.values())

    def test_explicit_tau_example(self):
        w = task_weights({"A": 0.0, "B": math.log(3.0)}, tau=1.0)
        assert w["A"] == pytest.approx(0.75, abs=1e-12)
        assert w["B"] == pytest.approx(0.25, abs=1e-12)

    def test_auto_tau(self):
        assert resolve_tau("auto", 4) == 0.5
        assert resolve_tau("auto", 1) == 1.0
        assert resolve_tau(2.5, 9) == 2.5

    def test_invalid(self):
        with pytest.raises(InvalidScore):
            task_weights({"A": float("nan")})
        with pytest.raises(InvalidScore):
            task_weights({})
        with pytest.raises(InvalidScore):
            resolve_tau(-1.0, 3)

    def test_additive_shift_invariance(self, rng):
        scores = {f"t{i}": float(rng.uniform(0, 3)) for i in range(12)}
        shifted = {t: s + 5.0 for t, s in scores.items()}
        w1 = task_weights(scores)
        w2 = task_weights(shifted)
        for t in scores:
            assert w1[t] == pytest.approx(w2[t], abs=1e-9)

    def test_antimonotone_in_score(self, rng):
        scores = {f"t{i}": float(v) for i, v in enumerate(rng.permutation(np.linspace(0.1, 2.9, 15)))}
        w = task_weights(scores)
        ranked = sorted(scores, key=scores.get)
        weights = [w[t] for t in ranked]
        assert all(a > b for a, b in zip(weights, weights[1:]))

    def test_temperature_limits(self):
        scores = {"a": 0.2, "b": 1.1, "c": 2.9}
        hot = task_weights(scores, tau=1e6)
        assert max(hot.values()) - min(hot.values()) < 1e-3
        cold = task_weights(scores, tau=1e-6)
        assert cold["a"] > 0.999


class TestTaskQuotas:
    def test_even_split(self):
        q = task_quotas({"a": 0.5, "b": 0.5}, 10, {"a": 100, "b": 100})
        assert q == {"a": 5, "b": 5}

    def test_thirds_tie_break_lexicographic(self):
        w = {t: 1.0 / 3.0 for t in ("a", "b", "c")}
        q = task_quotas(w, 10, {t: 100 for t in w})
        assert q == {"a": 4, "b": 3, "c": 3}

    def test_clamp_and_redistribute(self):
        q = task_quotas({"a": 0.9, "b": 0.1}, 10, {"a": 3, "b": 100})
        assert q == {"a": 3, "b": 7}

    def test_infeasible(self):
        with pytest.raises(InfeasibleBudget) as exc:
            task_quotas({"a": 1.0}, 10, {"a": 4})
        assert exc.value.max_feasible == 4

    @settings(max_examples=300, deadline=None)
    @given(st.data())
    def test_conservation(self, data):
        n = data.draw(st.integers(min_value=1, max_value=12))
        raw = data.draw(st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=n, max_size=n))
        total_w = sum(raw)
        weights = {f"t{i:02d}": v / total_w for i, v in enumerate(raw)}
        pools = {t: data.draw(st.integers(min_value=0, max_value=60)) for t in weights}
        target = data.draw(st.integers(min_value=0, max_value=sum(pools.values())))
        quotas = task_quotas(weights, target, pools)
        assert sum(quotas.values()) == target
        assert all(0 <= quotas[t] <= pools[t] for t in weights)
