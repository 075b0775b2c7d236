import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from presel.data import LossRecord
from presel.errors import DegenerateDenominator, EmptyResponse, InvalidLogprob
from presel.relevance import compute_irs_records, irs, response_nll


class TestResponseNll:
    def test_perfectly_predicted(self):
        assert response_nll([0.0, 0.0]) == 0.0

    def test_mean_of_negations(self):
        assert response_nll([-1.0, -3.0]) == 2.0

    def test_single_token(self):
        assert response_nll([-0.693147]) == pytest.approx(0.693147, abs=0)

    def test_empty(self):
        with pytest.raises(EmptyResponse):
            response_nll([])

    @pytest.mark.parametrize("bad", [0.1, float("nan"), float("inf"), -float("inf")])
    def test_invalid_element(self, bad):
        with pytest.raises(InvalidLogprob):
            response_nll([-1.0, bad])

    @given(st.lists(st.floats(min_value=-20.0, max_value=0.0), min_size=1, max_size=40))
    def test_permutation_invariant(self, logprobs):
        assert response_nll(logprobs) == response_nll(list(reversed(logprobs)))

    @given(
        st.lists(st.floats(min_value=-20.0, max_value=-0.01), min_size=1, max_size=20),
        st.floats(min_value=0.5, max_value=20.0),
    )
    def test_appending_below_mean_increases(self, logprobs, extra):
        base = response_nll(logprobs)
        worse = response_nll(logprobs + [-(base + extra)])
        assert worse > base


class TestIrs:
    def test_question_adds_nothing(self):
        assert irs(2.0, 2.0) == 1.0

    def test_quarter(self):
        assert irs(1.0, 4.0) == 0.25

    def test_degenerate_denominator(self):
        with pytest.raises(DegenerateDenominator):
            irs(2.0, 0.0)
        with pytest.raises(DegenerateDenominator):
            irs(2.0, 9e-9)

    def test_scale_invariance_exact_for_powers_of_two(self):
        for a in (0.5, 2.0, 1024.0):
            assert irs(a * 1.3, a * 2.7) == irs(1.3, 2.7)

    @given(
        st.floats(min_value=1e-3, max_value=50.0),
        st.floats(min_value=1e-3, max_value=50.0),
        st.floats(min_value=1e-3, max_value=1e3),
    )
    def test_scale_invariance(self, x, y, a):
        assert irs(a * x, a * y) == pytest.approx(irs(x, y), rel=1e-12)

    @given(
        st.floats(min_value=1e-3, max_value=50.0),
        st.floats(min_value=1e-3, max_value=50.0),
    )
    def test_below_one_iff_question_helps(self, x, y):
        assert (irs(x, y) < 1.0) == (x < y)


class TestComputeIrsRecords:
    def test_token_level(self):
        rec = LossRecord("a", token_logprobs_with_q=(-1.0, -1.0), token_logprobs_without_q=(-2.0, -2.0))
        result = compute_irs_records([rec])
        assert result.records[0].irs == 0.5

    def test_aggregated(self):
        rec = LossRecord("a", nll_with_q=3.0, nll_without_q=2.0)
        result = compute_irs_records([rec])
        assert result.records[0].irs == 1.5

    def test_token_level_takes_precedence(self):
        rec = LossRecord(
            "a",
            token_logprobs_with_q=(-1.0,),
            token_logprobs_without_q=(-4.0,),
            nll_with_q=9.0,
            nll_without_q=1.0,
        )
        result = compute_irs_records([rec])
        assert result.records[0].irs == 0.25

    def test_degenerate_goes_to_exclusions(self):
        records = [
            LossRecord("good", nll_with_q=1.0, nll_without_q=2.0),
            LossRecord("bad", token_logprobs_with_q=(-1.0,), token_logprobs_without_q=(0.0,)),
        ]
        result = compute_irs_records(records)
        assert [r.sample_id for r in result.records] == ["good"]
        assert [e.sample_id for e in result.excluded] == ["bad"]
        assert result.excluded[0].reason == "DegenerateDenominator"

    def test_matches_naive_recomputation(self, rng):
        records = []
        for i in range(100):
            n = int(rng.integers(1, 50))
            records.append(
                LossRecord(
                    f"s{i}",
                    token_logprobs_with_q=tuple(-rng.uniform(0.01, 5.0, n)),
                    token_logprobs_without_q=tuple(-rng.uniform(0.01, 5.0, n)),
                )
            )
        result = compute_irs_records(records)
        assert len(result.records) == 100
        for rec, out in zip(records, result.records):
            w = sum(-v for v in rec.token_logprobs_with_q) / len(rec.token_logprobs_with_q)
            wo = sum(-v for v in rec.token_logprobs_without_q) / len(rec.token_logprobs_without_q)
            naive = w / wo
            assert math.isclose(out.nll_with_q, w, rel_tol=1e-12)
            assert math.isclose(out.nll_without_q, wo, rel_tol=1e-12)
            assert math.isclose(out.irs, naive, rel_tol=1e-12)

    def test_output_preserves_input_order(self, rng):
        records = [LossRecord(f"s{i}", nll_with_q=1.0 + i, nll_without_q=2.0) for i in range(20)]
        result = compute_irs_records(records)
        assert [r.sample_id for r in result.records] == [f"s{i}" for i in range(20)]
