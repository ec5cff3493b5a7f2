import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simulmma.attention import ConfigurationError
from simulmma.lm import NGramLM
from simulmma.model import ModelConfig
from simulmma.streaming import (
    CURVE_HEADER,
    PATIENT_THRESHOLD,
    EvalSummary,
    average_lagging,
    available_decision_points,
    computation_aware_al,
    corpus_quality,
    evaluate,
    offline_decode,
    quality_score,
    read_curve,
    simul_decode,
    wait_k_decode,
    wait_k_delays,
    write_curve,
    write_traces,
)
from simulmma.train import build_model

from conftest import TINY_MODEL, copy_pairs


class TestAverageLagging:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_wait_k_lags_by_k(self, k):
        assert average_lagging(wait_k_delays(k, 6, 6), 6) == pytest.approx(k)

    def test_full_read_first(self):
        # every write after the whole source: tau = 1, lag = S
        assert average_lagging([5, 5, 5], 5) == pytest.approx(5.0)

    def test_longer_target(self):
        # |y| = 2 |x| so the oracle advances half a unit per write; tau = 3
        assert average_lagging([1, 1, 2, 2], 2) == pytest.approx((1 + 0.5 + 1) / 3)

    def test_cutoff_ignores_tail(self):
        assert average_lagging([2, 4, 4, 4], 4) == average_lagging([2, 4, 9, 9], 4)

    def test_empty(self):
        with pytest.raises(ValueError):
            average_lagging([], 3)

    @given(st.lists(st.integers(1, 20), min_size=1, max_size=12), st.integers(1, 5))
    @settings(max_examples=80, deadline=None)
    def test_shift_invariance(self, raw, c):
        delays = sorted(raw)
        S = max(delays) + c + 1
        assert average_lagging([d + c for d in delays], S) == pytest.approx(average_lagging(delays, S) + c)


class TestComputationAware:
    def test_equals_al_without_compute(self):
        d = wait_k_delays(2, 5, 5)
        assert computation_aware_al([40.0 * x for x in d], d, 5, 40.0) == pytest.approx(40.0 * average_lagging(d, 5))

    def test_constant_overhead_shifts(self):
        d = [1, 2, 3]
        base = computation_aware_al([40.0 * x for x in d], d, 3)
        assert computation_aware_al([40.0 * x + 7 for x in d], d, 3) == pytest.approx(base + 7)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            computation_aware_al([1.0], [1, 2], 2)


class TestWaitK:
    def test_schedule(self):
        assert wait_k_delays(2, 4, 6) == [2, 3, 4, 4, 4, 4]

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            wait_k_delays(0, 3, 3)

    def test_decoder_follows_schedule(self, copy_model):
        model, pairs = copy_model
        for src, _ in pairs[:10]:
            trace = wait_k_decode(model, src, 2)
            S = len(src) + 1
            assert trace.delays == wait_k_delays(2, S, len(trace.hypothesis))

    def test_large_k_reads_everything(self, copy_model):
        model, pairs = copy_model
        src = pairs[0][0]
        trace = wait_k_decode(model, src, 50)
        assert set(trace.delays) == {len(src) + 1}
        assert trace.hypothesis == offline_decode(model, src)

    def test_decoder_rejects_bad_k(self, copy_model):
        with pytest.raises(ValueError):
            wait_k_decode(copy_model[0], ["w1"], 0)


class TestQuality:
    def test_identity(self):
        assert quality_score(list("abcde"), list("abcde")) == pytest.approx(100.0)

    def test_hand_example(self):
        expect = 100 * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
        assert quality_score(list("abcde"), list("abcdf")) == pytest.approx(expect)

    def test_brevity_penalty(self):
        expect = 100 * np.exp(1 - 6 / 5)
        assert quality_score(list("abcde"), list("abcdef")) == pytest.approx(expect)

    def test_no_overlap(self):
        assert quality_score(list("abcd"), list("wxyz")) == 0.0

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            corpus_quality([["a"]], [])


class TestDecisionPoints:
    def test_partial_group_only_when_exhausted(self):
        assert available_decision_points(5, 7, 2).tolist() == [1, 3]
        assert available_decision_points(7, 7, 2).tolist() == [1, 3, 5, 6]


class TestSimulDecode:
    def test_patient_equals_offline(self, copy_model):
        model, pairs = copy_model
        for src, _ in pairs[:10]:
            trace = simul_decode(model, src, threshold=PATIENT_THRESHOLD)
            assert set(trace.delays) <= {len(src) + 1}
            assert trace.hypothesis == offline_decode(model, src)

    def test_eager_reads_little(self, copy_model):
        model, pairs = copy_model
        src = pairs[0][0]
        eager = simul_decode(model, src, threshold=1e-9)
        patient = simul_decode(model, src, threshold=PATIENT_THRESHOLD)
        assert eager.delays[0] == 1
        assert eager.average_lagging() < patient.average_lagging()

    def test_copy_model_mostly_exact(self, copy_model):
        model, pairs = copy_model
        exact = sum(offline_decode(model, s) == t for s, t in pairs)
        assert exact >= 30

    def test_writes_bounded(self, copy_model):
        model, pairs = copy_model
        for src, _ in pairs[:20]:
            for th in (1e-9, 0.5):
                trace = simul_decode(model, src, threshold=th)
                assert len(trace.hypothesis) <= 2 * (len(src) + 1)
                assert trace.delays == sorted(trace.delays)
                assert 1 <= min(trace.delays, default=1) and max(trace.delays, default=1) <= len(src) + 1

    def test_deterministic(self, copy_model):
        model, pairs = copy_model
        a, b = simul_decode(model, pairs[3][0]), simul_decode(model, pairs[3][0])
        assert a.events == b.events and a.wall_ms == b.wall_ms

    def test_wall_clock_accounting(self, copy_model):
        model, pairs = copy_model
        trace = simul_decode(model, pairs[0][0], model_cost_ms=0.0)
        np.testing.assert_allclose(trace.wall_ms, 40.0 * np.asarray(trace.delays))
        assert trace.caal_ms() == pytest.approx(trace.al_ms())

    def test_lm_cost_moves_caal_not_al(self, copy_model):
        model, pairs = copy_model
        lm = NGramLM.uniform([f"w{k}" for k in range(8)])
        src = pairs[0][0]
        cheap = simul_decode(model, src, lm=lm, lm_cost_ms=0.0)
        dear = simul_decode(model, src, lm=lm, lm_cost_ms=100.0)
        assert cheap.delays == dear.delays
        assert cheap.caal_ms() < dear.caal_ms()
        assert cheap.lm_calls == len(cheap.hypothesis)

    def test_segment_size_quantizes_reads(self, copy_model):
        model, pairs = copy_model
        src = pairs[0][0]
        trace = simul_decode(model, src, segment_units=2)
        S = len(src) + 1
        assert all(d % 2 == 0 or d == S for d in trace.delays)

    def test_future_model_needs_lm(self):
        model = build_model(copy_pairs(5), ModelConfig(future_info=True, **TINY_MODEL))
        with pytest.raises(ConfigurationError):
            simul_decode(model, ["w1"])

    def test_rescore_needs_lm(self, copy_model):
        with pytest.raises(ConfigurationError):
            simul_decode(copy_model[0], ["w1"], rescore=True)

    @pytest.mark.parametrize("threshold", [0.0, 1.0])
    def test_threshold_range(self, copy_model, threshold):
        with pytest.raises(ConfigurationError):
            simul_decode(copy_model[0], ["w1"], threshold=threshold)


class TestEvaluate:
    def test_summary(self, copy_model):
        model, pairs = copy_model
        summary, traces = evaluate(model, pairs[:10])
        assert len(traces) == 10
        assert summary.AL == pytest.approx(np.mean([t.al_ms() for t in traces]))
        assert summary.CAAL >= summary.AL
        assert 0 <= summary.quality <= 100

    def test_curve_roundtrip(self, tmp_path):
        rows = [EvalSummary(0.1, 40.0, 80.0, 120.0, 55.5, None), EvalSummary(0.05, 80.0, 90.0, 130.0, 60.0, 0.25)]
        write_curve(tmp_path / "curve.csv", rows)
        assert (tmp_path / "curve.csv").read_text().splitlines()[0] == ",".join(CURVE_HEADER)
        back = read_curve(tmp_path / "curve.csv")
        assert back[0]["lm_pw"] is None and back[1]["lm_pw"] == 0.25

    def test_curve_bad_header(self, tmp_path):
        (tmp_path / "c.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_curve(tmp_path / "c.csv")

    def test_trace_dump(self, tmp_path, copy_model):
        import json

        model, pairs = copy_model
        _, traces = evaluate(model, pairs[:3])
        write_traces(tmp_path / "t.jsonl", traces, [t for _, t in pairs[:3]])
        recs = [json.loads(line) for line in (tmp_path / "t.jsonl").read_text().splitlines()]
        assert [r["id"] for r in recs] == [0, 1, 2]
        assert all(len(r["d_i"]) == len(r["hypothesis"]) for r in recs)
