import pytest

from simulmma import tasks
from simulmma.experiments import (
    SweepConfig,
    interpolate_quality,
    matched_al_gain,
    mean_by_lambda,
    non_decreasing,
    prepare_data,
    sweep,
)
from simulmma.model import ModelConfig
from simulmma.streaming import EvalSummary
from simulmma.train import TrainConfig


def point(lam, al, q, pw=None):
    return EvalSummary(lam, 40.0, al, al, q, pw)


class TestInterpolation:
    def test_between_points(self):
        pts = [point(0.1, 100.0, 50.0), point(0.05, 200.0, 70.0)]
        assert interpolate_quality(pts, 150.0) == pytest.approx(60.0)

    def test_clamped_at_ends(self):
        pts = [point(0.1, 100.0, 50.0), point(0.05, 200.0, 70.0)]
        assert interpolate_quality(pts, 10.0) == 50.0
        assert interpolate_quality(pts, 900.0) == 70.0

    def test_ties_averaged(self):
        pts = [point(0.1, 100.0, 40.0), point(0.1, 100.0, 60.0), point(0.05, 300.0, 80.0)]
        assert interpolate_quality(pts, 100.0) == pytest.approx(50.0)

    def test_order_independent(self):
        pts = [point(0.1, 300.0, 90.0), point(0.05, 100.0, 10.0)]
        assert interpolate_quality(pts, 200.0) == pytest.approx(50.0)


class TestMatchedGain:
    def test_identical_curves_have_zero_gain(self):
        pts = [point(0.1, 100.0, 50.0), point(0.05, 200.0, 70.0)]
        assert matched_al_gain(pts, pts) == {0.1: 0.0, 0.05: 0.0}

    def test_gain_averages_segments(self):
        base = [point(0.1, 100.0, 50.0), point(0.1, 200.0, 70.0)]
        cand = [point(0.1, 150.0, 65.0), point(0.1, 200.0, 71.0)]
        assert matched_al_gain(base, cand) == {0.1: pytest.approx((5.0 + 1.0) / 2)}

    def test_mean_by_lambda_skips_missing(self):
        pts = [point(0.1, 1.0, 1.0, 0.2), point(0.1, 1.0, 1.0, 0.4), point(0.05, 1.0, 1.0)]
        assert mean_by_lambda(pts, "lm_pw") == {0.1: pytest.approx(0.3)}

    def test_non_decreasing(self):
        assert non_decreasing([1, 1, 2])
        assert not non_decreasing([2, 1])


SMALL = SweepConfig(task=tasks.TaskSpec(vocab_size=8, min_len=3, max_len=5), n_train=40, n_test=5, lm_order=2,
                    lm_extra=20, model=ModelConfig(d_model=8, ffn_dim=8, future_ffn_dim=8, enc_layers=1,
                                                   dec_layers=1),
                    train=TrainConfig(stage1_epochs=1, stage2_epochs=1, batch_size=20, lambdas=(0.05, 0.1)),
                    segments=(1, 2))


class TestSweep:
    def test_prepare_sizes(self):
        data = prepare_data(SMALL, 0)
        assert (len(data.train), len(data.dev), len(data.test)) == (40, 5, 5)

    def test_grid(self):
        res = sweep(SMALL, 0)
        for v in ("mma", "mma-lm"):
            assert [(p.lambda_latency, p.segment_ms) for p in res.curves[v]] == \
                [(0.05, 40.0), (0.05, 80.0), (0.1, 40.0), (0.1, 80.0)]
        assert all(p.lm_pw is None for p in res.curves["mma"])
        assert all(p.lm_pw is not None for p in res.curves["mma-lm"])

    def test_reproducible(self):
        a, b = sweep(SMALL, 1), sweep(SMALL, 1)
        assert [p.row() for p in a.curves["mma-lm"]] == [p.row() for p in b.curves["mma-lm"]]
