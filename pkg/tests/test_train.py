import numpy as np
import pytest

from simulmma.attention import ConfigurationError
from simulmma.lm import fit_ngram
from simulmma.model import ModelConfig
from simulmma.numerics import Adam
from simulmma.train import TrainConfig, build_examples, build_model, run_epochs, train, write_log

from conftest import TINY_MODEL, copy_pairs, tiny_train_config


def expected_delay(model, examples):
    """Mean expected read position of the last decoder layer, first head, over real steps."""
    b = model.batch(examples)
    alpha = model.forward(b).alphas[-1].data[:, 0]
    pos = np.arange(1, alpha.shape[-1] + 1)
    vals = []
    for row, (S, T) in enumerate(zip(b.src_len, b.tgt_len)):
        a = alpha[row, :T, :S]
        vals.append(float(((a * pos[:S]).sum(-1) + (1 - a.sum(-1)) * S).mean()))
    return float(np.mean(vals))


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(batch_size=0), dict(stage1_epochs=-1), dict(lambdas=(0.0,)),
                                        dict(lambdas=(1.5,))])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs).validate()


class TestStageOne:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loss_halves_within_200_steps(self, seed):
        result = train(copy_pairs(seed=seed), ModelConfig(seed=seed, **TINY_MODEL), tiny_train_config(40, seed))
        losses = [r["loss"] for r in result.log]
        assert losses[-1] < 0.5 * losses[0]

    def test_copy_task_converges(self, copy_model):
        model, pairs = copy_model
        parts = model.loss(model.batch(build_examples(pairs, None)), 0.0)
        assert parts.nll < 0.1

    def test_log_records(self):
        result = train(copy_pairs(20), ModelConfig(**TINY_MODEL), tiny_train_config(3))
        assert [r["epoch"] for r in result.log] == [1, 2, 3]
        assert all(r["stage"] == 1 and r["lambda"] == 0.0 and r["lm_pw"] is None for r in result.log)

    def test_bitwise_deterministic(self):
        runs = [train(copy_pairs(20), ModelConfig(**TINY_MODEL), tiny_train_config(3, stage2=1, lambdas=(0.1,)))
                for _ in range(2)]
        for name, p in runs[0].finetuned[0.1].params.items():
            np.testing.assert_array_equal(p.data, runs[1].finetuned[0.1].params[name].data)

    def test_future_model_needs_lm(self):
        with pytest.raises(ConfigurationError):
            train(copy_pairs(10), ModelConfig(future_info=True, **TINY_MODEL), tiny_train_config(1))

    def test_future_model_reports_lm_pw(self):
        pairs = copy_pairs(20)
        lm = fit_ngram([t for _, t in pairs], 2)
        result = train(pairs, ModelConfig(future_info=True, **TINY_MODEL), tiny_train_config(2), lm=lm)
        assert all(r["lm_pw"] is not None and r["lm_pw"] > 0 for r in result.log)

    def test_missing_predictions(self):
        pairs = copy_pairs(10)
        model = build_model(pairs, ModelConfig(future_info=True, **TINY_MODEL))
        with pytest.raises(ConfigurationError):
            run_epochs(model, build_examples(pairs, None), 1, tiny_train_config(1), 0.0, 1, [], 0)


class TestStageTwo:
    def test_one_model_per_lambda(self):
        result = train(copy_pairs(20), ModelConfig(**TINY_MODEL),
                       tiny_train_config(2, stage2=1, lambdas=(0.01, 0.05, 0.1)))
        assert sorted(result.finetuned) == [0.01, 0.05, 0.1]
        for lam, m in result.finetuned.items():
            assert m.cfg.lambda_latency == lam
        assert result.base.cfg.lambda_latency == 0.0

    def test_resume_continues_schedule(self):
        pairs = copy_pairs(20)
        tcfg = tiny_train_config(1)
        model = build_model(pairs, ModelConfig(**TINY_MODEL))
        ex = build_examples(pairs, None)
        first = run_epochs(model, ex, 1, tcfg, 0.0, 1, [], 0)
        second = run_epochs(model.clone(), ex, 1, tcfg, 0.1, 2, [], 1, resume=first)
        assert isinstance(first, Adam)
        assert (first.step_count, second.step_count) == (2, 4)

    def test_larger_lambda_reads_less(self, copy_model):
        base, pairs = copy_model
        ex = build_examples(pairs, None)
        wins = 0
        for seed in range(3):
            tcfg = tiny_train_config(0, seed=seed)
            delays = []
            for lam in (0.01, 1.0):
                model = base.clone()
                run_epochs(model, ex, 10, tcfg, lam, 2, [], 1)
                delays.append(expected_delay(model, ex))
            wins += delays[1] < delays[0]
        assert wins >= 2

    def test_write_log(self, tmp_path):
        result = train(copy_pairs(10), ModelConfig(**TINY_MODEL), tiny_train_config(2))
        write_log(tmp_path / "log.jsonl", result.log)
        assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 2
