"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 6 and 7 share one sweep per seed (plain, future-information and
rescoring variants), trained once per module.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from simulmma import tasks
from simulmma.alignment import (
    brute_force_alignment,
    empirical_alignment,
    expected_alignment_parallel,
    expected_alignment_recurrent,
)
from simulmma.cli import main
from simulmma.experiments import (
    SweepConfig,
    matched_al_gain,
    mean_by_lambda,
    non_decreasing,
    prepare_data,
    sweep,
)
from simulmma.lm import fit_ngram
from simulmma.model import ModelConfig
from simulmma.streaming import evaluate
from simulmma.train import build_examples, build_model, train
from simulmma.verify import check_gradients, check_metrics

SEEDS = (0, 1, 2)
TREND_VARIANTS = ("mma", "mma-lm", "mma-lmr")


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def sweeps():
    return {seed: sweep(SweepConfig(), seed, variants=TREND_VARIANTS) for seed in SEEDS}


def test_criterion_1_alignment_oracles(capsys):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    err_par = err_bf = 0.0
    n_bf = 0
    for _ in range(100):
        T, S = rng.integers(1, 13, size=2)
        p = rng.uniform(0.01, 0.99, size=(T, S))
        rec = expected_alignment_recurrent(p)
        err_par = max(err_par, np.abs(expected_alignment_parallel(p).alpha - rec.alpha).max())
        if T * S <= 12:
            n_bf += 1
            err_bf = max(err_bf, np.abs(brute_force_alignment(p).alpha - rec.alpha).max())
    while n_bf < 100:
        T = int(rng.integers(1, 13))
        S = int(rng.integers(1, 12 // T + 1))
        p = rng.uniform(0.01, 0.99, size=(T, S))
        err_bf = max(err_bf, np.abs(brute_force_alignment(p).alpha - expected_alignment_recurrent(p).alpha).max())
        n_bf += 1
    seconds = time.perf_counter() - start
    ok = err_par < 1e-8 and err_bf < 1e-10 and seconds < 10
    report(capsys, 1, ok, f"parallel err {err_par:.2e}, enumeration err {err_bf:.2e}, {seconds:.2f}s")


def test_criterion_2_monte_carlo(capsys):
    start = time.perf_counter()
    p = np.full((2, 3), 0.5)
    err = np.abs(empirical_alignment(p, 200_000, rng_seed=0) - brute_force_alignment(p).alpha).max()
    seconds = time.perf_counter() - start
    report(capsys, 2, err < 0.01 and seconds < 30, f"max cell error {err:.4f}, {seconds:.2f}s")


def test_criterion_3_gradients(capsys):
    start = time.perf_counter()
    (res,) = check_gradients()
    seconds = time.perf_counter() - start
    report(capsys, 3, res.max_error < 1e-4 and seconds < 60,
           f"relative error {res.max_error:.2e} ({res.detail}), {seconds:.1f}s")


def test_criterion_4_baseline_recovery(capsys):
    pairs = tasks.generate(tasks.TaskSpec(vocab_size=8, min_len=2, max_len=6, seed=3), 12)
    lm = fit_ngram([t for _, t in pairs], 2)
    kw = dict(d_model=8, heads=2, ffn_dim=8, future_ffn_dim=8, modulation="additive", seed=3)
    plain = build_model(pairs, ModelConfig(**kw))
    fut = build_model(pairs, ModelConfig(future_info=True, **kw))
    for name, p in fut.params.items():
        if name.startswith("fut."):
            p.data = np.zeros_like(p.data)
    a = plain.forward(plain.batch(build_examples(pairs, None)))
    b = fut.forward(fut.batch(build_examples(pairs, lm)))
    same = np.array_equal(a.log_probs.data, b.log_probs.data) and all(
        np.array_equal(x.data, y.data) for x, y in zip(a.alphas + a.probs, b.alphas + b.probs))
    report(capsys, 4, same, "forward pass bit-identical" if same else "forward passes differ")


def test_criterion_5_metrics(capsys):
    results = {r.name: r for r in check_metrics()}
    report(capsys, 5, all(r.passed for r in results.values()),
           "; ".join(f"{name} err {r.max_error:.1e} {r.detail}".rstrip() for name, r in results.items()))


@pytest.mark.slow
def test_criterion_6_matched_latency_quality(capsys, sweeps):
    per_seed = []
    for seed, res in sweeps.items():
        gains = matched_al_gain(res.curves["mma"], res.curves["mma-lm"])
        wins = sum(g >= 0 for g in gains.values())
        per_seed.append(wins >= 2)
        with capsys.disabled():
            print(f"\n  seed {seed}: gain by lambda " + ", ".join(f"{k:g}:{v:+.2f}" for k, v in sorted(gains.items()))
                  + f" ({res.seconds / 60:.1f} min)")
    total_min = sum(r.seconds for r in sweeps.values()) / 60
    ok = sum(per_seed) >= 2 and total_min < 30
    report(capsys, 6, ok, f"seeds with >=2 of 3 lambdas at or above baseline: {sum(per_seed)}/3, "
                          f"sweeps {total_min:.1f} min")


@pytest.mark.slow
def test_criterion_7_lm_pw_trend(capsys, sweeps):
    flags = []
    for seed, res in sweeps.items():
        pw = mean_by_lambda(res.curves["mma-lm"], "lm_pw")
        series = [pw[k] for k in sorted(pw)]
        flags.append(non_decreasing(series))
        with capsys.disabled():
            print(f"\n  seed {seed}: LM_pw by lambda " + ", ".join(f"{k:g}:{pw[k]:.4f}" for k in sorted(pw)))
    report(capsys, 7, sum(flags) >= 2, f"seeds with non-decreasing LM_pw: {sum(flags)}/3")


@pytest.mark.slow
def test_criterion_8_rescoring(capsys, sweeps):
    cfg = SweepConfig()
    cfg = replace(cfg, task=replace(cfg.task, determinism=0.0))
    data = prepare_data(cfg, 0)
    plain = train(data.train, replace(cfg.model, future_info=False), cfg.train)
    greedy, lmr = [], []
    for lam in cfg.train.lambdas:
        for seg in cfg.segments:
            model = plain.finetuned[lam]
            greedy.append(evaluate(model, data.test, segment_units=seg, threshold=cfg.threshold)[0])
            lmr.append(evaluate(model, data.test, segment_units=seg, threshold=cfg.threshold, lm=data.lm,
                                rescore=True)[0])
    gains = matched_al_gain(greedy, lmr)
    informative = [matched_al_gain(r.curves["mma"], r.curves["mma-lmr"]) for r in sweeps.values()]
    mean08 = np.mean([v for g in informative for v in g.values()])
    ok = all(g <= 0 for g in gains.values())
    report(capsys, 8, ok, "determinism 0 rescoring gain by lambda "
           + ", ".join(f"{k:g}:{v:+.2f}" for k, v in sorted(gains.items()))
           + f"; determinism 0.8 mean gain {mean08:+.2f} (reported only)")


def test_criterion_9_end_to_end_determinism(capsys, tmp_path):
    train_flags = ["--d-model", "8", "--ffn-dim", "8", "--enc-layers", "1", "--dec-layers", "1",
                   "--stage1-epochs", "2", "--stage2-epochs", "1", "--batch-size", "16", "--warmup", "5"]
    for run in ("a", "b"):
        root = tmp_path / run
        codes = [
            main(["gen", "--vocab", "8", "--n", "60", "--lm-extra", "60", "--out", str(root / "data")]),
            main(["fit-lm", "--data", str(root / "data"), "--out", str(root / "lm.json")]),
            main(["train", "--data", str(root / "data"), "--out", str(root / "mma"), *train_flags]),
            main(["train", "--data", str(root / "data"), "--variant", "mma-lm", "--lm", str(root / "lm.json"),
                  "--out", str(root / "mma-lm"), *train_flags]),
            main(["eval", "--data", str(root / "data"), "--checkpoints", str(root / "mma"), "--checkpoints",
                  str(root / "mma-lm"), "--lm", str(root / "lm.json"), "--out", str(root / "eval")]),
        ]
        assert codes == [0] * 5
    patterns = ["data/*.src", "data/*.tgt", "lm.json", "*/*.ckpt", "eval/*.csv", "eval/traces/*.jsonl"]
    files = sorted(p.relative_to(tmp_path / "a") for pat in patterns for p in (tmp_path / "a").glob(pat))
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    report(capsys, 9, bool(files) and not differ,
           f"{len(files)} artifacts compared, {len(differ)} differ" + (f": {differ[:3]}" if differ else ""))
