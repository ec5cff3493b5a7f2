"""Oracle suites: alignment equivalence, Monte-Carlo agreement, gradients, metric sanity.

Each check reports the largest observed error next to its tolerance so a run
doubles as a numerical health report.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import tasks
from .alignment import (
    brute_force_alignment,
    empirical_alignment,
    expected_alignment_parallel,
    expected_alignment_recurrent,
)
from .lm import SLM_COST_MS, XLM_COST_MS, fit_ngram
from .model import ModelConfig
from .numerics import backward, finite_difference_gradient, relative_error
from .streaming import average_lagging, simul_decode, wait_k_delays
from .train import build_examples, build_model


@dataclass
class CheckResult:
    suite: str
    name: str
    max_error: float
    tolerance: float
    passed: bool
    seconds: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _random_probs(rng: np.random.Generator, max_t: int, max_s: int, max_cells: int | None = None):
    while True:
        T, S = int(rng.integers(1, max_t + 1)), int(rng.integers(1, max_s + 1))
        if max_cells is None or T * S <= max_cells:
            return rng.uniform(0.01, 0.99, size=(T, S))


def check_alignment(n: int = 100, seed: int = 0) -> list[CheckResult]:
    """Parallel vs recurrent on ``T, S <= 12``; recurrent vs enumeration on ``T*S <= 12``."""
    rng = np.random.default_rng([seed, 100])
    start = time.perf_counter()
    err_par = 0.0
    for _ in range(n):
        p = _random_probs(rng, 12, 12)
        rec, par = expected_alignment_recurrent(p), expected_alignment_parallel(p)
        err_par = max(err_par, float(np.abs(rec.alpha - par.alpha).max()), float(np.abs(rec.residual - par.residual).max()))
    mid = time.perf_counter()
    err_bf = 0.0
    for _ in range(n):
        p = _random_probs(rng, 12, 12, max_cells=12)
        rec, bf = expected_alignment_recurrent(p), brute_force_alignment(p)
        err_bf = max(err_bf, float(np.abs(rec.alpha - bf.alpha).max()), float(np.abs(rec.residual - bf.residual).max()))
    end = time.perf_counter()
    return [
        CheckResult("alignment", "parallel_vs_recurrent", err_par, 1e-8, err_par <= 1e-8, mid - start, f"{n} instances"),
        CheckResult("alignment", "recurrent_vs_brute_force", err_bf, 1e-10, err_bf <= 1e-10, end - mid, f"{n} instances"),
    ]


def check_monte_carlo(n: int = 200_000, seed: int = 0) -> list[CheckResult]:
    """Sampled hard paths on ``T=2, S=3, p=0.5`` against the enumerated expectation."""
    start = time.perf_counter()
    p = np.full((2, 3), 0.5)
    freq = empirical_alignment(p, n, seed)
    err = float(np.abs(freq - brute_force_alignment(p).alpha).max())
    return [CheckResult("montecarlo", "hard_path_frequencies", err, 0.01, err <= 0.01, time.perf_counter() - start,
                        f"{n} paths")]


def _tiny_future_model(seed: int = 0):
    spec = tasks.TaskSpec(vocab_size=8, min_len=2, max_len=4, seed=seed)
    pairs = tasks.generate(spec, 8)
    lm = fit_ngram([t for _, t in pairs], 2)
    cfg = ModelConfig(d_model=8, heads=2, ffn_dim=8, future_ffn_dim=8, future_info=True, seed=seed)
    model = build_model(pairs, cfg)
    return model, build_examples(pairs, lm), lm, pairs


def gradient_check(model, batch, lambda_latency: float, eps: float = 1e-6) -> float:
    """Largest per-parameter relative error between backprop and central differences."""
    for p in model.params.values():
        p.grad = None
    backward(model.loss(batch, lambda_latency).loss)
    worst = 0.0
    for name, param in model.params.items():
        orig = param.data

        def f(x):
            param.data = x
            try:
                return model.loss(batch, lambda_latency).loss.item()
            finally:
                param.data = orig

        numeric = finite_difference_gradient(f, param, eps)
        analytic = param.grad if param.grad is not None else np.zeros_like(numeric)
        if np.abs(numeric).max() + np.abs(analytic).max() > 1e-10:
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_gradients(seed: int = 0) -> list[CheckResult]:
    """Full loss (NLL + latency, future information on) on a 2-sentence batch."""
    start = time.perf_counter()
    model, examples, _, _ = _tiny_future_model(seed)
    err = gradient_check(model, model.batch(examples[:2]), 0.5)
    return [CheckResult("gradients", "full_loss_central_differences", err, 1e-4, err <= 1e-4,
                        time.perf_counter() - start, f"{sum(p.data.size for p in model.params.values())} params")]


def check_metrics(seed: int = 0) -> list[CheckResult]:
    start = time.perf_counter()
    out = []
    err = 0.0
    for k in range(1, 6):
        for n in range(k, 13):
            err = max(err, abs(average_lagging(wait_k_delays(k, n, n), n) - k))
    out.append(CheckResult("metrics", "wait_k_al_equals_k", err, 0.0, err == 0.0, time.perf_counter() - start))

    start = time.perf_counter()
    model, _, lm, pairs = _tiny_future_model(seed)
    traces = {}
    for cost in (0.0, SLM_COST_MS, XLM_COST_MS):
        traces[cost] = [simul_decode(model, src, threshold=0.01, lm=lm, model_cost_ms=0.0 if cost == 0.0 else 10.0,
                                     lm_cost_ms=cost) for src, _ in pairs]
    zero_err = max(abs(t.caal_ms() - t.al_ms()) for t in traces[0.0])
    out.append(CheckResult("metrics", "caal_zero_cost_equals_al_ms", zero_err, 1e-9, zero_err <= 1e-9,
                           time.perf_counter() - start))
    gaps = [x.caal_ms() - s.caal_ms() for s, x in zip(traces[SLM_COST_MS], traces[XLM_COST_MS])]
    ok = all(g > 0 for g in gaps)
    out.append(CheckResult("metrics", "caal_slm_below_xlm", 0.0 if ok else 1.0, 0.0, ok, time.perf_counter() - start,
                           f"min gap {min(gaps):.3f} ms over {len(gaps)} traces"))
    return out


SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "alignment": check_alignment,
    "montecarlo": check_monte_carlo,
    "gradients": check_gradients,
    "metrics": check_metrics,
}


def run_suites(names=None) -> list[CheckResult]:
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    results = []
    for name in names:
        results.extend(SUITES[name]())
    return results
