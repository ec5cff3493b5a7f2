"""Latency/quality sweeps and the trend analyses built on them.

A sweep trains the plain model and the future-information model from the same
data and seed, then decodes the test split for every (latency weight, segment
size) cell. Quality is compared at matched latency by interpolating the
plain model's quality-vs-AL curve at the future model's AL.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tasks
from .lm import NGramLM, fit_ngram
from .model import ModelConfig
from .streaming import EvalSummary, evaluate
from .train import TrainConfig, TrainResult, train

SPLIT_RATIOS = (0.8, 0.1, 0.1)


@dataclass
class SweepConfig:
    task: tasks.TaskSpec = field(default_factory=tasks.TaskSpec)
    n_train: int = 2000
    n_test: int = 250
    lm_order: int = 3
    lm_extra: int = 4000  # extra monolingual target sentences for the LM
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(stage1_epochs=20, stage2_epochs=5))
    segments: tuple[int, ...] = (1, 2, 4)
    threshold: float = 0.5
    rescore_k: int = 5


@dataclass
class SweepData:
    train: list
    dev: list
    test: list
    lm: NGramLM


@dataclass
class SweepResult:
    seed: int
    curves: dict[str, list[EvalSummary]]  # variant -> points in (lambda, segment) order
    logs: dict[str, list[dict]]
    seconds: float = 0.0


def prepare_data(cfg: SweepConfig, seed: int) -> SweepData:
    """Generate ``n_train / 0.8`` pairs, split 80/10/10, and fit the LM on target text."""
    spec = replace(cfg.task, seed=seed)
    n_total = int(round(cfg.n_train / SPLIT_RATIOS[0]))
    train_set, dev, test = tasks.split(tasks.generate(spec, n_total), SPLIT_RATIOS, seed=seed)
    mono = [t for _, t in train_set]
    if cfg.lm_extra:
        mono += [t for _, t in tasks.generate(spec, cfg.lm_extra, stream=1)]
    return SweepData(train_set, dev, test[: cfg.n_test], fit_ngram(mono, cfg.lm_order, seed=seed))


def train_pair(cfg: SweepConfig, data: SweepData, seed: int) -> tuple[TrainResult, TrainResult]:
    """Plain model and future-information model with identical seeds and schedules."""
    tcfg = replace(cfg.train, seed=seed)
    plain = train(data.train, replace(cfg.model, seed=seed, future_info=False), tcfg)
    future = train(data.train, replace(cfg.model, seed=seed, future_info=True), tcfg, lm=data.lm)
    return plain, future


def sweep(cfg: SweepConfig, seed: int, variants: Sequence[str] = ("mma", "mma-lm"),
          lm_cost_ms: float = 0.0) -> SweepResult:
    start = time.perf_counter()
    data = prepare_data(cfg, seed)
    plain, future = train_pair(cfg, data, seed)
    curves: dict[str, list[EvalSummary]] = {v: [] for v in variants}
    for lam in cfg.train.lambdas:
        for seg in cfg.segments:
            for v in variants:
                model = (future if v == "mma-lm" else plain).finetuned[lam]
                summary, _ = evaluate(model, data.test, segment_units=seg, threshold=cfg.threshold,
                                      lm=data.lm if v != "mma" else None, rescore=v == "mma-lmr",
                                      lm_cost_ms=lm_cost_ms)
                curves[v].append(summary)
    return SweepResult(seed, curves, {"mma": plain.log, "mma-lm": future.log}, time.perf_counter() - start)


def interpolate_quality(points: Sequence[EvalSummary], al: float) -> float:
    """Quality of a piecewise-linear quality-vs-AL curve at ``al`` (clamped at the ends).

    Points with equal AL are averaged first.
    """
    groups: dict[float, list[float]] = {}
    for p in points:
        groups.setdefault(p.AL, []).append(p.quality)
    xs = np.array(sorted(groups))
    ys = np.array([np.mean(groups[x]) for x in xs])
    return float(np.interp(al, xs, ys))


def matched_al_gain(baseline: Sequence[EvalSummary], candidate: Sequence[EvalSummary]) -> dict[float, float]:
    """Per latency weight: mean over segment sizes of candidate quality minus the
    baseline curve's quality at the candidate's AL. The baseline curve pools every
    baseline point, so all latency weights are compared against one frontier."""
    gains: dict[float, list[float]] = {}
    for p in candidate:
        gains.setdefault(p.lambda_latency, []).append(p.quality - interpolate_quality(baseline, p.AL))
    return {lam: float(np.mean(v)) for lam, v in gains.items()}


def mean_by_lambda(points: Sequence[EvalSummary], attr: str) -> dict[float, float]:
    out: dict[float, list[float]] = {}
    for p in points:
        value = getattr(p, attr)
        if value is not None:
            out.setdefault(p.lambda_latency, []).append(value)
    return {lam: float(np.mean(v)) for lam, v in out.items()}


def non_decreasing(values: Sequence[float]) -> bool:
    return all(b >= a for a, b in zip(values, values[1:]))
