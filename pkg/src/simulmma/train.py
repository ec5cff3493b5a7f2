"""Two-stage training: a latency-free stage, then one fine-tuned copy per latency weight."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import attention as att
from .lm import NGramLM, precompute_predictions
from .model import MMAModel, ModelConfig, TrainingExample
from .numerics import Adam, backward
from .vocab import EOS, Vocabulary

DEFAULT_LAMBDAS = (0.01, 0.05, 0.1)


@dataclass
class TrainConfig:
    stage1_epochs: int = 30
    stage2_epochs: int = 10
    batch_size: int = 32
    lr: float = 3e-3
    warmup: int = 100
    clip_norm: float = 10.0
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise att.ConfigurationError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise att.ConfigurationError("batch_size must be >= 1")
        for lam in self.lambdas:
            if not 0.0 < lam <= 1.0:
                raise att.ConfigurationError(f"stage-2 latency weights must lie in (0, 1], got {lam}")
        return self


@dataclass
class TrainResult:
    base: MMAModel
    finetuned: dict[float, MMAModel] = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)


def build_examples(pairs: Sequence[tuple[list[str], list[str]]], lm: NGramLM | None) -> list[TrainingExample]:
    """Attach LM future predictions (over target + end marker) when an LM is given."""
    if lm is None:
        return [TrainingExample(list(s), list(t)) for s, t in pairs]
    preds = precompute_predictions([list(t) + [EOS] for _, t in pairs], lm)
    return [TrainingExample(list(s), list(t), p) for (s, t), p in zip(pairs, preds)]


def build_model(pairs, cfg: ModelConfig) -> MMAModel:
    return MMAModel(cfg, Vocabulary.build(s for s, _ in pairs), Vocabulary.build(t for _, t in pairs))


def run_epochs(model: MMAModel, examples: Sequence[TrainingExample], epochs: int, tcfg: TrainConfig,
               lambda_latency: float, stage: int, log: list[dict], stream: int,
               on_epoch: Callable[[dict], None] | None = None, resume: Adam | None = None) -> Adam:
    """Train in place; ``resume`` continues another run's moments and schedule position."""
    if model.cfg.future_info and any(ex.future is None for ex in examples):
        raise att.ConfigurationError("future_info is enabled but predictions are missing")
    opt = Adam(model.params, lr=tcfg.lr, warmup=tcfg.warmup, clip_norm=tcfg.clip_norm)
    if resume is not None:
        opt.step_count = resume.step_count
        opt.m = {k: v.copy() for k, v in resume.m.items()}
        opt.v = {k: v.copy() for k, v in resume.v.items()}
    n = len(examples)
    noise_rng = np.random.default_rng([tcfg.seed, stream, 1 << 20])
    for epoch in range(epochs):
        start = time.perf_counter()
        order = np.random.default_rng([tcfg.seed, stream, epoch]).permutation(n)
        sums = np.zeros(3)
        pw, pw_n, seen = 0.0, 0, 0
        for lo in range(0, n, tcfg.batch_size):
            idx = order[lo: lo + tcfg.batch_size]
            batch = model.batch([examples[i] for i in idx])
            opt.zero_grad()
            parts = model.loss(batch, lambda_latency, noise_rng)
            backward(parts.loss)
            opt.step()
            k = len(idx)
            sums += k * np.array([parts.loss.item(), parts.nll, parts.latency])
            seen += k
            if parts.lm_pw is not None:
                pw += k * parts.lm_pw
                pw_n += k
        rec = {
            "stage": stage,
            "lambda": lambda_latency,
            "epoch": epoch + 1,
            "loss": sums[0] / seen,
            "nll": sums[1] / seen,
            "latency_loss": sums[2] / seen,
            "lm_pw": pw / pw_n if pw_n else None,
            "wall_ms": (time.perf_counter() - start) * 1000.0,
        }
        log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return opt


def train(pairs: Sequence[tuple[list[str], list[str]]], model_cfg: ModelConfig, tcfg: TrainConfig,
          lm: NGramLM | None = None, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Stage 1 with no latency term, then one stage-2 copy per ``tcfg.lambdas``.

    Each stage-2 run starts from the stage-1 weights and optimizer state, so the
    learning-rate schedule keeps decaying instead of warming up again.
    """
    tcfg.validate()
    model_cfg.validate()
    if model_cfg.future_info and lm is None:
        raise att.ConfigurationError("future_info training needs a language model for predictions")
    examples = build_examples(pairs, lm if model_cfg.future_info else None)
    base_cfg = ModelConfig.from_dict({**model_cfg.to_dict(), "lambda_latency": 0.0})
    base = build_model(pairs, base_cfg)
    result = TrainResult(base)
    opt = run_epochs(base, examples, tcfg.stage1_epochs, tcfg, 0.0, 1, result.log, 0, on_epoch)
    for k, lam in enumerate(tcfg.lambdas):
        model = base.clone()
        model.cfg.lambda_latency = lam
        run_epochs(model, examples, tcfg.stage2_epochs, tcfg, lam, 2, result.log, k + 1, on_epoch, resume=opt)
        result.finetuned[lam] = model
    return result


def write_log(path: Path, log: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def config_dict(tcfg: TrainConfig) -> dict:
    d = asdict(tcfg)
    d["lambdas"] = list(tcfg.lambdas)
    return d
