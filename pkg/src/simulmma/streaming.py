"""Simultaneous decoding over a growing source prefix, latency metrics and quality.

Delays ``d_i`` count source units (encoder states) read when target token
``i`` is written. Wall-clock is simulated so results are reproducible:
``wall_i = units_read * unit_ms + model_steps * model_cost_ms + lm_calls * lm_cost_ms``
accumulated up to the write of token ``i``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attention as att
from .alignment import P_MAX
from .lm import FuturePrediction, NGramLM, rescore_candidates
from .model import IncrementalDecoder, MMAModel, future_subtoken_ids, source_units
from .vocab import BOS_ID, EOS, EOS_ID, PAD_ID

UNIT_MS = 40.0
DEFAULT_MODEL_COST_MS = 10.0
PATIENT_THRESHOLD = P_MAX  # selection probabilities never exceed it: read everything first
CURVE_HEADER = ("lambda", "segment_ms", "AL", "CAAL", "quality", "lm_pw")
VARIANTS = ("mma", "mma-lm", "mma-lmr")


@dataclass
class SourceStream:
    """Source units revealed ``segment_units`` at a time."""

    units: list[str]
    unit_ms: float = UNIT_MS
    n_read: int = 0

    def __post_init__(self):
        if not self.units:
            raise ValueError("empty source stream")

    def __len__(self) -> int:
        return len(self.units)

    @property
    def exhausted(self) -> bool:
        return self.n_read >= len(self.units)

    def read(self, segment_units: int) -> int:
        if segment_units < 1:
            raise ValueError("segment_units must be >= 1")
        before = self.n_read
        self.n_read = min(len(self.units), self.n_read + segment_units)
        return self.n_read - before


def available_decision_points(n_read: int, n_total: int, ratio: int) -> np.ndarray:
    """Decision points over the read prefix: complete groups, plus a trailing partial
    group once the whole source has been read."""
    ends = np.arange(ratio - 1, n_read, ratio, dtype=np.int64)
    if n_read == n_total and n_total % ratio:
        ends = np.append(ends, n_total - 1)
    return ends


@dataclass
class DecodeTrace:
    source: list[str]
    hypothesis: list[str] = field(default_factory=list)
    events: list[list] = field(default_factory=list)  # ["R", units] / ["W", token]
    delays: list[int] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    model_steps: int = 0
    lm_calls: int = 0
    lm_pw: float | None = None
    n_units: int = 0
    unit_ms: float = UNIT_MS

    def average_lagging(self) -> float:
        return average_lagging(self.delays, self.n_units)

    def al_ms(self) -> float:
        return self.average_lagging() * self.unit_ms

    def caal_ms(self) -> float:
        return computation_aware_al(self.wall_ms, self.delays, self.n_units, self.unit_ms)


def simul_decode(model: MMAModel, source: Sequence[str], *, threshold: float = 0.5, segment_units: int = 1,
                 lm: NGramLM | None = None, rescore: bool = False, rescore_k: int = 5,
                 unit_ms: float = UNIT_MS, model_cost_ms: float = DEFAULT_MODEL_COST_MS,
                 lm_cost_ms: float = 0.0, max_len: int | None = None,
                 wait_k: int | None = None) -> DecodeTrace:
    """Greedy simultaneous decoding of one sentence.

    The model reads ``segment_units`` states whenever some head has not
    stopped; once the source is exhausted every write is forced. An LM,
    when given, is queried once after every written token; its prediction
    feeds the future path (models with ``future_info``) or, with
    ``rescore``, re-ranks the model's top-``rescore_k`` candidates.

    With ``wait_k`` the learned policy is replaced by a fixed schedule:
    token ``i`` (0-based) is written once ``k + i`` segments have been read,
    and every head attends to the whole prefix read so far.
    """
    cfg = model.cfg
    if wait_k is not None:
        if wait_k < 1:
            raise ValueError("k must be >= 1")
        threshold = PATIENT_THRESHOLD
    if not 0.0 < threshold < 1.0:
        raise att.ConfigurationError(f"threshold must lie in (0, 1), got {threshold}")
    if cfg.future_info and lm is None:
        raise att.ConfigurationError("a future-information model needs a language model at inference")
    if rescore and lm is None:
        raise att.ConfigurationError("rescoring needs a language model")
    stream = SourceStream(source_units(source, cfg.pre_decision_ratio), unit_ms)
    S = len(stream)
    max_len = 2 * S if max_len is None else max_len
    dec = IncrementalDecoder(model)
    state = dec.init_state()
    trace = DecodeTrace(list(source), n_units=S, unit_ms=unit_ms)
    src_ids = np.asarray(model.src_vocab.encode(stream.units), dtype=np.int64)

    wall = unit_ms * stream.read(segment_units)
    trace.events.append(["R", stream.n_read])
    cache = dec.encoder_cache(model.encode(src_ids[: stream.n_read]).data)
    prev, future = BOS_ID, None
    pw_values: list[float] = []
    while len(trace.hypothesis) < max_len:
        dps = available_decision_points(stream.n_read, S, cfg.pre_decision_ratio)
        ready = wait_k is None or stream.n_read >= min((wait_k + len(trace.hypothesis)) * segment_units, S)
        if dps.size and ready:
            res = dec.step(state, prev, future, cache, dps, stream.exhausted, threshold)
            trace.model_steps += 1
            wall += model_cost_ms
            write = wait_k is not None or att.write_decision(res.p_tilde, threshold)
        else:
            write = False
        if not write:
            wall += unit_ms * stream.read(segment_units)
            trace.events.append(["R", stream.n_read])
            cache = dec.encoder_cache(model.encode(src_ids[: stream.n_read]).data)
            continue

        log_probs = res.log_probs.copy()
        log_probs[[PAD_ID, BOS_ID]] = -np.inf
        if rescore:
            order = np.argsort(-log_probs, kind="stable")[:rescore_k]
            cands = [(model.tgt_vocab.tokens[i], float(log_probs[i])) for i in order]
            token = rescore_candidates(trace.hypothesis, cands, lm, k=rescore_k)
            tok_id = model.tgt_vocab.id(token)
        else:
            tok_id = int(np.argmax(log_probs))
            token = model.tgt_vocab.tokens[tok_id]
        if cfg.future_info:
            for e, ef in zip(res.energies, res.future_energies):
                for h in range(cfg.heads):
                    v = att.lm_prediction_weight(ef, e[h])
                    if v is not None:
                        pw_values.append(v)
        dec.commit(state, res)
        trace.events.append(["W", token])
        if tok_id == EOS_ID:
            break
        trace.hypothesis.append(token)
        trace.delays.append(stream.n_read)
        trace.wall_ms.append(wall)
        prev = tok_id
        if lm is not None:
            trace.lm_calls += 1
            wall += lm_cost_ms
            guess = lm.predict(trace.hypothesis)
            future = future_subtoken_ids(FuturePrediction(len(trace.hypothesis), guess, False),
                                         model.tgt_vocab, model.splitter)
    trace.lm_pw = float(np.mean(pw_values)) if pw_values else None
    return trace


def wait_k_decode(model: MMAModel, source: Sequence[str], k: int, *, segment_units: int = 1,
                  lm: NGramLM | None = None, **kwargs) -> DecodeTrace:
    """Fixed wait-k schedule over segments of ``segment_units`` source units."""
    return simul_decode(model, source, segment_units=segment_units, lm=lm, wait_k=k, **kwargs)


def offline_decode(model: MMAModel, source: Sequence[str], lm: NGramLM | None = None,
                   rescore: bool = False) -> list[str]:
    """Greedy full-sentence decoding: the whole source is read before any write."""
    n = len(source) * model.cfg.pre_decision_ratio + 1
    return simul_decode(model, source, threshold=PATIENT_THRESHOLD, segment_units=n, lm=lm,
                        rescore=rescore).hypothesis


# -- latency ------------------------------------------------------------------------

def _cutoff(delays: Sequence[float], n_source: int) -> int:
    for i, d in enumerate(delays):
        if d >= n_source:
            return i + 1
    return len(delays)


def average_lagging(delays: Sequence[float], n_source: int) -> float:
    """``(1/tau) sum_{i<=tau} (d_i - (i-1) / gamma)`` with ``gamma = |y| / |x|`` and
    ``tau`` the first write issued after the whole source was read."""
    if not delays:
        raise ValueError("average lagging is undefined for an empty hypothesis")
    if n_source < 1:
        raise ValueError("n_source must be >= 1")
    gamma = len(delays) / n_source
    tau = _cutoff(delays, n_source)
    return float(sum(delays[i] - i / gamma for i in range(tau)) / tau)


def computation_aware_al(wall_ms: Sequence[float], delays: Sequence[float], n_source: int,
                         unit_ms: float = UNIT_MS) -> float:
    """Average lagging on simulated wall-clock (ms), cut off at the same ``tau`` as AL."""
    if len(wall_ms) != len(delays):
        raise ValueError("wall_ms and delays must have the same length")
    if not delays:
        raise ValueError("computation-aware lagging is undefined for an empty hypothesis")
    gamma = len(delays) / n_source
    tau = _cutoff(delays, n_source)
    return float(sum(wall_ms[i] - i * unit_ms / gamma for i in range(tau)) / tau)


def wait_k_delays(k: int, n_source: int, n_target: int) -> list[int]:
    """Delays of the wait-k schedule (read ``k`` units, then alternate)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [min(k + i, n_source) for i in range(n_target)]


# -- quality -----------------------------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_quality(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                   max_n: int = 4) -> float:
    """Corpus BLEU (clipped 1..max_n-gram precisions, brevity penalty) on a 0-100 scale."""
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in number")
    match = np.zeros(max_n)
    total = np.zeros(max_n)
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            match[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or np.any(match == 0):
        return 0.0
    log_p = float(np.mean(np.log(match / total)))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def quality_score(hypothesis: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    return corpus_quality([hypothesis], [reference], max_n)


# -- corpus evaluation and dumps --------------------------------------------------------

@dataclass
class EvalSummary:
    lambda_latency: float
    segment_ms: float
    AL: float  # ms
    CAAL: float  # ms
    quality: float
    lm_pw: float | None
    measured_ms: float = 0.0  # real wall-clock of the whole sweep point, not reproducible

    def row(self) -> list:
        pw = "" if self.lm_pw is None else f"{self.lm_pw:.6f}"
        return [f"{self.lambda_latency:g}", f"{self.segment_ms:g}", f"{self.AL:.6f}", f"{self.CAAL:.6f}",
                f"{self.quality:.6f}", pw]


def evaluate(model: MMAModel, pairs: Sequence[tuple[list[str], list[str]]], *, segment_units: int = 1,
             threshold: float = 0.5, lm: NGramLM | None = None, rescore: bool = False,
             unit_ms: float = UNIT_MS, model_cost_ms: float = DEFAULT_MODEL_COST_MS,
             lm_cost_ms: float = 0.0) -> tuple[EvalSummary, list[DecodeTrace]]:
    start = time.perf_counter()
    traces = [simul_decode(model, src, threshold=threshold, segment_units=segment_units, lm=lm, rescore=rescore,
                           unit_ms=unit_ms, model_cost_ms=model_cost_ms, lm_cost_ms=lm_cost_ms)
              for src, _ in pairs]
    scored = [t for t in traces if t.delays]
    al = float(np.mean([t.al_ms() for t in scored])) if scored else float("nan")
    caal = float(np.mean([t.caal_ms() for t in scored])) if scored else float("nan")
    pws = [t.lm_pw for t in traces if t.lm_pw is not None]
    summary = EvalSummary(model.cfg.lambda_latency, segment_units * unit_ms, al, caal,
                          corpus_quality([t.hypothesis for t in traces], [ref for _, ref in pairs]),
                          float(np.mean(pws)) if pws else None)
    summary.measured_ms = (time.perf_counter() - start) * 1000.0
    return summary, traces


def trace_record(trace: DecodeTrace, index: int, reference: Sequence[str] | None = None) -> dict:
    rec = {
        "id": index,
        "source": trace.source,
        "events": trace.events,
        "d_i": trace.delays,
        "wall_ms": trace.wall_ms,
        "hypothesis": trace.hypothesis,
        "model_steps": trace.model_steps,
        "lm_calls": trace.lm_calls,
        "lm_pw": trace.lm_pw,
    }
    if reference is not None:
        rec["reference"] = list(reference)
    if trace.delays:
        rec["AL"] = trace.al_ms()
        rec["CAAL"] = trace.caal_ms()
    return rec


def write_traces(path: Path, traces: Sequence[DecodeTrace], references=None) -> None:
    refs = references if references is not None else [None] * len(traces)
    with open(path, "w", encoding="utf-8") as fh:
        for i, (t, r) in enumerate(zip(traces, refs)):
            fh.write(json.dumps(trace_record(t, i, r), sort_keys=True) + "\n")


def write_curve(path: Path, rows: Sequence[EvalSummary]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for r in rows:
            w.writerow(r.row())


def read_curve(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in reader]


def summary_dict(s: EvalSummary) -> dict:
    return asdict(s)
