"""``simulmma`` command line: gen, fit-lm, train, eval, verify.

Every command accepts ``--config FILE`` (JSON); explicit flags override file
values, and the resolved configuration is written as ``run_config.json`` into
the output directory. Exit codes: 0 success, 1 validation error,
2 verification failure, 3 IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import tasks
from .attention import ConfigurationError
from .lm import SLM_COST_MS, DataError, NGramLM, fit_ngram
from .model import MMAModel, ModelConfig, VersionError, load_checkpoint
from .streaming import DEFAULT_MODEL_COST_MS, UNIT_MS, VARIANTS, evaluate, write_curve, write_traces
from .train import TrainConfig, train, write_log

log = logging.getLogger("simulmma")

EXIT_OK, EXIT_VALIDATION, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3
TRAIN_VARIANTS = ("mma", "mma-lm", "mma-lmr-base")
SPLITS = ("train", "dev", "test")


class ValidationError(ValueError):
    pass


# -- argument plumbing ----------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _strs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


GEN_DEFAULTS = {"kind": "bigram_grammar", "vocab": 32, "n": 2500, "min_len": 4, "max_len": 10,
                "determinism": 0.8, "seed": 0, "lm_extra": 4000, "out": None}
LM_DEFAULTS = {"data": None, "order": 3, "seed": 0, "out": None}
TRAIN_DEFAULTS = {
    "data": None, "out": None, "variant": "mma", "lm": None, "lambdas": [0.01, 0.05, 0.1], "lambda_var": 0.0,
    "d_model": 32, "enc_layers": 2, "dec_layers": 2, "heads": 2, "ffn_dim": 64, "modulation": "additive",
    "lm_tokenizer": "shared", "pre_decision_ratio": 1, "energy_noise": 4.0, "stage1_epochs": 20,
    "stage2_epochs": 5, "batch_size": 32, "lr": 3e-3, "warmup": 100, "clip_norm": 10.0, "seed": 0,
}
EVAL_DEFAULTS = {
    "data": None, "split": "test", "checkpoints": None, "variants": ["mma", "mma-lm", "mma-lmr"], "lm": None,
    "segments": [1, 2], "threshold": 0.5, "topk": 5, "lm_cost": SLM_COST_MS, "model_cost": DEFAULT_MODEL_COST_MS,
    "unit_ms": UNIT_MS, "limit": 0, "out": None,
}
VERIFY_DEFAULTS = {"suite": None, "out": None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulmma", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS  # unset flags stay absent so the config file can supply them

    g = sub.add_parser("gen", help="generate a synthetic parallel corpus", argument_default=S)
    g.add_argument("--config")
    g.add_argument("--kind", choices=tasks.KINDS)
    g.add_argument("--vocab", type=int)
    g.add_argument("--n", type=int, help="total sentence pairs before the 80/10/10 split")
    g.add_argument("--min-len", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--determinism", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--lm-extra", type=int, help="extra monolingual target sentences (mono.tgt)")
    g.add_argument("--out")

    lmp = sub.add_parser("fit-lm", help="fit the n-gram LM on target-side text", argument_default=S)
    lmp.add_argument("--config")
    lmp.add_argument("--data")
    lmp.add_argument("--order", type=int)
    lmp.add_argument("--seed", type=int)
    lmp.add_argument("--out")

    t = sub.add_parser("train", help="two-stage training", argument_default=S)
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--variant", choices=TRAIN_VARIANTS)
    t.add_argument("--lm")
    t.add_argument("--lambdas", type=_floats)
    t.add_argument("--lambda-var", type=float)
    for name in ("d-model", "enc-layers", "dec-layers", "heads", "ffn-dim", "pre-decision-ratio", "stage1-epochs",
                 "stage2-epochs", "batch-size", "warmup", "seed"):
        t.add_argument(f"--{name}", type=int)
    for name in ("energy-noise", "lr", "clip-norm"):
        t.add_argument(f"--{name}", type=float)
    t.add_argument("--modulation", choices=("additive", "multiplicative"))
    t.add_argument("--lm-tokenizer", choices=("shared", "split"))

    e = sub.add_parser("eval", help="latency/quality sweep", argument_default=S)
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--split", choices=SPLITS)
    e.add_argument("--checkpoints", action="append", help="training output directory (repeatable)")
    e.add_argument("--variants", type=_strs)
    e.add_argument("--variant", dest="variants", type=_strs)
    e.add_argument("--lm")
    e.add_argument("--segments", type=_ints)
    e.add_argument("--threshold", type=float)
    e.add_argument("--topk", type=int)
    e.add_argument("--lm-cost", type=float)
    e.add_argument("--model-cost", type=float)
    e.add_argument("--unit-ms", type=float)
    e.add_argument("--limit", type=int, help="evaluate only the first N sentences (0 = all)")
    e.add_argument("--out")

    v = sub.add_parser("verify", help="run the oracle suites", argument_default=S)
    v.add_argument("--config")
    v.add_argument("--suite", action="append")
    v.add_argument("--out")
    return parser


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Defaults < JSON config file < explicit flags."""
    cfg = dict(defaults)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    if getattr(args, "config", None):
        try:
            payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc})") from exc
        unknown = set(payload) - set(defaults) - {"command"}
        if unknown:
            raise ValidationError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update({k: v for k, v in payload.items() if k != "command"})
    cfg.update(flags)
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "", [])]
    if missing:
        raise ValidationError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_config(out: Path, command: str, cfg: dict) -> None:
    (out / "run_config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")


# -- commands ---------------------------------------------------------------------

def cmd_gen(cfg: dict) -> int:
    _require(cfg, "out")
    try:
        spec = tasks.TaskSpec(cfg["kind"], cfg["vocab"], cfg["min_len"], cfg["max_len"], cfg["determinism"],
                              cfg["seed"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if cfg["n"] < 3:
        raise ValidationError("--n must be at least 3")
    out = _out_dir(cfg["out"])
    parts = tasks.split(tasks.generate(spec, cfg["n"]), (0.8, 0.1, 0.1), seed=cfg["seed"])
    for name, pairs in zip(SPLITS, parts):
        tasks.write_parallel(out, name, pairs)
    counts = {name: len(p) for name, p in zip(SPLITS, parts)}
    if cfg["lm_extra"]:
        mono = tasks.generate(spec, cfg["lm_extra"], stream=1)
        (out / "mono.tgt").write_text("".join(" ".join(t) + "\n" for _, t in mono), encoding="utf-8")
        counts["mono"] = len(mono)
    tasks.write_manifest(out, spec, counts)
    _write_run_config(out, "gen", cfg)
    print(json.dumps({"out": str(out), "counts": counts}, sort_keys=True))
    return EXIT_OK


def _target_corpus(data: Path) -> list[list[str]]:
    corpus = [t for _, t in tasks.read_parallel(data, "train")]
    if (data / "mono.tgt").exists():
        corpus += tasks.read_corpus(data / "mono.tgt")
    return corpus


def cmd_fit_lm(cfg: dict) -> int:
    _require(cfg, "data", "out")
    try:
        lm = fit_ngram(_target_corpus(Path(cfg["data"])), cfg["order"], seed=cfg["seed"])
    except DataError as exc:
        raise ValidationError(str(exc)) from exc
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    lm.save(out)
    _write_run_config(out.parent, "fit-lm", cfg)
    print(json.dumps({"out": str(out), "order": lm.order, "weights": lm.weights.tolist()}))
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "out")
    if cfg["lambda_var"] != 0.0:
        raise ValidationError("--lambda-var is fixed at 0 for infinite-lookback models")
    variant = cfg["variant"]
    lm = None
    if variant == "mma-lm":
        if not cfg.get("lm"):
            raise ValidationError("variant mma-lm needs --lm (a fitted language model)")
        lm = NGramLM.load(Path(cfg["lm"]))
    elif cfg.get("lm"):
        log.warning("variant %s does not use a language model during training; ignoring --lm", variant)
    try:
        mcfg = ModelConfig(d_model=cfg["d_model"], enc_layers=cfg["enc_layers"], dec_layers=cfg["dec_layers"],
                           heads=cfg["heads"], ffn_dim=cfg["ffn_dim"], future_ffn_dim=cfg["ffn_dim"],
                           future_info=variant == "mma-lm", modulation=cfg["modulation"],
                           lm_tokenizer=cfg["lm_tokenizer"], pre_decision_ratio=cfg["pre_decision_ratio"],
                           energy_noise=cfg["energy_noise"], seed=cfg["seed"]).validate()
        tcfg = TrainConfig(cfg["stage1_epochs"], cfg["stage2_epochs"], cfg["batch_size"], cfg["lr"], cfg["warmup"],
                           cfg["clip_norm"], tuple(cfg["lambdas"]), cfg["seed"]).validate()
    except ConfigurationError as exc:
        raise ValidationError(str(exc)) from exc
    pairs = tasks.read_parallel(Path(cfg["data"]), "train")
    out = _out_dir(cfg["out"])
    result = train(pairs, mcfg, tcfg, lm=lm,
                   on_epoch=lambda r: log.info("stage %d lambda %g epoch %d loss %.4f", r["stage"], r["lambda"],
                                               r["epoch"], r["loss"]))
    result.base.save(out / "stage1.ckpt", {"variant": variant, "stage": 1})
    names = ["stage1.ckpt"]
    for lam, model in result.finetuned.items():
        name = f"lambda_{lam:g}.ckpt"
        model.save(out / name, {"variant": variant, "stage": 2})
        names.append(name)
    write_log(out / "train_log.jsonl", result.log)
    _write_run_config(out, "train", cfg)
    print(json.dumps({"out": str(out), "checkpoints": names}))
    return EXIT_OK


def _load_checkpoints(directory: Path) -> tuple[str, list[tuple[float, MMAModel]]]:
    run = json.loads((directory / "run_config.json").read_text(encoding="utf-8"))
    variant = run.get("variant")
    models = []
    for lam in run.get("lambdas", []):
        model, extra = load_checkpoint(directory / f"lambda_{lam:g}.ckpt")
        if extra.get("variant") != variant or model.cfg.lambda_latency != lam:
            raise VersionError(f"{directory}: checkpoint for lambda {lam:g} does not match run_config.json")
        models.append((lam, model))
    return variant, models


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "data", "checkpoints", "out")
    variants = cfg["variants"]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ValidationError(f"unknown variant(s) {bad}; choose from {list(VARIANTS)}")
    if not cfg["segments"] or min(cfg["segments"]) < 1:
        raise ValidationError("--segments must list positive integers")
    if cfg["topk"] < 1:
        raise ValidationError("--topk must be >= 1")
    if min(cfg["lm_cost"], cfg["model_cost"]) < 0 or cfg["unit_ms"] <= 0:
        raise ValidationError("costs must be >= 0 and --unit-ms > 0")
    lm = NGramLM.load(Path(cfg["lm"])) if cfg.get("lm") else None
    if lm is None and any(v != "mma" for v in variants):
        raise ValidationError("variants mma-lm and mma-lmr need --lm")

    pools: dict[str, list[tuple[float, MMAModel]]] = {}
    for directory in cfg["checkpoints"]:
        trained, models = _load_checkpoints(Path(directory))
        serves = ("mma-lm",) if trained == "mma-lm" else ("mma", "mma-lmr")
        for v in serves:
            pools.setdefault(v, []).extend(models)
    missing = [v for v in variants if v not in pools]
    if missing:
        raise ValidationError(f"no checkpoint directory provides variant(s) {missing}")

    pairs = tasks.read_parallel(Path(cfg["data"]), cfg["split"])
    if cfg["limit"]:
        pairs = pairs[: cfg["limit"]]
    out = _out_dir(cfg["out"])
    (out / "traces").mkdir(exist_ok=True)
    lambdas = sorted({lam for v in variants for lam, _ in pools[v]})
    rows, per_variant = [], {v: [] for v in variants}
    for lam in lambdas:
        for seg in cfg["segments"]:
            for v in variants:
                for model_lam, model in pools[v]:
                    if model_lam != lam:
                        continue
                    for src, _ in pairs[:1]:
                        src_unknown = [t for t in src if t not in model.src_vocab]
                        if len(src_unknown) == len(src):
                            raise VersionError("checkpoint vocabulary does not match the evaluation data")
                    summary, traces = evaluate(model, pairs, segment_units=seg, threshold=cfg["threshold"],
                                               lm=lm if v != "mma" else None, rescore=v == "mma-lmr",
                                               unit_ms=cfg["unit_ms"], model_cost_ms=cfg["model_cost"],
                                               lm_cost_ms=cfg["lm_cost"] if v != "mma" else 0.0)
                    rows.append((v, summary))
                    per_variant[v].append(summary)
                    write_traces(out / "traces" / f"{v}_lambda{lam:g}_seg{seg}.jsonl", traces,
                                 [ref for _, ref in pairs])
                    log.info("%s lambda %g segment %d: AL %.1f CAAL %.1f quality %.2f", v, lam, seg, summary.AL,
                             summary.CAAL, summary.quality)
    write_curve(out / "curve.csv", [s for _, s in rows])
    for v, summaries in per_variant.items():
        write_curve(out / f"curve_{v}.csv", summaries)
    (out / "curve_rows.json").write_text(json.dumps([v for v, _ in rows]) + "\n", encoding="utf-8")
    _write_run_config(out, "eval", cfg)
    print(json.dumps({"out": str(out), "rows": len(rows)}))
    return EXIT_OK


def cmd_verify(cfg: dict) -> int:
    from .verify import run_suites  # imported lazily: pulls in the training stack

    try:
        results = run_suites(cfg.get("suite"))
    except KeyError as exc:
        raise ValidationError(str(exc.args[0])) from exc
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.suite}/{r.name} max_error={r.max_error:.3e} tolerance={r.tolerance:.1e} "
              f"seconds={r.seconds:.2f} {r.detail}".rstrip())
    summary = {"passed": sum(r.passed for r in results), "failed": sum(not r.passed for r in results),
               "checks": [r.to_dict() for r in results]}
    print(json.dumps({k: summary[k] for k in ("passed", "failed")}))
    if cfg.get("out"):
        out = _out_dir(cfg["out"])
        (out / "verify.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        _write_run_config(out, "verify", cfg)
    return EXIT_OK if summary["failed"] == 0 else EXIT_VERIFY


COMMANDS = {
    "gen": (cmd_gen, GEN_DEFAULTS),
    "fit-lm": (cmd_fit_lm, LM_DEFAULTS),
    "train": (cmd_train, TRAIN_DEFAULTS),
    "eval": (cmd_eval, EVAL_DEFAULTS),
    "verify": (cmd_verify, VERIFY_DEFAULTS),
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    handler, defaults = COMMANDS[args.command]
    try:
        return handler(resolve(args, defaults))
    except (ValidationError, ConfigurationError, VersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
