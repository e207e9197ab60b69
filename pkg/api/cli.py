#!/usr/bin/env python3
"""
HSRL command line
Batch entry points for corpus synthesis, topic fitting, training, generation, evaluation and gradient checks
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

from pydantic import ValidationError

from agents.agent_model import CellVariant, DecodeMode, Scheme, TrainConfig, Variant
from agents.agent_monitor import TrainingMonitor
from api.run_config import RunSettings, resolve_settings
from corpus.corpus_io import load_corpus, save_corpus
from corpus.records import SPLITS, Corpus
from corpus.synthetic import SynthConfig, synthesize_corpus
from corpus.vocab import Vocab
from diffcore.errors import ConfigError, HSRLError
from diffcore.rng import SeededRng
from services.generation_service import (
    EVAL_STREAM,
    evaluate_split,
    generate_stories,
    run_variant,
    sweep_joint_gammas,
    write_traces,
)
from services.reward_service import create_reward_service
from services.storage_service import RunManifest, load_policy, save_policy
from services.training_service import GRADCHECK_CONFIG, TrainingService, gradient_suite
from topics.kmeans import fit_topics, golden_topic_sequences, matched_agreement

logger = logging.getLogger(__name__)

VOCAB_FILE = "vocab.txt"
TOPICS_FILE = "topics.json"
POLICY_FILE = "policy.bin"
HISTORY_FILE = "history.csv"
REPORT_FILE = "report.json"
TRACES_FILE = "traces.jsonl"
SWEEP_FILE = "sweep.json"
GRADCHECK_TOLERANCE = 1e-4


# ----------------------------------------------------------------------
# Data directory helpers
# ----------------------------------------------------------------------

def split_path(data_dir: Path, split: str) -> Path:
    return Path(data_dir) / f"{split}.jsonl"


def load_split(data_dir: Path, split: str, manifest: Optional[RunManifest] = None, required: bool = True) -> Optional[Corpus]:
    """Load DIR/<split>.jsonl against DIR/vocab.txt, recording both as manifest inputs"""
    path = split_path(data_dir, split)
    vocab_path = Path(data_dir) / VOCAB_FILE
    if not path.is_file():
        if required:
            raise ConfigError(f"{path} does not exist")
        return None
    if not vocab_path.is_file():
        raise ConfigError(f"{vocab_path} does not exist")
    if manifest is not None:
        manifest.add_input(split, path)
        manifest.add_input("vocab", vocab_path)
    return load_corpus(path, Vocab.load(vocab_path), split)


def write_split(corpus: Corpus, out_dir: Path, manifest: RunManifest) -> Path:
    path = split_path(out_dir, corpus.split)
    save_corpus(corpus, path)
    manifest.add_output(path)
    return path


def emit(payload: Dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def train_config(settings: RunSettings, corpus: Corpus) -> TrainConfig:
    """Config from settings, with n and d_v taken from the corpus unless set explicitly"""
    overrides = {}
    if settings.get("n") is None:
        overrides["n"] = corpus.n
    if settings.get("d_v") is None:
        overrides["d_v"] = corpus.d_v
    return settings.build(TrainConfig, **overrides)


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

def cmd_synth_data(args, settings: RunSettings, manifest: RunManifest) -> int:
    cfg = settings.build(SynthConfig)
    manifest.config = cfg.model_dump(mode="json")
    manifest.seed = cfg.seed
    sizes = {
        "train": cfg.num_records,
        "valid": settings.get_int("valid_records", max(1, cfg.num_records // 4)),
        "test": settings.get_int("test_records", max(1, cfg.num_records // 4)),
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = None
    for split in SPLITS:
        corpus = synthesize_corpus(cfg.model_copy(update={"num_records": sizes[split]}), split)
        write_split(corpus, out_dir, manifest)
        vocab = corpus.vocab
    vocab.save(out_dir / VOCAB_FILE)
    manifest.add_output(out_dir / VOCAB_FILE)
    emit({"records": sizes, "vocab_size": len(vocab), "K": cfg.K, "n": cfg.n, "d_v": cfg.d_v})
    return 0


def cmd_fit_topics(args, settings: RunSettings, manifest: RunManifest) -> int:
    data_dir = Path(args.data)
    train = load_split(data_dir, "train", manifest)
    K = settings.get_int("K", TrainConfig.model_fields["K"].default)
    seed = settings.get_int("seed", 0)
    max_iter = settings.get_int("kmeans_max_iter", TrainConfig.model_fields["kmeans_max_iter"].default)
    manifest.config = {"K": K, "kmeans_max_iter": max_iter}
    manifest.seed = seed

    model = fit_topics(train, K, seed=seed, max_iter=max_iter)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save(out_dir / TOPICS_FILE)
    manifest.add_output(out_dir / TOPICS_FILE)

    summary = {"K": K, "iterations": model.iterations, "inertia": model.inertia, "agreement": {}}
    for split in SPLITS:
        corpus = load_split(data_dir, split, manifest, required=split == "train")
        if corpus is None:
            continue
        labelled = golden_topic_sequences(model, corpus)
        if corpus.has_topics:
            reference = [r.golden_topics for r in corpus.records]
            predicted = [r.golden_topics for r in labelled.records]
            summary["agreement"][split] = matched_agreement(predicted, reference, K)
        write_split(labelled, out_dir, manifest)
    train.vocab.save(out_dir / VOCAB_FILE)
    manifest.add_output(out_dir / VOCAB_FILE)
    emit(summary)
    return 0


def cmd_train(args, settings: RunSettings, manifest: RunManifest) -> int:
    data_dir = Path(args.data)
    train = load_split(data_dir, "train", manifest)
    valid = load_split(data_dir, "valid", manifest, required=False)
    cfg = train_config(settings, train)
    variant = Variant(settings.get("variant", Variant.HSRL.value))
    manifest.config = {**cfg.model_dump(mode="json"), "variant": variant.value}
    manifest.seed = cfg.seed

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    monitor = TrainingMonitor(out_dir / HISTORY_FILE)
    summary = {"variant": variant.value, "scheme": cfg.scheme.value}
    if valid is not None and valid.records:
        run = run_variant(variant, train, valid, cfg, monitor=monitor)
        training = run.training
        report_path = out_dir / REPORT_FILE
        report_path.write_text(run.report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        manifest.add_output(report_path)
        summary["valid"] = run.report.headline()
    else:
        training = TrainingService(cfg, train, variant, monitor=monitor).train()

    save_policy(out_dir / POLICY_FILE, training.policy, cfg, variant, len(train.vocab))
    monitor.write_csv()
    manifest.add_output(out_dir / POLICY_FILE)
    manifest.add_output(out_dir / HISTORY_FILE)
    summary.update(steps=training.steps, elapsed_s=round(training.elapsed_s, 3))
    emit(summary)
    return 0


def cmd_generate(args, settings: RunSettings, manifest: RunManifest) -> int:
    manifest.add_input("checkpoint", args.checkpoint)
    policy, cfg, variant = load_policy(args.checkpoint)
    corpus = load_split(Path(args.data), args.split, manifest)
    seed = settings.get_int("seed", cfg.seed)
    mode = DecodeMode(args.mode)
    manifest.config = {"variant": variant.value, "split": args.split, "mode": mode.value}
    manifest.seed = seed

    traces = generate_stories(policy, corpus, mode, SeededRng(seed).child(EVAL_STREAM))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_traces(traces, out_dir / TRACES_FILE)
    manifest.add_output(path)
    emit({"stories": len(traces), "variant": variant.value, "traces": str(path)})
    return 0


def cmd_evaluate(args, settings: RunSettings, manifest: RunManifest) -> int:
    data_dir = Path(args.data)
    train = load_split(data_dir, "train", manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rewards = create_reward_service(train)

    if args.sweep:
        valid = load_split(data_dir, "valid", manifest)
        cfg = train_config(settings, train)
        gamma1_values = settings.get_floats("gamma1_values", [cfg.gamma1])
        gamma2_values = settings.get_floats("gamma2_values", [cfg.gamma2])
        manifest.config = {**cfg.model_dump(mode="json"), "gamma1_values": gamma1_values, "gamma2_values": gamma2_values}
        manifest.seed = cfg.seed
        sweep = sweep_joint_gammas(train, valid, cfg, gamma1_values, gamma2_values, rewards)
        path = out_dir / SWEEP_FILE
        path.write_text(json.dumps(sweep.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        manifest.add_output(path)
        emit(sweep.to_dict())
        return 0

    if args.checkpoint is None:
        raise ConfigError("evaluate needs --checkpoint (or --sweep)")
    manifest.add_input("checkpoint", args.checkpoint)
    policy, cfg, variant = load_policy(args.checkpoint)
    corpus = load_split(data_dir, args.split, manifest)
    seed = settings.get_int("seed", cfg.seed)
    manifest.config = {"variant": variant.value, "scheme": cfg.scheme.value, "split": args.split, "mode": args.mode}
    manifest.seed = seed

    report = evaluate_split(policy, corpus, rewards, variant, cfg.scheme, seed, DecodeMode(args.mode))
    path = out_dir / REPORT_FILE
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    manifest.add_output(path)
    emit({"report": str(path), **report.headline()})
    return 0


def cmd_grad_check(args, settings: RunSettings, manifest: RunManifest) -> int:
    seed = settings.get_int("seed", 0)
    if args.data is not None:
        corpus = load_split(Path(args.data), "train", manifest)
        cfg = settings.build(TrainConfig, **{**GRADCHECK_CONFIG, "n": corpus.n, "d_v": corpus.d_v, "seed": seed})
    else:
        synth = SynthConfig(
            num_records=1, n=GRADCHECK_CONFIG["n"], d_v=GRADCHECK_CONFIG["d_v"], K=GRADCHECK_CONFIG["K"],
            vocab_per_topic=4, sentence_len_range=(4, 5), seed=seed,
        )
        corpus = synthesize_corpus(synth)
        cfg = TrainConfig(**GRADCHECK_CONFIG, seed=seed)
    manifest.config = cfg.model_dump(mode="json")
    manifest.seed = seed

    errors = gradient_suite(corpus, cfg, seed)
    worst = max(errors.values())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "gradcheck.json"
    payload = {"errors": errors, "max_rel_error": worst, "tolerance": GRADCHECK_TOLERANCE, "passed": bool(worst < GRADCHECK_TOLERANCE)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest.add_output(path)
    emit(payload)
    print(f"max_rel_error={worst:.3e}")
    if worst >= GRADCHECK_TOLERANCE:
        print(f"error: gradient: max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:g}", file=sys.stderr)
        return 1
    return 0


COMMANDS: Dict[str, Callable] = {
    "synth-data": cmd_synth_data,
    "fit-topics": cmd_fit_topics,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "grad-check": cmd_grad_check,
}

# flags that feed RunSettings; everything else is command plumbing
SETTING_FLAGS = (
    "seed", "topics", "records", "valid_records", "test_records", "scheme", "cell", "variant",
    "gamma_max", "gamma1", "gamma2", "epochs", "lr", "batch_size", "gamma1_values", "gamma2_values",
)


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory (receives manifest.json)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--topics", type=int, metavar="K")
    model.add_argument("--scheme", choices=[s.value for s in Scheme])
    model.add_argument("--cell", choices=[c.value for c in CellVariant])
    model.add_argument("--variant", choices=[v.value for v in Variant])
    model.add_argument("--gamma-max", type=float)
    model.add_argument("--gamma1", type=float)
    model.add_argument("--gamma2", type=float)
    model.add_argument("--epochs", type=int)
    model.add_argument("--lr", type=float)
    model.add_argument("--batch-size", type=int)

    parser = argparse.ArgumentParser(prog="hsrl", description="Hierarchical topic-planned story generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="write a synthetic train/valid/test corpus")
    p.add_argument("--records", type=int, help="training records")
    p.add_argument("--valid-records", type=int)
    p.add_argument("--test-records", type=int)
    p.add_argument("--topics", type=int, metavar="K")

    p = sub.add_parser("fit-topics", parents=[common], help="k-means golden topics for every split")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--topics", type=int, metavar="K")

    p = sub.add_parser("train", parents=[common, model], help="train a variant and save its checkpoint")
    p.add_argument("--data", required=True, help="corpus directory with golden topics")

    p = sub.add_parser("generate", parents=[common], help="dump generation traces")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="valid", choices=list(SPLITS))
    p.add_argument("--mode", default=DecodeMode.GREEDY.value, choices=[m.value for m in DecodeMode])

    p = sub.add_parser("evaluate", parents=[common, model], help="score a checkpoint on a split, or sweep gamma1 x gamma2")
    p.add_argument("--data", required=True, help="corpus directory (train split supplies document frequencies)")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="valid", choices=list(SPLITS))
    p.add_argument("--mode", default=DecodeMode.GREEDY.value, choices=[m.value for m in DecodeMode])
    p.add_argument("--sweep", action="store_true", help="train joint models over a gamma1 x gamma2 grid")
    p.add_argument("--gamma1-values", help="comma-separated gamma1 grid")
    p.add_argument("--gamma2-values", help="comma-separated gamma2 grid")

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of every loss")
    p.add_argument("--data", help="corpus directory (a tiny synthetic story when omitted)")
    return parser


def collect_flags(args: argparse.Namespace) -> Dict[str, object]:
    flags = {}
    for name in SETTING_FLAGS:
        value = getattr(args, name, None)
        if name in ("gamma1_values", "gamma2_values") and value is not None:
            value = [v for v in value.split(",") if v.strip()]
        flags[name] = value
    return flags


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args.config, collect_flags(args))
        manifest = RunManifest(command=args.command, argv=argv)
        if args.config is not None:
            manifest.add_input("config", args.config)
        code = COMMANDS[args.command](args, settings, manifest)
        manifest.write(args.out)
        return code
    except ValidationError as exc:
        print(f"error: config: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except HSRLError as exc:
        print(f"error: {exc.invariant}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
