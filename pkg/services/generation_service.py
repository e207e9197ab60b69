#!/usr/bin/env python3
"""
Generation Service for HSRL story generation
Manager <-> Worker story generation, split evaluation, variant runs and the joint-weight sweep
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict

from agents.agent_model import DecodeMode, GenerationTrace, Scheme, TrainConfig, Variant
from agents.agent_policy import HierarchicalPolicy, StoryBatch
from corpus.records import Corpus, StoryRecord
from diffcore.errors import ConfigError
from diffcore.rng import SeededRng
from services.reward_service import RewardService, create_reward_service
from services.training_service import TrainingResult, TrainingService

logger = logging.getLogger(__name__)

# rng stream key for evaluation-time draws (random topics, sampled decoding)
EVAL_STREAM = 3000


class CiderScores(BaseModel):
    story_concat: float
    sentence_mean: float


class DiversityScores(BaseModel):
    distinct_1: float
    distinct_2: float
    repetition_rate: float


class EvaluationReport(BaseModel):
    """Split-level metrics; the key set is the same for every variant and scheme"""
    model_config = ConfigDict(extra="forbid")

    variant: str
    scheme: str
    split: str
    num_records: int
    seed: int
    bleu4: float
    rouge_l: float
    cider_d: CiderScores
    sentence_bleu4: float
    diversity: DiversityScores
    per_record: List[List[float]]

    def headline(self) -> Dict[str, float]:
        return {"cider_d": self.cider_d.story_concat, "bleu4": self.bleu4, "rouge_l": self.rouge_l}


def generate_story(
    policy: HierarchicalPolicy,
    record: StoryRecord,
    mode: DecodeMode = DecodeMode.GREEDY,
    rng: Optional[SeededRng] = None,
    vocab=None,
    record_index: int = 0,
) -> GenerationTrace:
    """One story: n Manager steps, n Worker sentences"""
    batch = StoryBatch.from_records([record])
    return policy.generate(batch, mode, rng, vocab, record_index)[0]


def generate_stories(
    policy: HierarchicalPolicy,
    corpus: Corpus,
    mode: DecodeMode = DecodeMode.GREEDY,
    rng: Optional[SeededRng] = None,
    batch_size: int = 32,
) -> List[GenerationTrace]:
    """Batched generation over a split; batch i draws from rng.child(i)"""
    traces = []
    records = corpus.records
    for index, start in enumerate(range(0, len(records), batch_size)):
        batch = StoryBatch.from_records(records[start:start + batch_size])
        batch_rng = None if rng is None else rng.child(index)
        traces.extend(policy.generate(batch, mode, batch_rng, corpus.vocab, start))
    return traces


def write_traces(traces: Iterable[GenerationTrace], path: Union[str, Path]) -> Path:
    """JSON-lines trace dump, one story per line"""
    path = Path(path)
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for trace in traces:
            handle.write(trace.model_dump_json() + "\n")
            count += 1
    logger.info(f"Wrote {count} generation traces to {path}")
    return path


def read_traces(path: Union[str, Path]) -> List[GenerationTrace]:
    with open(path, encoding="utf-8") as handle:
        return [GenerationTrace.model_validate_json(line) for line in handle if line.strip()]


def build_report(
    generated: Sequence[Sequence[Sequence[int]]],
    corpus: Corpus,
    rewards: RewardService,
    variant: Union[Variant, str] = Variant.HSRL,
    scheme: Union[Scheme, str] = Scheme.JOINT,
    seed: int = 0,
) -> EvaluationReport:
    """Score generated stories (token ids, no EOS) against the split's golden stories"""
    if not corpus.records:
        raise ConfigError(f"cannot evaluate an empty {corpus.split} split")
    golden = [[s[:-1] for s in r.sentences] for r in corpus.records]
    metrics = rewards.evaluate_stories(generated, golden)
    return EvaluationReport(
        variant=Variant(variant).value,
        scheme=Scheme(scheme).value,
        split=corpus.split,
        num_records=len(corpus.records),
        seed=seed,
        **metrics,
    )


def evaluate_split(
    policy: HierarchicalPolicy,
    corpus: Corpus,
    rewards: RewardService,
    variant: Union[Variant, str] = Variant.HSRL,
    scheme: Union[Scheme, str] = Scheme.JOINT,
    seed: int = 0,
    mode: DecodeMode = DecodeMode.GREEDY,
) -> EvaluationReport:
    """
    Generate and score a split.

    Args:
        policy: trained (or freshly initialized) policy
        corpus: split to evaluate; golden topics needed when the policy feeds golden topics
        rewards: reward service built on the training split
        variant: label recorded in the report
        scheme: label recorded in the report
        seed: evaluation seed (random-topic draws and sampled decoding)
        mode: greedy or sample decoding

    Returns:
        EvaluationReport: corpus metrics, diversity diagnostics and per-record sentence rewards
    """
    if not corpus.records:
        raise ConfigError(f"cannot evaluate an empty {corpus.split} split")
    traces = generate_stories(policy, corpus, mode, SeededRng(seed).child(EVAL_STREAM))
    report = build_report([t.sentences() for t in traces], corpus, rewards, variant, scheme, seed)
    logger.info(
        f"{report.variant} on {report.split}: cider_d={report.cider_d.story_concat:.4f} "
        f"bleu4={report.bleu4:.4f} rouge_l={report.rouge_l:.4f}"
    )
    return report


def make_validator(valid: Corpus, rewards: RewardService, seed: int = 0):
    """Training callback returning headline validation metrics"""

    def validate(policy: HierarchicalPolicy) -> Dict[str, float]:
        return evaluate_split(policy, valid, rewards, seed=seed).headline()

    return validate


@dataclass
class VariantRun:
    training: TrainingResult
    report: EvaluationReport


def run_variant(
    variant: Union[Variant, str],
    train: Corpus,
    valid: Corpus,
    cfg: TrainConfig,
    rewards: Optional[RewardService] = None,
    monitor=None,
) -> VariantRun:
    """Train one variant on train and evaluate it on valid"""
    variant = Variant(variant)
    if variant in (Variant.HSRL, Variant.WORKER_GTT) and not train.has_topics:
        raise ConfigError(f"variant {variant.value} needs golden topics on the training split")
    if variant == Variant.WORKER_GTT and not valid.has_topics:
        raise ConfigError("worker_gtt feeds golden topics at evaluation time; the split has none")
    rewards = rewards or create_reward_service(train)
    logger.info(f"Running variant {variant.value}")
    service = TrainingService(
        cfg, train, variant, rewards=rewards, monitor=monitor, validate=make_validator(valid, rewards, cfg.seed)
    )
    training = service.train()
    report = evaluate_split(training.policy, valid, rewards, variant, cfg.scheme, cfg.seed)
    return VariantRun(training, report)


@dataclass
class SweepResult:
    scores: Dict[Tuple[float, float], float] = field(default_factory=dict)

    @property
    def best(self) -> Tuple[float, float]:
        """Pair with the highest validation CIDEr-D (first in grid order on ties)"""
        if not self.scores:
            raise ConfigError("empty sweep")
        return max(self.scores, key=lambda pair: self.scores[pair])

    def to_dict(self) -> Dict[str, object]:
        return {
            "scores": [{"gamma1": g1, "gamma2": g2, "cider_d": s} for (g1, g2), s in self.scores.items()],
            "best": {"gamma1": self.best[0], "gamma2": self.best[1]},
        }


def sweep_joint_gammas(
    train: Corpus,
    valid: Corpus,
    cfg: TrainConfig,
    gamma1_values: Sequence[float],
    gamma2_values: Sequence[float],
    rewards: Optional[RewardService] = None,
) -> SweepResult:
    """Joint training on a γ₁ x γ₂ grid, scored by validation CIDEr-D"""
    if not gamma1_values or not gamma2_values:
        raise ConfigError("sweep needs at least one value for gamma1 and gamma2")
    rewards = rewards or create_reward_service(train)
    result = SweepResult()
    for g1 in gamma1_values:
        for g2 in gamma2_values:
            pair_cfg = TrainConfig(**{**cfg.model_dump(), "scheme": Scheme.JOINT, "gamma1": g1, "gamma2": g2})
            run = run_variant(Variant.HSRL, train, valid, pair_cfg, rewards)
            result.scores[(float(g1), float(g2))] = run.report.cider_d.story_concat
            logger.info(f"sweep gamma1={g1} gamma2={g2}: cider_d={result.scores[(float(g1), float(g2))]:.4f}")
    return result

