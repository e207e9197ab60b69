#!/usr/bin/env python3
"""
Training Service for HSRL story generation
Loss functions and the cascaded, iterative (wake-sleep) and joint policy-learning schemes
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from agents.agent_manager import manager_nll
from agents.agent_model import AdvantageSign, Scheme, TopicSource, TrainConfig, Variant
from agents.agent_monitor import TrainingMonitor
from agents.agent_policy import HierarchicalPolicy, StoryBatch, build_policy
from agents.agent_worker import DecodeResult, worker_mle_terms
from corpus.records import Corpus
from diffcore import ops
from diffcore.errors import ConfigError, NumericError
from diffcore.gradcheck import finite_difference_check
from diffcore.optim import create_optimizer
from diffcore.rng import SeededRng
from diffcore.tensor import Parameter, Tensor, no_grad
from services.reward_service import RewardService, create_reward_service

logger = logging.getLogger(__name__)

Scalar = Union[Tensor, float]
Validator = Callable[[HierarchicalPolicy], Dict[str, float]]

# rng stream keys per phase
JOINT_PHASE, WORKER_PHASE, MANAGER_PHASE = 0, 1, 2


@dataclass
class LossBreakdown:
    """Scalar values of every loss term for one step (or an epoch mean)"""
    manager_mle: float = 0.0
    worker_mle: float = 0.0
    worker_rl: float = 0.0
    mixed: float = 0.0
    joint: float = 0.0
    gamma: float = 0.0
    mean_advantage: float = 0.0
    reward_sampled: float = 0.0
    reward_greedy: float = 0.0
    tokens: int = 0

    def identity_errors(self, gamma1: float, gamma2: float) -> Tuple[float, float]:
        """Deviation of mixed and joint from their decompositions"""
        mixed = gamma2 * self.worker_rl + (1.0 - gamma2) * self.worker_mle
        joint = (1.0 - gamma1) * self.manager_mle + gamma1 * self.mixed
        return abs(self.mixed - mixed), abs(self.joint - joint)

    @classmethod
    def mean(cls, rows: Sequence["LossBreakdown"]) -> "LossBreakdown":
        if not rows:
            return cls()
        values = {}
        for f in fields(cls):
            column = [getattr(r, f.name) for r in rows]
            values[f.name] = int(sum(column)) if f.name == "tokens" else float(np.mean(column))
        return cls(**values)


def anneal_gamma(epoch: int, warmup_epochs: int, ramp_epochs: int, gamma_max: float) -> float:
    """0 during warmup, then a linear ramp reaching gamma_max after ramp_epochs, then constant"""
    if epoch < warmup_epochs:
        return 0.0
    if ramp_epochs == 0:
        return gamma_max
    return min(gamma_max, gamma_max * (epoch - warmup_epochs) / ramp_epochs)


def _value(x: Optional[Scalar]) -> float:
    if x is None:
        return 0.0
    return x.item() if isinstance(x, Tensor) else float(x)


def mixed_loss(gamma: float, worker_rl: Optional[Scalar], worker_mle: Optional[Scalar]) -> Scalar:
    """γ·L_rl + (1−γ)·L_mle; a zero-weight term is never touched"""
    if gamma == 0.0:
        return worker_mle
    if gamma == 1.0:
        return worker_rl
    if isinstance(worker_rl, Tensor) or isinstance(worker_mle, Tensor):
        return ops.add(ops.scale(worker_rl, gamma), ops.scale(worker_mle, 1.0 - gamma))
    return gamma * worker_rl + (1.0 - gamma) * worker_mle


def joint_loss(
    gamma1: float,
    gamma2: float,
    manager_mle: Optional[Scalar],
    worker_rl: Optional[Scalar],
    worker_mle: Optional[Scalar],
) -> Scalar:
    """(1−γ₁)·L_M + γ₁·(γ₂·L_rl + (1−γ₂)·L_mle)"""
    if gamma1 == 0.0:
        return manager_mle
    mixed = mixed_loss(gamma2, worker_rl, worker_mle)
    if gamma1 == 1.0:
        return mixed
    if isinstance(manager_mle, Tensor) or isinstance(mixed, Tensor):
        return ops.add(ops.scale(manager_mle, 1.0 - gamma1), ops.scale(mixed, gamma1))
    return (1.0 - gamma1) * manager_mle + gamma1 * mixed


def worker_mle_loss(scored: Sequence[DecodeResult]) -> Tensor:
    """−Σ_ℓ Σ_t log p(y*_ℓ,t | …) averaged over the batch"""
    if not scored:
        raise ConfigError("worker_mle_loss: nothing was scored")
    B = scored[0].tokens.shape[0]
    if B == 0:
        raise ConfigError("worker_mle_loss: empty batch")
    total = None
    for result in scored:
        term = ops.total(worker_mle_terms(result))
        total = term if total is None else ops.add(total, term)
    return ops.scale(total, 1.0 / B)


def advantages(
    sampled_rewards: np.ndarray,
    greedy_rewards: np.ndarray,
    sign: AdvantageSign = AdvantageSign.SELF_CRITICAL,
    story_bonus: float = 0.0,
    sampled_story: Optional[np.ndarray] = None,
    greedy_story: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Per-sentence advantage (B, n): r̂ − r⋆, or r⋆ − r̂ under the greedy-minus-sampled sign,
    plus an optional story-level term broadcast to every sentence.
    """
    r_hat = np.asarray(sampled_rewards, dtype=np.float64)
    r_star = np.asarray(greedy_rewards, dtype=np.float64)
    if r_hat.shape != r_star.shape:
        raise ConfigError(f"reward shapes differ: {r_hat.shape} vs {r_star.shape}")
    if not (np.all(np.isfinite(r_hat)) and np.all(np.isfinite(r_star))):
        raise NumericError("non-finite reward")
    adv = r_hat - r_star
    if story_bonus:
        story = np.asarray(sampled_story, dtype=np.float64) - np.asarray(greedy_story, dtype=np.float64)
        if not np.all(np.isfinite(story)):
            raise NumericError("non-finite story reward")
        adv = adv + story_bonus * story[:, None]
    if AdvantageSign(sign) == AdvantageSign.GREEDY_MINUS_SAMPLED:
        adv = -adv
    return adv


def self_critical_loss(sampled: Sequence[DecodeResult], advantage: np.ndarray) -> Tensor:
    """
    −Σ_ℓ adv_ℓ · Σ_t log p(ŷ_ℓ,t | …), averaged over the batch.

    Args:
        sampled: one sampled DecodeResult per slot, still on the tape
        advantage: (B, n) constants; no gradient flows through them

    Returns:
        Tensor: scalar loss
    """
    advantage = np.asarray(advantage, dtype=np.float64)
    if not np.all(np.isfinite(advantage)):
        raise NumericError("non-finite advantage")
    if advantage.shape[1] != len(sampled):
        raise ConfigError(f"{advantage.shape[1]} advantage columns for {len(sampled)} sentences")
    B = advantage.shape[0]
    total = None
    for slot, result in enumerate(sampled):
        term = ops.total(ops.mul(result.sequence_log_prob, Tensor(advantage[:, slot])))
        total = term if total is None else ops.add(total, term)
    return ops.scale(total, -1.0 / B)


@dataclass
class TrainingResult:
    policy: HierarchicalPolicy
    monitor: TrainingMonitor
    variant: Variant
    steps: int
    elapsed_s: float

    def history(self) -> List[Dict]:
        return list(self.monitor.rows)


class TrainingService:
    """
    Owns one policy, its optimizer and the reward tables, and runs the training schemes.
    """

    def __init__(
        self,
        cfg: TrainConfig,
        train: Corpus,
        variant: Variant = Variant.HSRL,
        rewards: Optional[RewardService] = None,
        monitor: Optional[TrainingMonitor] = None,
        validate: Optional[Validator] = None,
    ):
        """
        Initialize the training service.

        Args:
            cfg: training configuration
            train: training split (golden topics required whenever a Manager or golden topics are used)
            variant: which model to build
            rewards: CIDEr-D reward tables (built from train when omitted)
            monitor: history sink
            validate: callback returning {cider_d, bleu4, rouge_l} for the current policy
        """
        self.cfg = cfg
        self.train_corpus = train
        self.variant = Variant(variant)
        needs_topics = self.variant in (Variant.HSRL, Variant.WORKER_GTT)
        if needs_topics and not train.has_topics:
            raise ConfigError(f"variant {self.variant.value} needs golden topics on the training split")
        if train.n != cfg.n or train.d_v != cfg.d_v:
            raise ConfigError(f"corpus has n={train.n}, d_v={train.d_v} but config says n={cfg.n}, d_v={cfg.d_v}")
        self.policy = build_policy(cfg, len(train.vocab), self.variant)
        self.inference_topics = self.policy.topic_source
        self.optimizer = create_optimizer(cfg.optimizer, self.policy.parameters(), cfg.lr, cfg.grad_clip)
        self.rewards = rewards or create_reward_service(train)
        self.monitor = monitor or TrainingMonitor()
        self.validate = validate
        self.rng = SeededRng(cfg.seed).child(2000)
        self.steps = 0

    # ------------------------------------------------------------------
    # Parameter groups
    # ------------------------------------------------------------------

    @property
    def manager_params(self) -> List[Parameter]:
        return [] if self.policy.manager is None else self.policy.manager.parameters()

    @property
    def worker_params(self) -> List[Parameter]:
        return self.policy.worker.parameters()

    # ------------------------------------------------------------------
    # One step
    # ------------------------------------------------------------------

    def objective(
        self,
        batch: StoryBatch,
        rng: SeededRng,
        gamma1: float,
        gamma2: float,
        with_worker: bool = True,
    ) -> Tuple[Scalar, LossBreakdown]:
        """
        L = (1−γ₁)·L_M + γ₁·(γ₂·L_rl + (1−γ₂)·L_mle), computing only the terms with non-zero weight.
        Worker-only policies use γ₁ = 1.
        """
        policy = self.policy
        stats = LossBreakdown(gamma=gamma2)
        need_manager = policy.manager is not None and gamma1 < 1.0
        need_mle = gamma1 > 0.0 and gamma2 < 1.0
        need_rl = gamma1 > 0.0 and gamma2 > 0.0
        manager_loss = worker_loss = rl_loss = None

        if need_manager or need_mle:
            forced = policy.teacher_forced(batch, rng.child(0), with_worker=with_worker or need_mle)
            if need_manager:
                if batch.golden_topics is None:
                    raise ConfigError("manager training needs golden topics")
                manager_loss = manager_nll(forced.predicted, batch.golden_topics)
            if need_mle:
                worker_loss = worker_mle_loss(forced.scored)
                stats.tokens = int(sum(int(l.sum()) for l in batch.lengths))

        if need_rl:
            rollout = policy.rollout(batch, rng.child(1))
            sampled = [r.sentences() for r in rollout.sampled]
            greedy = [r.sentences() for r in rollout.greedy]
            r_hat = self.rewards.batch_rewards(sampled, batch.references)
            r_star = self.rewards.batch_rewards(greedy, batch.references)
            story_hat = story_star = None
            if self.cfg.story_bonus:
                story_hat = self.rewards.story_rewards(sampled, batch.references)
                story_star = self.rewards.story_rewards(greedy, batch.references)
            adv = advantages(r_hat, r_star, self.cfg.advantage_sign, self.cfg.story_bonus, story_hat, story_star)
            rl_loss = self_critical_loss(rollout.sampled, adv)
            stats.mean_advantage = float(np.mean(adv))
            stats.reward_sampled = float(np.mean(r_hat))
            stats.reward_greedy = float(np.mean(r_star))

        mixed = mixed_loss(gamma2, rl_loss, worker_loss) if gamma1 > 0.0 else None
        loss = joint_loss(gamma1, gamma2, manager_loss, rl_loss, worker_loss)
        stats.manager_mle = _value(manager_loss)
        stats.worker_mle = _value(worker_loss)
        stats.worker_rl = _value(rl_loss)
        stats.mixed = _value(mixed)
        stats.joint = _value(loss)
        if not math.isfinite(stats.joint):
            raise NumericError(f"loss is {stats.joint}")
        return loss, stats

    def step(
        self,
        batch: StoryBatch,
        rng: SeededRng,
        gamma1: float,
        gamma2: float,
        trainable: Optional[List[Parameter]] = None,
        with_worker: bool = True,
    ) -> LossBreakdown:
        """Zero grads, backpropagate the objective and update the trainable subset"""
        self.optimizer.zero_grad()
        loss, stats = self.objective(batch, rng, gamma1, gamma2, with_worker)
        if isinstance(loss, Tensor):
            loss.backward()
        self.optimizer.step(trainable)
        self.steps += 1
        return stats

    # ------------------------------------------------------------------
    # Epochs
    # ------------------------------------------------------------------

    def batches(self, code: int, epoch: int):
        records = self.train_corpus.records
        order = self.rng.child(code, epoch).permutation(len(records))
        size = self.cfg.batch_size
        for index, start in enumerate(range(0, len(order), size)):
            yield index, StoryBatch.from_records([records[i] for i in order[start:start + size]])

    def run_epoch(
        self,
        epoch: int,
        phase: str,
        code: int,
        gamma1: float,
        gamma2: float,
        trainable: Optional[List[Parameter]] = None,
        with_worker: bool = True,
    ) -> LossBreakdown:
        rows = [
            self.step(batch, self.rng.child(code, epoch, index), gamma1, gamma2, trainable, with_worker)
            for index, batch in self.batches(code, epoch)
        ]
        summary = LossBreakdown.mean(rows)
        self.monitor.record(epoch, phase, **asdict(summary))
        self._maybe_validate(epoch)
        return summary

    def _maybe_validate(self, epoch: int):
        every = self.cfg.eval_every
        if self.validate is None or not every or (epoch + 1) % every:
            return
        with self.policy.topics_from(self.inference_topics):
            scores = self.validate(self.policy)
        self.monitor.attach_validation(scores["cider_d"], scores["bleu4"], scores["rouge_l"])

    def worker_gamma(self, epoch: int, gamma_max: Optional[float] = None) -> float:
        cfg = self.cfg
        return anneal_gamma(epoch, cfg.warmup_epochs, cfg.ramp_epochs, cfg.gamma_max if gamma_max is None else gamma_max)

    # ------------------------------------------------------------------
    # Schemes
    # ------------------------------------------------------------------

    def train_joint(self) -> TrainingResult:
        """One optimizer step per batch on the joint objective, γ₂ annealed up to cfg.gamma2"""
        self._require_manager()
        gamma1 = self.cfg.gamma1
        trainable = self.manager_params if gamma1 == 0.0 else None
        return self._loop(
            lambda epoch: [self.run_epoch(epoch, "joint", JOINT_PHASE, gamma1, self.worker_gamma(epoch, self.cfg.gamma2), trainable)]
        )

    def train_cascaded(self) -> TrainingResult:
        """Stage 1: Manager alone on golden topics. Stage 2: Worker on golden one-hot topics."""
        self._require_manager()
        start = time.time()
        manager_epochs = self.cfg.epochs if self.cfg.manager_epochs is None else self.cfg.manager_epochs
        for epoch in range(manager_epochs):
            self.run_epoch(epoch, "manager", MANAGER_PHASE, 0.0, 0.0, self.manager_params, with_worker=False)
        with self.policy.topics_from(TopicSource.GOLDEN):
            for epoch in range(self.cfg.epochs):
                self.run_epoch(epoch, "worker", WORKER_PHASE, 1.0, self.worker_gamma(epoch), self.worker_params)
        return self._result(start)

    def train_iterative(self) -> TrainingResult:
        """Wake-sleep: a Worker phase with the Manager frozen, then a Manager phase with the Worker frozen"""
        self._require_manager()

        def epoch_fn(epoch):
            rows = [self.run_epoch(epoch, "worker", WORKER_PHASE, 1.0, self.worker_gamma(epoch), self.worker_params)]
            if self.cfg.iterative_manager_phase:
                with self.policy.topics_from(TopicSource.GOLDEN):
                    rows.append(self.run_epoch(epoch, "manager", MANAGER_PHASE, 0.0, 0.0, self.manager_params))
            return rows

        return self._loop(epoch_fn)

    def train_worker_only(self) -> TrainingResult:
        """Ablations and flat baselines: mixed loss on the Worker alone (flat_mle stays at γ = 0)"""
        if self.policy.manager is not None:
            raise ConfigError("train_worker_only expects a policy without a Manager")
        gamma_max = 0.0 if self.variant == Variant.FLAT_MLE else self.cfg.gamma_max
        return self._loop(
            lambda epoch: [self.run_epoch(epoch, "worker", WORKER_PHASE, 1.0, self.worker_gamma(epoch, gamma_max))]
        )

    def train(self) -> TrainingResult:
        """Dispatch on variant and scheme"""
        logger.info(f"Training {self.variant.value} (scheme={self.cfg.scheme.value}, epochs={self.cfg.epochs})")
        if self.variant != Variant.HSRL:
            return self.train_worker_only()
        if self.cfg.scheme == Scheme.CASCADED:
            return self.train_cascaded()
        if self.cfg.scheme == Scheme.ITERATIVE:
            return self.train_iterative()
        return self.train_joint()

    def _loop(self, epoch_fn) -> TrainingResult:
        start = time.time()
        for epoch in range(self.cfg.epochs):
            epoch_fn(epoch)
        return self._result(start)

    def _result(self, start: float) -> TrainingResult:
        elapsed = time.time() - start
        logger.info(f"Finished {self.variant.value}: {self.steps} steps in {elapsed:.1f}s")
        return TrainingResult(self.policy, self.monitor, self.variant, self.steps, elapsed)

    def _require_manager(self):
        if self.policy.manager is None:
            raise ConfigError(f"variant {self.variant.value} has no Manager to train")


def manager_accuracy(policy: HierarchicalPolicy, corpus: Corpus) -> float:
    """Fraction of slots where the Manager's argmax topic equals the golden topic (teacher forced)"""
    if policy.manager is None:
        raise ConfigError("policy has no Manager")
    if not corpus.has_topics:
        raise ConfigError("manager accuracy needs golden topics")
    batch = StoryBatch.from_records(corpus.records)
    with no_grad():
        forced = policy.teacher_forced(batch, with_worker=policy.feed_worker_state)
    predicted = np.stack([g.argmax() for g in forced.predicted], axis=1)
    return float(np.mean(predicted == batch.golden_topics))


def _train(train: Corpus, cfg: TrainConfig, scheme: Optional[Scheme], variant: Variant, **kwargs) -> TrainingResult:
    if scheme is not None:
        cfg = cfg.model_copy(update={"scheme": scheme})
    return TrainingService(cfg, train, variant, **kwargs).train()


def train_cascaded(train: Corpus, cfg: TrainConfig, **kwargs) -> TrainingResult:
    if not train.has_topics:
        raise ConfigError("cascaded training needs golden topics")
    return _train(train, cfg, Scheme.CASCADED, Variant.HSRL, **kwargs)


def train_iterative(train: Corpus, cfg: TrainConfig, **kwargs) -> TrainingResult:
    return _train(train, cfg, Scheme.ITERATIVE, Variant.HSRL, **kwargs)


def train_joint(train: Corpus, cfg: TrainConfig, **kwargs) -> TrainingResult:
    return _train(train, cfg, Scheme.JOINT, Variant.HSRL, **kwargs)


def train_variant(train: Corpus, cfg: TrainConfig, variant: Variant = Variant.HSRL, **kwargs) -> TrainingResult:
    return _train(train, cfg, None, Variant(variant), **kwargs)


def create_training_service(cfg: TrainConfig, train: Corpus, variant: Variant = Variant.HSRL, **kwargs) -> TrainingService:
    """Factory function to create a training service"""
    return TrainingService(cfg, train, Variant(variant), **kwargs)


# ----------------------------------------------------------------------
# Gradient verification
# ----------------------------------------------------------------------

GRADCHECK_CONFIG = dict(K=2, n=2, d_v=4, n_h=3, n_x=3, n_f=2, n_m=2, worker_mlp_dim=3, T_max=4)


def gradient_suite(
    corpus: Corpus,
    cfg: Optional[TrainConfig] = None,
    seed: int = 0,
    step: float = 1e-5,
) -> Dict[str, float]:
    """
    Finite-difference check of every training loss on the first record of corpus.

    Rollout tokens and advantages are frozen before differentiation, so the
    self-critical and joint objectives are deterministic functions of the parameters.

    Args:
        corpus: records with golden topics
        cfg: model dimensions (small toy dims when omitted)
        seed: parameter init and rollout seed
        step: central-difference step

    Returns:
        dict: loss name -> max relative error
    """
    if not corpus.records:
        raise ConfigError("gradient check needs at least one record")
    if not corpus.has_topics:
        raise ConfigError("gradient check needs golden topics")
    cfg = cfg or TrainConfig(**GRADCHECK_CONFIG, seed=seed)
    if corpus.n != cfg.n or corpus.d_v != cfg.d_v:
        raise ConfigError(f"corpus has n={corpus.n}, d_v={corpus.d_v} but config says n={cfg.n}, d_v={cfg.d_v}")
    policy = build_policy(cfg, len(corpus.vocab), Variant.HSRL)
    batch = StoryBatch.from_records(corpus.records[:1])
    rng = SeededRng(seed)
    with no_grad():
        rollout = policy.rollout(batch, rng.child(0))
    sampled = replace(
        batch,
        targets=[r.tokens for r in rollout.sampled],
        lengths=[r.lengths for r in rollout.sampled],
    )
    adv = rng.child(1).normal(0.0, 1.0, (1, batch.n))

    def worker_mle():
        return worker_mle_loss(policy.teacher_forced(batch).scored)

    def manager_mle():
        return manager_nll(policy.teacher_forced(batch).predicted, batch.golden_topics)

    def worker_rl():
        return self_critical_loss(policy.teacher_forced(sampled, replay=True).scored, adv)

    def joint():
        forced = policy.teacher_forced(batch)
        return joint_loss(
            cfg.gamma1,
            cfg.gamma2,
            manager_nll(forced.predicted, batch.golden_topics),
            self_critical_loss(policy.teacher_forced(sampled, replay=True).scored, adv),
            worker_mle_loss(forced.scored),
        )

    params = policy.parameters()
    errors = {}
    for name, f in (("worker_mle", worker_mle), ("manager_mle", manager_mle), ("worker_rl", worker_rl), ("joint", joint)):
        errors[name] = finite_difference_check(f, params, step)
        logger.info(f"Gradient check {name}: max rel. error {errors[name]:.3e}")
    policy.zero_grad()
    return errors
