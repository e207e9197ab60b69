# agents/agent_policy.py
"""
Manager <-> Worker unrolling shared by training and generation.

A HierarchicalPolicy decides, per variant, where the Worker's topic comes from
(the Manager's soft prediction, golden one-hot, random one-hot or a constant)
and which context vector initializes each sentence.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from agents.agent_manager import ManagerDecoder, ManagerState
from agents.agent_model import (
    CellVariant,
    ContextSource,
    DecodeMode,
    GenerationTrace,
    ManagerContext,
    Scheme,
    SlotTrace,
    TopicDistribution,
    TopicSource,
    TrainConfig,
    Variant,
)
from agents.agent_worker import Condition, DecodeResult, WorkerDecoder, WorkerState
from corpus.records import StoryRecord, mean_pool
from corpus.vocab import PAD, Vocab
from diffcore import ops
from diffcore.errors import ConfigError, DimensionError
from diffcore.rng import SeededRng
from diffcore.tensor import Parameter, Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class StoryBatch:
    """B records stacked slot-wise"""
    features: np.ndarray                   # (B, n, d_v)
    mean_vector: np.ndarray                # (B, d_v)
    targets: List[np.ndarray]              # n arrays (B, L_ℓ), EOS-terminated, PAD-filled
    references: List[List[List[int]]]      # [B][n] golden token ids without EOS
    golden_topics: Optional[np.ndarray] = None   # (B, n)
    lengths: Optional[List[np.ndarray]] = None   # n arrays (B,), EOS included

    @classmethod
    def from_records(cls, records: Sequence[StoryRecord]) -> "StoryBatch":
        if not records:
            raise ConfigError("empty batch")
        features = np.stack([r.features for r in records])
        n = features.shape[1]
        targets, lengths = [], []
        for slot in range(n):
            rows = [r.sentences[slot] for r in records]
            width = max(len(s) for s in rows)
            padded = np.full((len(rows), width), PAD, dtype=np.int64)
            for i, s in enumerate(rows):
                padded[i, :len(s)] = s
            targets.append(padded)
            lengths.append(np.array([len(s) for s in rows], dtype=np.int64))
        references = [[s[:-1] for s in r.sentences] for r in records]
        golden = None
        if all(r.golden_topics is not None for r in records):
            golden = np.array([r.golden_topics for r in records], dtype=np.int64)
        return cls(features, mean_pool(features), targets, references, golden, lengths)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]


@dataclass
class SlotPlan:
    manager_state: Optional[ManagerState]
    predicted: Optional[TopicDistribution]
    topics: TopicDistribution
    context: Tensor


@dataclass
class TeacherForcedPass:
    predicted: List[TopicDistribution] = field(default_factory=list)
    scored: List[DecodeResult] = field(default_factory=list)


@dataclass
class RolloutPass:
    sampled: List[DecodeResult] = field(default_factory=list)
    greedy: List[DecodeResult] = field(default_factory=list)


class HierarchicalPolicy:
    """Manager (optional) plus Worker, wired according to topic and context sources"""

    def __init__(
        self,
        worker: WorkerDecoder,
        manager: Optional[ManagerDecoder] = None,
        topic_source: TopicSource = TopicSource.MANAGER,
        context_source: ContextSource = ContextSource.MANAGER,
        feed_worker_state: bool = True,
        manager_context: ManagerContext = ManagerContext.GOLDEN,
        T_max: int = 20,
    ):
        self.worker = worker
        self.manager = manager
        self.topic_source = TopicSource(topic_source)
        self.context_source = ContextSource(context_source)
        self.feed_worker_state = feed_worker_state
        self.manager_context = ManagerContext(manager_context)
        self.T_max = T_max
        needs_manager = self.topic_source == TopicSource.MANAGER or self.context_source == ContextSource.MANAGER
        if needs_manager and manager is None:
            raise ConfigError(f"topic source {self.topic_source.value} / context {self.context_source.value} need a Manager")
        self.manager_calls = 0

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def parameters(self) -> List[Parameter]:
        params = [] if self.manager is None else self.manager.parameters()
        return params + self.worker.parameters()

    def state_dict(self):
        state = {} if self.manager is None else self.manager.state_dict()
        state.update(self.worker.state_dict())
        return state

    def load_state_dict(self, state):
        if self.manager is not None:
            self.manager.load_state_dict(state)
        self.worker.load_state_dict(state)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    @property
    def K(self) -> int:
        return self.worker.K

    @contextmanager
    def topics_from(self, source: TopicSource):
        """Temporarily switch the Worker's topic source (cascaded stage 2 trains on golden topics)"""
        previous = self.topic_source
        self.topic_source = TopicSource(source)
        try:
            yield self
        finally:
            self.topic_source = previous

    # ------------------------------------------------------------------
    # One slot
    # ------------------------------------------------------------------

    def initial(self, batch: StoryBatch) -> Optional[ManagerState]:
        if self.manager is None:
            return None
        return self.manager.init_state(batch.mean_vector)

    def zero_hidden(self, batch: StoryBatch) -> Tensor:
        return Tensor(np.zeros((batch.size, self.worker.n_h)))

    def plan(
        self,
        batch: StoryBatch,
        slot: int,
        state: Optional[ManagerState],
        h_prev: Tensor,
        rng: Optional[SeededRng] = None,
    ) -> SlotPlan:
        """Manager step (if any) plus the topic and context the Worker receives for this slot"""
        v = batch.features[:, slot, :]
        predicted = None
        context = None
        if self.manager is not None:
            self.manager_calls += 1
            if not self.feed_worker_state:
                h_prev = self.zero_hidden(batch)
            step = self.manager.step(state, v, h_prev)
            state, predicted, context = step.state, step.g, step.context

        if self.topic_source == TopicSource.MANAGER:
            topics = predicted
        elif self.topic_source == TopicSource.GOLDEN:
            if batch.golden_topics is None:
                raise ConfigError("golden topic source needs records with golden topics")
            topics = TopicDistribution.one_hot(batch.golden_topics[:, slot], self.K)
        elif self.topic_source == TopicSource.RANDOM:
            if rng is None:
                raise ConfigError("random topic source needs an rng")
            topics = TopicDistribution.one_hot(rng.integers(0, self.K, batch.size), self.K)
        else:
            topics = TopicDistribution(Tensor(np.ones((batch.size, self.K)) / self.K))

        if self.context_source == ContextSource.BLANK:
            context = Tensor(np.zeros((batch.size, self.worker.context_dim)))
        elif self.context_source == ContextSource.FLAT:
            context = Tensor(np.concatenate([batch.mean_vector, v], axis=-1))
        if context.shape[-1] != self.worker.context_dim:
            raise DimensionError(
                f"context width {context.shape[-1]} does not match worker context_dim={self.worker.context_dim}"
            )
        return SlotPlan(state, predicted, topics, context)

    # ------------------------------------------------------------------
    # Whole stories
    # ------------------------------------------------------------------

    def teacher_forced(
        self,
        batch: StoryBatch,
        rng: Optional[SeededRng] = None,
        with_worker: bool = True,
        replay: bool = False,
    ) -> TeacherForcedPass:
        """
        Unroll on the batch's sentences.

        The Manager sees the final state of a Worker run on the previous slot's golden topic
        and golden sentence (or its greedy decode when manager_context is generated), whatever
        topics the scored Worker pass receives. replay=True feeds the Manager the scored pass
        instead, reproducing a free-running trajectory when rescoring generated or sampled
        sentences. with_worker=False skips the Worker entirely and feeds the Manager zeros.
        """
        out = TeacherForcedPass()
        state = self.initial(batch)
        h_prev = self.zero_hidden(batch)
        for slot in range(batch.n):
            plan = self.plan(batch, slot, state, h_prev, rng)
            state = plan.manager_state
            if plan.predicted is not None:
                out.predicted.append(plan.predicted)
            if not with_worker:
                continue
            cond = self.worker.condition(plan.topics)
            init = self.worker.init_state(plan.context)
            lengths = None if batch.lengths is None else batch.lengths[slot]
            scored = self.worker.score(init, cond, batch.targets[slot], lengths)
            out.scored.append(scored)
            if replay:
                h_prev = scored.final_hidden
            elif slot + 1 < batch.n and self.manager is not None and self.feed_worker_state:
                h_prev = self._manager_feed(batch, slot, init, cond, scored)
        return out

    def _manager_feed(
        self, batch: StoryBatch, slot: int, init: WorkerState, cond: Condition, scored: DecodeResult
    ) -> Tensor:
        """Worker final state on slot's golden topic, the Manager's input at slot + 1"""
        if self.topic_source != TopicSource.GOLDEN:
            if batch.golden_topics is None:
                raise ConfigError("teacher-forced Manager input needs records with golden topics")
            cond = self.worker.condition(TopicDistribution.one_hot(batch.golden_topics[:, slot], self.K))
            scored = None
        if self.manager_context == ManagerContext.GENERATED:
            return self.worker.greedy_final_hidden(init, cond, self.T_max)
        if scored is None:
            lengths = None if batch.lengths is None else batch.lengths[slot]
            scored = self.worker.score(init, cond, batch.targets[slot], lengths)
        return scored.final_hidden

    def rollout(self, batch: StoryBatch, rng: SeededRng) -> RolloutPass:
        """
        Sampled trajectory on the tape plus, per slot, a greedy decode off the tape
        branching from the same initial state; sampled sentences drive the Manager.
        """
        out = RolloutPass()
        state = self.initial(batch)
        h_prev = self.zero_hidden(batch)
        for slot in range(batch.n):
            plan = self.plan(batch, slot, state, h_prev, rng.child(slot, 0))
            state = plan.manager_state
            cond = self.worker.condition(plan.topics)
            init = self.worker.init_state(plan.context)
            sampled = self.worker.decode(init, cond, DecodeMode.SAMPLE, rng.child(slot, 1), self.T_max)
            with no_grad():
                greedy = self.worker.decode(init, cond, DecodeMode.GREEDY, None, self.T_max)
            out.sampled.append(sampled)
            out.greedy.append(greedy)
            h_prev = sampled.final_hidden
        return out

    def generate(
        self,
        batch: StoryBatch,
        mode: DecodeMode = DecodeMode.GREEDY,
        rng: Optional[SeededRng] = None,
        vocab: Optional[Vocab] = None,
        first_index: int = 0,
    ) -> List[GenerationTrace]:
        """Free-running story generation, one trace per record"""
        traces = [GenerationTrace(record_index=first_index + i) for i in range(batch.size)]
        with no_grad():
            state = self.initial(batch)
            h_prev = self.zero_hidden(batch)
            for slot in range(batch.n):
                slot_rng = None if rng is None else rng.child(slot)
                plan = self.plan(batch, slot, state, h_prev, None if slot_rng is None else slot_rng.child(0))
                state = plan.manager_state
                cond = self.worker.condition(plan.topics)
                init = self.worker.init_state(plan.context)
                decoded = self.worker.decode(
                    init, cond, mode, None if slot_rng is None else slot_rng.child(1), self.T_max
                )
                h_prev = decoded.final_hidden
                shown = plan.predicted if plan.predicted is not None else plan.topics
                for i, trace in enumerate(traces):
                    row = decoded.tokens[i]
                    length = int(decoded.lengths[i])
                    trace.slots.append(SlotTrace(
                        topic_probs=shown.numpy()[i].tolist(),
                        topic=int(plan.topics.argmax()[i]),
                        tokens=row[:length].tolist(),
                        log_probs=decoded.log_probs.data[i, :length].tolist(),
                        final_hidden=decoded.final_hidden.data[i].tolist(),
                        text="" if vocab is None else vocab.decode_sentence(row[:length]),
                    ))
        return traces


def build_policy(cfg: TrainConfig, vocab_size: int, variant: Variant = Variant.HSRL) -> HierarchicalPolicy:
    """
    Construct the decoders and wiring for one model variant.

    hsrl: Manager soft topics and [v_ℓ, s_ℓ] context. worker_gtt / worker_random_topics:
    no Manager, golden or random one-hot topics and an all-zero context of the same width.
    flat_mle / flat_rl: a single plain LSTM decoder with [v̄; v_ℓ] context.
    """
    variant = Variant(variant)
    rng = SeededRng(cfg.seed).child(1000)
    if variant in (Variant.FLAT_MLE, Variant.FLAT_RL):
        worker = WorkerDecoder(
            vocab_size, 2 * cfg.d_v, 1, cfg.n_h, cfg.n_x, cfg.n_f, cfg.worker_mlp_dim,
            rng.child(1), CellVariant.LSTM, cfg.init_scale, cfg.forget_bias,
        )
        return HierarchicalPolicy(worker, None, TopicSource.CONSTANT, ContextSource.FLAT, T_max=cfg.T_max)

    worker = WorkerDecoder(
        vocab_size, cfg.d_v + cfg.n_m, cfg.K, cfg.n_h, cfg.n_x, cfg.n_f, cfg.worker_mlp_dim,
        rng.child(1), cfg.cell, cfg.init_scale, cfg.forget_bias,
    )
    if variant == Variant.HSRL:
        manager = ManagerDecoder(cfg.d_v, cfg.n_h, cfg.n_m, cfg.K, rng.child(0), cfg.init_scale, cfg.forget_bias)
        return HierarchicalPolicy(
            worker,
            manager,
            TopicSource.MANAGER,
            ContextSource.MANAGER,
            feed_worker_state=cfg.scheme != Scheme.CASCADED,
            manager_context=cfg.manager_context,
            T_max=cfg.T_max,
        )
    source = TopicSource.GOLDEN if variant == Variant.WORKER_GTT else TopicSource.RANDOM
    return HierarchicalPolicy(worker, None, source, ContextSource.BLANK, T_max=cfg.T_max)
