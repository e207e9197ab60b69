# agents/agent_model.py
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from corpus.vocab import EOS
from diffcore import ops
from diffcore.errors import config_error
from diffcore.tensor import Tensor


# Enumerations
class Scheme(str, Enum):
    CASCADED = "cascaded"
    ITERATIVE = "iterative"
    JOINT = "joint"


class CellVariant(str, Enum):
    SCN_LSTM = "scn-lstm"
    SCN_VANILLA = "scn-vanilla"
    LSTM = "lstm"


class DecodeMode(str, Enum):
    GREEDY = "greedy"
    SAMPLE = "sample"


class AdvantageSign(str, Enum):
    SELF_CRITICAL = "self-critical"
    GREEDY_MINUS_SAMPLED = "greedy-minus-sampled"


class ManagerContext(str, Enum):
    GOLDEN = "golden"
    GENERATED = "generated"


class Variant(str, Enum):
    HSRL = "hsrl"
    WORKER_RANDOM_TOPICS = "worker_random_topics"
    WORKER_GTT = "worker_gtt"
    FLAT_MLE = "flat_mle"
    FLAT_RL = "flat_rl"


class TopicSource(str, Enum):
    MANAGER = "manager"
    GOLDEN = "golden"
    RANDOM = "random"
    CONSTANT = "constant"


class ContextSource(str, Enum):
    MANAGER = "manager"
    BLANK = "blank"
    FLAT = "flat"


# Configuration
class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # dimensions
    K: int = 4
    n: int = 5
    d_v: int = 16
    n_h: int = 48
    n_x: int = 24
    n_f: int = 16
    n_m: int = 32
    worker_mlp_dim: int = 64
    T_max: int = 20

    # objectives
    gamma_max: float = 0.7
    gamma1: float = 0.7
    gamma2: float = 0.9
    warmup_epochs: int = 50
    ramp_epochs: int = 50
    advantage_sign: AdvantageSign = AdvantageSign.SELF_CRITICAL
    story_bonus: float = 0.0
    manager_context: ManagerContext = ManagerContext.GOLDEN
    iterative_manager_phase: bool = True

    # optimization
    scheme: Scheme = Scheme.JOINT
    cell: CellVariant = CellVariant.SCN_LSTM
    optimizer: str = "adam"
    lr: float = 0.005
    grad_clip: Optional[float] = 5.0
    batch_size: int = 8
    epochs: int = 200
    manager_epochs: Optional[int] = None
    eval_every: int = 0
    init_scale: float = 0.08
    forget_bias: float = 1.0
    kmeans_max_iter: int = 100
    seed: int = 0

    def __init__(self, **data):
        try:
            super().__init__(**data)
        except ValidationError as exc:
            raise config_error(type(self).__name__, exc) from None

    @field_validator("K")
    @classmethod
    def _topics(cls, v):
        if v < 2:
            raise ValueError(f"K must be >= 2, got {v}")
        return v

    @field_validator("n", "d_v", "n_h", "n_x", "n_f", "n_m", "worker_mlp_dim", "T_max", "batch_size")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v

    @field_validator("warmup_epochs", "ramp_epochs", "epochs", "eval_every", "kmeans_max_iter")
    @classmethod
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError(f"must be >= 0, got {v}")
        return v

    @field_validator("gamma_max")
    @classmethod
    def _gamma_max(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError(f"gamma_max must lie in [0, 1), got {v}")
        return v

    @field_validator("gamma1", "gamma2")
    @classmethod
    def _unit_interval(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"must lie in [0, 1], got {v}")
        return v

    @field_validator("lr", "init_scale")
    @classmethod
    def _strictly_positive(cls, v):
        if v <= 0:
            raise ValueError(f"must be > 0, got {v}")
        return v

    @field_validator("grad_clip")
    @classmethod
    def _clip(cls, v):
        if v is not None and v < 0:
            raise ValueError(f"grad_clip must be >= 0 or None, got {v}")
        return v or None

    @field_validator("story_bonus")
    @classmethod
    def _bonus(cls, v):
        if v < 0:
            raise ValueError(f"story_bonus must be >= 0, got {v}")
        return v

    @field_validator("optimizer")
    @classmethod
    def _optimizer(cls, v):
        if v not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {v!r}")
        return v


# Runtime containers
@dataclass
class TopicDistribution:
    """Batch of points on the K-simplex: the Manager's subgoal and the Worker's mixture weights"""
    probs: Tensor
    log_probs: Optional[Tensor] = None

    @classmethod
    def from_logits(cls, logits: Tensor) -> "TopicDistribution":
        return cls(ops.softmax(logits), ops.log_softmax(logits))

    @classmethod
    def from_probs(cls, probs) -> "TopicDistribution":
        probs = ops.as_tensor(probs)
        if probs.ndim == 1:
            probs = ops.reshape(probs, (1, probs.shape[0]))
        return cls(probs, ops.log(probs))

    @classmethod
    def one_hot(cls, ids, K: int) -> "TopicDistribution":
        ids = np.asarray(ids, dtype=np.int64)
        return cls(Tensor(np.eye(K)[ids]))

    @property
    def K(self) -> int:
        return self.probs.shape[-1]

    def argmax(self) -> np.ndarray:
        return np.argmax(self.probs.data, axis=-1)

    def numpy(self) -> np.ndarray:
        return self.probs.data

    def on_simplex(self, tol: float = 1e-12) -> bool:
        p = self.probs.data
        return bool(np.all(p >= 0) and np.all(np.abs(p.sum(axis=-1) - 1.0) <= tol))


class SlotTrace(BaseModel):
    topic_probs: List[float]
    topic: int
    tokens: List[int]
    log_probs: List[float]
    final_hidden: List[float]
    text: str = ""


class GenerationTrace(BaseModel):
    """Per-slot record of one generated story"""
    record_index: int = 0
    slots: List[SlotTrace] = Field(default_factory=list)

    @property
    def topics(self) -> List[int]:
        return [s.topic for s in self.slots]

    def sentences(self) -> List[List[int]]:
        """Generated token ids per slot without the trailing EOS"""
        return [[t for t in s.tokens if t != EOS] for s in self.slots]
