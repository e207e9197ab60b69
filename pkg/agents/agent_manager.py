# agents/agent_manager.py
"""
Manager: the high-level decoder that plans one topic per image slot.

    s_ℓ = LSTM(s_{ℓ-1}, h_{ℓ-1,T})
    c_ℓ = [v_ℓ, s_ℓ]
    g_ℓ = softmax(MLP(W₁ c_ℓ))

The recurrent state is primed by one step on a projection of the mean-pooled
image-sequence vector v̄.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from agents.agent_base import BaseDecoder
from agents.agent_model import TopicDistribution
from diffcore import ops
from diffcore.errors import AlignmentError, DimensionError, TopicIndexError
from diffcore.lstm import FORGET_BIAS, INIT_SCALE, LSTMParams, lstm_step
from diffcore.rng import SeededRng
from diffcore.tensor import Tensor


@dataclass
class ManagerState:
    h: Tensor
    c: Tensor


@dataclass
class ManagerStep:
    state: ManagerState
    context: Tensor
    g: TopicDistribution


class ManagerDecoder(BaseDecoder):
    """Topic planner over image slots"""

    def __init__(
        self,
        d_v: int,
        n_h: int,
        n_m: int,
        K: int,
        rng: SeededRng,
        init_scale: float = INIT_SCALE,
        forget_bias: float = FORGET_BIAS,
    ):
        super().__init__("manager", rng, init_scale)
        self.d_v, self.n_h, self.n_m, self.K = d_v, n_h, n_m, K

        self.proj_W = self.add_parameter("proj.W", (n_h, d_v))
        self.proj_b = self.add_parameter("proj.b", (n_h,), init="zeros")
        self.lstm = LSTMParams.create("manager.lstm", n_h, n_m, rng, init_scale, forget_bias)
        for p in self.lstm.parameters():
            self.register(p)
        self.W1 = self.add_parameter("W1", (n_m, d_v + n_m))
        self.mlp_W = self.add_parameter("mlp.W", (n_m, n_m))
        self.mlp_b = self.add_parameter("mlp.b", (n_m,), init="zeros")
        self.out_W = self.add_parameter("out.W", (K, n_m))
        self.out_b = self.add_parameter("out.b", (K,), init="zeros")

    @property
    def context_dim(self) -> int:
        return self.d_v + self.n_m

    def init_state(self, mean_vector) -> ManagerState:
        """One LSTM step from the zero state on the projected image-sequence vector"""
        v_bar = ops.as_tensor(mean_vector)
        if v_bar.shape[-1] != self.d_v:
            raise DimensionError(f"manager_init: v̄ shape {v_bar.shape} does not match d_v={self.d_v}")
        zeros = Tensor(np.zeros(v_bar.shape[:-1] + (self.n_m,)))
        h, c = lstm_step(ops.affine(v_bar, self.proj_W, self.proj_b), zeros, zeros, self.lstm)
        return ManagerState(h, c)

    def topic_head(self, context: Tensor) -> TopicDistribution:
        hidden = ops.tanh(ops.affine(ops.linear(context, self.W1), self.mlp_W, self.mlp_b))
        return TopicDistribution.from_logits(ops.affine(hidden, self.out_W, self.out_b))

    def step(self, state: ManagerState, v, h_worker) -> ManagerStep:
        """Advance on the Worker's last hidden state, then emit the next subgoal"""
        v, h_worker = ops.as_tensor(v), ops.as_tensor(h_worker)
        if v.shape[-1] != self.d_v:
            raise DimensionError(f"manager_step: v shape {v.shape} does not match d_v={self.d_v}")
        if h_worker.shape[-1] != self.n_h:
            raise DimensionError(f"manager_step: h_worker shape {h_worker.shape} does not match n_h={self.n_h}")
        h, c = lstm_step(h_worker, state.h, state.c, self.lstm)
        context = ops.concat([v, h], axis=-1)
        return ManagerStep(ManagerState(h, c), context, self.topic_head(context))


def manager_nll(g_sequence: Sequence[TopicDistribution], golden) -> Tensor:
    """
    Next-topic negative log likelihood, summed over slots and averaged over the batch.

    Args:
        g_sequence: one predicted distribution (B, K) per slot
        golden: (B, n) or (n,) golden topic ids

    Returns:
        Tensor: scalar loss
    """
    golden = np.atleast_2d(np.asarray(golden, dtype=np.int64))
    if golden.shape[1] != len(g_sequence):
        raise AlignmentError(f"manager_nll: {len(g_sequence)} predictions but {golden.shape[1]} golden topics")
    if not g_sequence:
        return Tensor(0.0)
    K = g_sequence[0].K
    if golden.min() < 0 or golden.max() >= K:
        raise TopicIndexError(f"manager_nll: golden topic ids {golden.tolist()} outside [0, {K})")
    total = None
    for slot, g in enumerate(g_sequence):
        picked = ops.total(ops.pick(g.log_probs, golden[:, slot]))
        total = picked if total is None else ops.add(total, picked)
    return ops.scale(total, -1.0 / golden.shape[0])
