# agents/agent_worker.py
"""
Worker: the semantic-compositional sentence decoder.

Every input-to-hidden and hidden-to-hidden matrix is a topic mixture held in
three factors, W(g) = Wa · diag(Wb g) · Wc, so a one-hot g selects a single
per-topic expert cell and a soft g blends them. The mixture is applied in
factored form, Wa ((Wb g) ⊙ (Wc x)), without materializing W(g).
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from agents.agent_base import BaseDecoder
from agents.agent_model import CellVariant, DecodeMode, TopicDistribution
from corpus.vocab import BOS, EOS, PAD
from diffcore import ops
from diffcore.errors import ConfigError, DimensionError
from diffcore.lstm import FORGET_BIAS, INIT_SCALE, LSTMParams, forget_gate_bias, lstm_step, lstm_update
from diffcore.rng import SeededRng
from diffcore.tensor import Parameter, Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class WorkerState:
    h: Tensor
    c: Optional[Tensor] = None
    t: int = 0


@dataclass
class Condition:
    """Topic-dependent factor products Wb·g, computed once per sentence"""
    g: TopicDistribution
    u_x: Optional[Tensor] = None
    u_h: Optional[Tensor] = None


@dataclass
class DecodeResult:
    tokens: np.ndarray          # (B, T) ids, PAD after EOS
    log_probs: Tensor           # (B, T) per-token log-probabilities, 0 after EOS
    final_hidden: Tensor        # (B, n_h) state at the step that emitted EOS
    lengths: np.ndarray         # (B,) emitted tokens per row, EOS included

    @property
    def sequence_log_prob(self) -> Tensor:
        return ops.total(self.log_probs, axis=1)

    def sentences(self):
        """Token lists without EOS or padding"""
        out = []
        for row, length in zip(self.tokens, self.lengths):
            words = [int(t) for t in row[:length]]
            out.append(words[:-1] if words and words[-1] == EOS else words)
        return out


def compose_weight(Wa, Wb, Wc, g) -> Tensor:
    """Wa · diag(Wb g) · Wc for one gate and a single topic vector g"""
    Wa, Wb, Wc, g = ops.as_tensor(Wa), ops.as_tensor(Wb), ops.as_tensor(Wc), ops.as_tensor(g)
    if Wa.shape[1] != Wb.shape[0] or Wb.shape[0] != Wc.shape[0] or g.shape != (Wb.shape[1],):
        raise DimensionError(
            f"compose_weight: factors {Wa.shape}, {Wb.shape}, {Wc.shape} do not match g {g.shape}"
        )
    scale = ops.einsum("fk,k->f", Wb, g)
    return ops.einsum("hf,fx->hx", ops.einsum("hf,f->hf", Wa, scale), Wc)


class WorkerDecoder(BaseDecoder):
    """Topic-conditioned sentence decoder with scn-lstm, scn-vanilla or plain lstm cells"""

    def __init__(
        self,
        vocab_size: int,
        context_dim: int,
        K: int,
        n_h: int,
        n_x: int,
        n_f: int,
        mlp_dim: int,
        rng: SeededRng,
        cell: CellVariant = CellVariant.SCN_LSTM,
        init_scale: float = INIT_SCALE,
        forget_bias: float = FORGET_BIAS,
    ):
        super().__init__("worker", rng, init_scale)
        cell = CellVariant(cell)
        self.vocab_size, self.context_dim, self.K = vocab_size, context_dim, K
        self.n_h, self.n_x, self.n_f = n_h, n_x, n_f
        self.cell = cell

        self.embed = self.add_parameter("embed", (vocab_size, n_x))
        self.init_hW = self.add_parameter("init_h.W", (n_h, context_dim))
        self.init_hb = self.add_parameter("init_h.b", (n_h,), init="zeros")
        if cell != CellVariant.SCN_VANILLA:
            self.init_cW = self.add_parameter("init_c.W", (n_h, context_dim))
            self.init_cb = self.add_parameter("init_c.b", (n_h,), init="zeros")

        if cell == CellVariant.LSTM:
            self.lstm = LSTMParams.create("worker.lstm", n_x, n_h, rng, init_scale, forget_bias)
            for p in self.lstm.parameters():
                self.register(p)
        else:
            gates = 4 if cell == CellVariant.SCN_LSTM else 1
            self.gates = gates
            self.W3a = self.add_parameter("W3a", (gates, n_h, n_f))
            self.W3b = self.add_parameter("W3b", (gates, n_f, K))
            self.W3c = self.add_parameter("W3c", (gates, n_f, n_x))
            self.W4a = self.add_parameter("W4a", (gates, n_h, n_f))
            self.W4b = self.add_parameter("W4b", (gates, n_f, K))
            self.W4c = self.add_parameter("W4c", (gates, n_f, n_h))
            self.b = self.register(Parameter(forget_gate_bias(n_h, forget_bias, gates), "worker.b"))

        self.W2 = self.add_parameter("W2", (n_x, n_h))
        self.mlp_W = self.add_parameter("mlp.W", (mlp_dim, n_x))
        self.mlp_b = self.add_parameter("mlp.b", (mlp_dim,), init="zeros")
        self.out_W = self.add_parameter("out.W", (vocab_size, mlp_dim))
        self.out_b = self.add_parameter("out.b", (vocab_size,), init="zeros")

    # ------------------------------------------------------------------
    # Cell
    # ------------------------------------------------------------------

    def condition(self, g: TopicDistribution) -> Condition:
        """Per-sentence factor products; g stays constant while the sentence is decoded"""
        if self.cell == CellVariant.LSTM:
            return Condition(g)
        if g.K != self.K:
            raise DimensionError(f"worker: topic distribution has K={g.K}, decoder expects K={self.K}")
        u_x = ops.einsum("gfk,bk->bgf", self.W3b, g.probs)
        u_h = ops.einsum("gfk,bk->bgf", self.W4b, g.probs)
        return Condition(g, u_x, u_h)

    def init_state(self, context) -> WorkerState:
        """h₀ (and c₀) = tanh of an affine projection of the context vector"""
        context = ops.as_tensor(context)
        if context.shape[-1] != self.context_dim:
            raise DimensionError(
                f"worker_init: context shape {context.shape} does not match context_dim={self.context_dim}"
            )
        h = ops.tanh(ops.affine(context, self.init_hW, self.init_hb))
        c = None
        if self.cell != CellVariant.SCN_VANILLA:
            c = ops.tanh(ops.affine(context, self.init_cW, self.init_cb))
        return WorkerState(h, c, 0)

    def _mixture(self, Wa: Parameter, Wc: Parameter, u: Tensor, x: Tensor) -> Tensor:
        projected = ops.einsum("gfx,bx->bgf", Wc, x)
        return ops.einsum("ghf,bgf->bgh", Wa, ops.mul(u, projected))

    def recur(self, state: WorkerState, x: Tensor, cond: Condition) -> WorkerState:
        if x.shape[-1] != self.n_x or state.h.shape[-1] != self.n_h:
            raise DimensionError(f"scn_step: input {x.shape} / state {state.h.shape} do not match n_x, n_h")
        if self.cell == CellVariant.LSTM:
            h, c = lstm_step(x, state.h, state.c, self.lstm)
            return WorkerState(h, c, state.t + 1)
        pre = ops.add(self._mixture(self.W3a, self.W3c, cond.u_x, x), self._mixture(self.W4a, self.W4c, cond.u_h, state.h))
        pre = ops.add(ops.reshape(pre, (x.shape[0], self.gates * self.n_h)), self.b)
        if self.cell == CellVariant.SCN_VANILLA:
            return WorkerState(ops.sigmoid(pre), None, state.t + 1)
        h, c = lstm_update(pre, state.c)
        return WorkerState(h, c, state.t + 1)

    def logits(self, h: Tensor) -> Tensor:
        hidden = ops.tanh(ops.affine(ops.linear(h, self.W2), self.mlp_W, self.mlp_b))
        return ops.affine(hidden, self.out_W, self.out_b)

    def step(self, state: WorkerState, x, cond: Condition):
        """scn_step: new state and logits over the vocabulary"""
        new_state = self.recur(state, ops.as_tensor(x), cond)
        return new_state, self.logits(new_state.h)

    # ------------------------------------------------------------------
    # Sentences
    # ------------------------------------------------------------------

    def _carry(self, active: np.ndarray, old: WorkerState, new: WorkerState) -> WorkerState:
        """Rows that already finished keep their old state exactly"""
        mask = active[:, None]
        h = ops.where(mask, new.h, old.h)
        c = None if new.c is None else ops.where(mask, new.c, old.c)
        return WorkerState(h, c, new.t)

    def decode(
        self,
        state: WorkerState,
        cond: Condition,
        mode: DecodeMode = DecodeMode.GREEDY,
        rng: Optional[SeededRng] = None,
        T_max: int = 20,
    ) -> DecodeResult:
        """
        Generate one sentence per batch row.

        Args:
            state: initial state from init_state
            cond: topic condition for the sentence
            mode: greedy (argmax, lowest id on ties) or sample
            rng: required for sample mode
            T_max: hard length cap

        Returns:
            DecodeResult: tokens, per-token log-probs and the final hidden state
        """
        mode = DecodeMode(mode)
        if mode == DecodeMode.SAMPLE and rng is None:
            raise ConfigError("sample decoding needs an rng")
        if T_max < 1:
            raise ConfigError(f"decode: T_max must be >= 1, got {T_max}")
        B = state.h.shape[0]
        prev = np.full(B, BOS, dtype=np.int64)
        active = np.ones(B, dtype=bool)
        lengths = np.zeros(B, dtype=np.int64)
        tokens, log_probs = [], []
        for _ in range(T_max):
            new_state, logits = self.step(state, ops.gather_rows(self.embed, prev), cond)
            logp = ops.log_softmax(logits)
            if mode == DecodeMode.GREEDY:
                ids = np.argmax(logp.data, axis=-1)
            else:
                ids = rng.categorical(np.exp(logp.data))
            ids = np.where(active, ids, PAD)
            log_probs.append(ops.where(active, ops.pick(logp, ids), 0.0))
            tokens.append(ids)
            state = self._carry(active, state, new_state)
            lengths += active
            active = active & (ids != EOS)
            prev = ids
            if not active.any():
                break
        stacked = ops.concat([ops.reshape(lp, (B, 1)) for lp in log_probs], axis=1)
        return DecodeResult(np.stack(tokens, axis=1), stacked, state.h, lengths)

    def score(self, state: WorkerState, cond: Condition, targets, lengths=None) -> DecodeResult:
        """
        Teacher-forced log-probabilities of padded target rows.

        Row b covers its first lengths[b] tokens; without lengths a row ends at its first PAD.
        """
        targets = np.asarray(targets, dtype=np.int64)
        B, L = targets.shape
        if lengths is None:
            lengths = np.where((targets == PAD).any(axis=1), np.argmax(targets == PAD, axis=1), L)
        lengths = np.asarray(lengths, dtype=np.int64)
        if B != state.h.shape[0]:
            raise DimensionError(f"score: {B} target rows for a state batch of {state.h.shape[0]}")
        prev = np.full(B, BOS, dtype=np.int64)
        log_probs = []
        for t in range(L):
            active = t < lengths
            new_state, logits = self.step(state, ops.gather_rows(self.embed, prev), cond)
            picked = ops.pick(ops.log_softmax(logits), targets[:, t])
            log_probs.append(ops.reshape(ops.where(active, picked, 0.0), (B, 1)))
            state = self._carry(active, state, new_state)
            prev = targets[:, t]
        return DecodeResult(targets, ops.concat(log_probs, axis=1), state.h, lengths)

    def greedy_final_hidden(self, state: WorkerState, cond: Condition, T_max: int) -> Tensor:
        """h_T of a greedy decode, off the tape"""
        with no_grad():
            return self.decode(state, cond, DecodeMode.GREEDY, None, T_max).final_hidden.detach()


def worker_mle_terms(result: DecodeResult) -> Tensor:
    """Negative summed log-likelihood per batch row"""
    return ops.scale(result.sequence_log_prob, -1.0)
