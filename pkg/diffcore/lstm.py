"""
Four-gate LSTM built from diffcore primitives.
Gate order inside every stacked pre-activation is (input, forget, output, candidate).
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from diffcore import ops
from diffcore.errors import DimensionError
from diffcore.rng import SeededRng
from diffcore.tensor import Parameter, Tensor

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


@dataclass
class LSTMParams:
    """Input-to-hidden, hidden-to-hidden and bias of one LSTM layer"""

    W_x: Parameter
    W_h: Parameter
    b: Parameter

    @property
    def hidden_dim(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[1]

    @classmethod
    def create(
        cls,
        prefix: str,
        input_dim: int,
        hidden_dim: int,
        rng: SeededRng,
        init_scale: float = INIT_SCALE,
        forget_bias: float = FORGET_BIAS,
    ) -> "LSTMParams":
        W_x = rng.uniform(-init_scale, init_scale, (4 * hidden_dim, input_dim))
        W_h = rng.uniform(-init_scale, init_scale, (4 * hidden_dim, hidden_dim))
        b = forget_gate_bias(hidden_dim, forget_bias)
        return cls(
            W_x=Parameter(W_x, f"{prefix}.W_x"),
            W_h=Parameter(W_h, f"{prefix}.W_h"),
            b=Parameter(b, f"{prefix}.b"),
        )

    def parameters(self) -> List[Parameter]:
        return [self.W_x, self.W_h, self.b]


def forget_gate_bias(hidden_dim: int, forget_bias: float = FORGET_BIAS, gates: int = 4) -> np.ndarray:
    b = np.zeros(gates * hidden_dim)
    if gates == 4:
        b[hidden_dim:2 * hidden_dim] = forget_bias
    return b


def lstm_update(pre: Tensor, c_prev: Tensor) -> Tuple[Tensor, Tensor]:
    """Apply the gate nonlinearities to stacked pre-activations of width 4·n_h"""
    width = pre.shape[-1]
    if width % 4 or c_prev.shape[-1] != width // 4:
        raise DimensionError(f"lstm: pre-activation shape {pre.shape} does not match cell shape {c_prev.shape}")
    n = width // 4
    i = ops.sigmoid(pre[..., 0:n])
    f = ops.sigmoid(pre[..., n:2 * n])
    o = ops.sigmoid(pre[..., 2 * n:3 * n])
    candidate = ops.tanh(pre[..., 3 * n:])
    c = ops.add(ops.mul(f, c_prev), ops.mul(i, candidate))
    h = ops.mul(o, ops.tanh(c))
    return h, c


def lstm_cell(x, h_prev, c_prev, W_x, W_h, b) -> Tuple[Tensor, Tensor]:
    """LSTM step with explicit matrices (parameters or composed tensors)"""
    pre = ops.add(ops.add(ops.linear(x, W_x), ops.linear(h_prev, W_h)), b)
    return lstm_update(pre, ops.as_tensor(c_prev))


def lstm_step(x, h_prev, c_prev, params: LSTMParams) -> Tuple[Tensor, Tensor]:
    x, h_prev, c_prev = ops.as_tensor(x), ops.as_tensor(h_prev), ops.as_tensor(c_prev)
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"lstm_step: input shape {x.shape} does not match W_x shape {params.W_x.shape}")
    if h_prev.shape[-1] != params.hidden_dim or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape} do not match W_h shape {params.W_h.shape}"
        )
    return lstm_cell(x, h_prev, c_prev, params.W_x, params.W_h, params.b)
