"""
Tensor and Parameter types with a reverse-mode tape.

Every op in diffcore.ops builds a new Tensor that remembers its parents and a
closure that pushes the output gradient back into them. Calling backward() on a
scalar walks that graph once in reverse topological order.
"""
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from diffcore.errors import NumericError

_state = threading.local()


def grad_enabled() -> bool:
    """Whether ops currently record the tape (per thread)"""
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate ops without recording parents (decoding, evaluation, finite differences)"""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """float64 array node in the computation graph"""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        name: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, grad: np.ndarray):
        """Add an incoming gradient (never in place, the array may be shared)"""
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self, seed: Optional[np.ndarray] = None):
        """Reverse-mode sweep from this tensor into every tensor that requires grad"""
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"backward from non-finite value {self.data!r}")
        order = _topological_order(self)
        self.accumulate(np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # interior nodes release their gradient once it has been pushed back
                node.grad = None
        self._parents = ()

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    # Operators delegate to diffcore.ops (imported lazily to avoid the cycle)
    def __add__(self, other):
        from diffcore import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from diffcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from diffcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from diffcore import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from diffcore import ops
        return ops.scale(self, -1.0)

    def __getitem__(self, key):
        from diffcore import ops
        return ops.index(self, key)


class Parameter(Tensor):
    """Learnable leaf: data plus an always-allocated gradient accumulator"""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate(self, grad: np.ndarray):
        self.grad = self.grad + grad

    def __repr__(self):
        return f"Parameter {self.name}(shape={self.shape})"


def _topological_order(root: Tensor) -> Sequence[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order
