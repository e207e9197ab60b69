# agents/agent_base.py
import logging
from abc import ABC, abstractmethod
from typing import Dict, List

import numpy as np

from diffcore.errors import SchemaError
from diffcore.rng import SeededRng
from diffcore.tensor import Parameter

logger = logging.getLogger(__name__)


class BaseDecoder(ABC):
    """Base decoder with a named parameter registry"""

    def __init__(self, name: str, rng: SeededRng, init_scale: float):
        self.name = name
        self.rng = rng
        self.init_scale = init_scale
        self._params: Dict[str, Parameter] = {}

    def add_parameter(self, key: str, shape, init: str = "uniform") -> Parameter:
        """Register a parameter drawn uniformly from [-init_scale, init_scale] (or zeros)"""
        name = f"{self.name}.{key}"
        if name in self._params:
            raise SchemaError(f"parameter {name} registered twice")
        if init == "zeros":
            data = np.zeros(shape)
        else:
            data = self.rng.uniform(-self.init_scale, self.init_scale, shape)
        param = Parameter(data, name)
        self._params[name] = param
        return param

    def register(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise SchemaError(f"parameter {param.name} registered twice")
        self._params[param.name] = param
        return param

    @abstractmethod
    def init_state(self, *args, **kwargs):
        """Initial recurrent state - implemented by subclasses"""
        pass

    @abstractmethod
    def step(self, *args, **kwargs):
        """One recurrent step - implemented by subclasses"""
        pass

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> Dict[str, Parameter]:
        return dict(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """Copy arrays into the registered parameters; names and shapes must match exactly"""
        missing = set(self._params) - set(state)
        if missing:
            raise SchemaError(f"{self.name}: checkpoint is missing {sorted(missing)}")
        for name, param in self._params.items():
            data = np.asarray(state[name], dtype=np.float64)
            if data.shape != param.shape:
                raise SchemaError(f"{name}: checkpoint shape {data.shape} does not match {param.shape}")
            param.data = data.copy()
            param.zero_grad()
        logger.debug(f"Loaded {len(self._params)} parameters into {self.name}")
