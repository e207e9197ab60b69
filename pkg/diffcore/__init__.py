"""Dense float64 numeric core with reverse-mode gradients."""
from diffcore.errors import (
    HSRLError,
    DimensionError,
    NumericError,
    ConfigError,
    SchemaError,
    CorpusParseError,
    AlignmentError,
    TopicIndexError,
)
from diffcore.tensor import Tensor, Parameter, no_grad, grad_enabled
from diffcore.rng import SeededRng
