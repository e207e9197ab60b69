"""
Error hierarchy shared by every package.
Each error names the invariant it protects so the CLI can report it on one line.
"""


class HSRLError(ValueError):
    """Base class for all domain errors"""

    invariant = "invariant"

    def __init__(self, message: str, invariant: str = None):
        super().__init__(message)
        if invariant is not None:
            self.invariant = invariant


class DimensionError(HSRLError):
    invariant = "dimension"


class NumericError(HSRLError):
    invariant = "finite"


class ConfigError(HSRLError):
    invariant = "config"


class SchemaError(HSRLError):
    invariant = "schema"


class CorpusParseError(HSRLError):
    invariant = "parse"

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class AlignmentError(HSRLError):
    invariant = "alignment"


class TopicIndexError(HSRLError, IndexError):
    invariant = "topic-range"


def config_error(model_name: str, exc) -> ConfigError:
    """ConfigError listing every field problem of a pydantic ValidationError"""
    problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors())
    return ConfigError(f"invalid {model_name}: {problems}")
