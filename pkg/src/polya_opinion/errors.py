"""Exception hierarchy shared by all modules."""


class PolyaError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PolyaError, ValueError):
    """An argument lies outside the domain of a function."""


class GraphError(PolyaError, ValueError):
    pass


class DisconnectedGraph(GraphError):
    pass


class NegativeWeight(GraphError):
    pass


class IsolatedVertex(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class NonPositiveGamma(DomainError):
    pass


class DimensionMismatch(PolyaError, ValueError):
    pass


class NoConvergence(PolyaError, RuntimeError):
    pass


class EmptyHistory(PolyaError, ValueError):
    pass


class TooEarly(PolyaError, ValueError):
    """Estimator requested before any declaration was made (t < 2)."""


class InvalidRegimeParams(PolyaError, ValueError):
    pass


class RegimeMismatch(PolyaError, ValueError):
    pass


class InsufficientData(PolyaError, ValueError):
    pass


class NonPositiveValue(PolyaError, ValueError):
    pass


class EqualHypotheses(PolyaError, ValueError):
    pass


class OutOfRange(PolyaError, IndexError):
    pass


class InsufficientReplications(PolyaError, ValueError):
    pass


class ConfigError(PolyaError, ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ValidationError(ConfigError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.problems))


class AssertionFailure(PolyaError, RuntimeError):
    """A runtime invariant of the model was violated during a run."""
