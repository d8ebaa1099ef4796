"""Exception hierarchy shared by all netmech modules."""


class NetmechError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(NetmechError, ValueError):
    pass


class NonPositiveLoss(ValidationError):
    pass


class SelfLoop(ValidationError):
    pass


class DuplicateEdge(ValidationError):
    pass


class IsolatedNode(ValidationError):
    pass


class FeasibilityViolation(ValidationError):
    """A node's demand is too large to be exported away.

    ``node`` is the 0-based node index and ``value`` the lower
    feasibility term ``d_i - sum(1 / (2 r))``, which must be negative.
    """

    def __init__(self, node: int, value: float, message: str | None = None):
        self.node = node
        self.value = value
        super().__init__(
            message or f"node {node}: d_i - sum 1/(2r) = {value:.6g} must be < 0"
        )


class ParamError(ValidationError):
    pass


class NegativeQuantity(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class OutOfSupport(ValidationError):
    pass


class OutOfBox(ValidationError):
    pass


class DiscernabilityViolation(ValidationError):
    pass


class NonPositiveMultiplier(ValidationError):
    pass


class BracketFailure(NetmechError):
    pass


class MaxIterExceeded(NetmechError):
    pass


class MonotonicityBreach(NetmechError, AssertionError):
    """Raised when a monotone sweep increases a multiplier: always a bug."""


class NotConverged(NetmechError):
    pass


class QuadratureBudgetExceeded(NetmechError):
    pass


class ConfigError(NetmechError):
    pass
