"""Exception types raised across the package."""


class ToolphysError(Exception):
    """Base class for all package errors."""


# expr
class DomainError(ToolphysError, ArithmeticError):
    pass


class UnboundSymbol(ToolphysError, KeyError):
    pass


class ParseError(ToolphysError, ValueError):
    pass


# sregress
class InsufficientData(ToolphysError, ValueError):
    pass


class EmptyDomain(ToolphysError, ValueError):
    pass


class EmptyCandidates(ToolphysError, ValueError):
    pass


class CycleDetected(ToolphysError, ValueError):
    pass


class DanglingTarget(ToolphysError, ValueError):
    pass


# goalinfer
class InsufficientSamples(ToolphysError, ValueError):
    pass


class DegenerateData(ToolphysError, ValueError):
    pass


class NoActionPath(ToolphysError, LookupError):
    pass


class MissingModel(ToolphysError, LookupError):
    pass


# dynamics
class OutOfLimits(ToolphysError, ValueError):
    pass


class SingularInertia(ToolphysError, ArithmeticError):
    pass


# vkc
class NoValidPair(ToolphysError, ValueError):
    pass


class IncompatibleRoles(ToolphysError, ValueError):
    pass


# ocp
class IKDiverged(ToolphysError, RuntimeError):
    """Inverse kinematics did not reach tolerance.

    ``q`` holds the best iterate, ``position_residual`` and
    ``angle_residual`` its residuals.
    """

    def __init__(self, message, q=None, position_residual=None, angle_residual=None):
        super().__init__(message)
        self.q = q
        self.position_residual = position_residual
        self.angle_residual = angle_residual


class SingularJacobian(ToolphysError, ArithmeticError):
    pass


class MaxIterations(ToolphysError, RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


# effectsim
class Instability(ToolphysError, RuntimeError):
    pass


# pipeline
class NoValidStrategy(ToolphysError, RuntimeError):
    def __init__(self, message, strategies=()):
        super().__init__(message)
        self.strategies = list(strategies)


# cli_io
class ValidationError(ToolphysError, ValueError):
    """Config or data file failed validation.

    ``path`` and ``line`` locate the offending entry when known.
    """

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        if field:
            loc += f"{field}: "
        super().__init__(loc + message)
