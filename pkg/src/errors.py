"""
Exception hierarchy shared by all modules. The class name doubles as the error code
reported over the wire protocol and in CLI messages.
"""


class ArticulationError(Exception):
    """Base class of all domain errors. ``tag`` is set when the error surfaced during replay of a tagged operation."""

    def __init__(self, message: str = '', tag: str = None) -> None:
        super().__init__(message)
        self.message = message
        self.tag = tag

    @property
    def code(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        if self.tag is not None:
            return f'{self.message} (operation tag {self.tag!r})'
        return self.message


# symbolic expressions
class MissingVariable(ArticulationError):
    def __init__(self, variable, tag: str = None) -> None:
        super().__init__(f'no value assigned to variable {variable}', tag)
        self.variable = variable


class DomainError(ArticulationError, ArithmeticError):
    pass


class UncoveredVariable(ArticulationError):
    pass


class DimensionMismatch(ArticulationError, ValueError):
    pass


# model and operations
class UnknownPath(ArticulationError, KeyError):
    def __str__(self) -> str:
        return ArticulationError.__str__(self)


class UnknownTag(ArticulationError):
    pass


class DuplicateTag(ArticulationError):
    pass


class DuplicateName(ArticulationError):
    pass


class MissingLimits(ArticulationError):
    pass


class OperationContractError(ArticulationError):
    pass


class UnknownOperation(ArticulationError):
    pass


# loaders
class ParseError(ArticulationError):
    pass


class UnsupportedJoint(ArticulationError):
    pass


class UnsupportedGeometry(ArticulationError):
    pass


class CycleError(ArticulationError):
    pass


class MimicCycle(CycleError):
    pass


class FormatError(ArticulationError):
    def __init__(self, message: str, json_path: str = '$') -> None:
        super().__init__(f'{json_path}: {message}')
        self.json_path = json_path


# geometry
class UnsupportedPair(ArticulationError):
    pass


# estimation
class NoSymbolicEntries(ArticulationError):
    pass


class NonConstantBound(ArticulationError):
    pass


class SingularResidualCovariance(ArticulationError):
    pass


# control
class Infeasible(ArticulationError):
    pass


class IterationLimit(ArticulationError):
    pass


class EmptyInterval(ArticulationError):
    pass


class IkStalled(ArticulationError):
    pass


class NonRigidInput(ArticulationError):
    pass


# model exchange
class VersionMismatch(ArticulationError):
    pass


class Disconnected(ArticulationError):
    pass


class BadMessage(ArticulationError):
    pass


class StoreError(ArticulationError):
    pass
