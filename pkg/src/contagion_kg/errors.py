"""Exception hierarchy.

``DataError`` covers anything wrong with the inputs (bad files, impossible
queries); ``NumericalError`` covers non-finite losses and similar. The CLI maps
the two families to distinct exit codes.
"""


class ContagionError(Exception):
    pass


class DataError(ContagionError):
    pass


class NumericalError(ContagionError):
    pass


# graph core
class MalformedRecord(DataError):
    pass


class DanglingEdge(DataError):
    pass


class DuplicateNode(DataError):
    pass


class DuplicateEdge(DataError):
    pass


class NodeNotFound(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoPath(DataError):
    pass


# interventions
class TargetMissing(DataError):
    pass


class TargetIntervention(DataError):
    pass


class NegativeEffect(ContagionError):
    """Raised when an intervention effect is negative, which reachability forbids."""


# instruction forge
class InfeasibleConfig(DataError):
    pass


class TemplateMissing(DataError):
    pass


class DuplicateLabel(DataError):
    pass


# fusion kernel
class EmptyInput(DataError):
    pass


class EmptyGraph(DataError):
    pass


class NoPositives(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


# pathway engine / trainer / export
class EmptyPath(DataError):
    pass


class SingleClass(DataError):
    pass


class EmptyDataset(DataError):
    pass


class VocabMismatch(DataError):
    pass


class InconsistentInputs(DataError):
    pass
