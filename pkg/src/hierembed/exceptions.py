"""Exception hierarchy shared by every module of the package."""


class HierEmbedError(Exception):
    """Base class for all domain errors raised by hierembed."""


class ForestError(HierEmbedError, ValueError):
    """Raised when hierarchy or string files violate the forest contract."""


class MalformedLine(ForestError):
    pass


class DuplicateParent(ForestError):
    pass


class CycleDetected(ForestError):
    pass


class OrphanCode(ForestError):
    pass


class AmbiguousString(ForestError):
    pass


class EmptyInput(ForestError):
    pass


class UnknownCode(HierEmbedError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConfigInvalid(HierEmbedError, ValueError):
    pass


class EmptyTerm(HierEmbedError, ValueError):
    pass


class ZeroVector(HierEmbedError, ValueError):
    """An embedding with all-zero components reached a cosine computation."""


class NonFiniteInput(HierEmbedError, ValueError):
    pass


class NonFiniteGradient(HierEmbedError, ValueError):
    pass


class NoTrainingData(HierEmbedError, ValueError):
    pass


class ModelFormatError(HierEmbedError, ValueError):
    pass


class OneClassOnly(HierEmbedError, ValueError):
    pass


class DegenerateInput(HierEmbedError, ValueError):
    pass


class InsufficientCategories(HierEmbedError, ValueError):
    pass
