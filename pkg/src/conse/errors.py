"""Exception hierarchy.

``InputError`` subclasses map to CLI exit status 2, ``DegenerateDataError``
subclasses to exit status 3.
"""


class ConseError(Exception):
    pass


class InputError(ConseError):
    exit_code = 2


class EmbeddingFormatError(InputError):
    pass


class ZeroVectorError(EmbeddingFormatError):
    pass


class CatalogError(InputError):
    pass


class UnresolvedLabelError(InputError):
    pass


class ScoreFormatError(InputError):
    pass


class HierarchyError(InputError):
    pass


class EmptyCandidateSetError(InputError):
    pass


class DegenerateDataError(ConseError):
    exit_code = 3


class DegenerateDistributionError(DegenerateDataError):
    """All probability mass in the top-T support is zero."""


class ZeroConseVectorError(DegenerateDataError):
    """The combined embedding has zero norm, so cosine ranking is undefined."""
