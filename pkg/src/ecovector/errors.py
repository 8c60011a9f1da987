"""Exception types shared across the package."""


class EcoVectorError(Exception):
    """Base class for all package-specific errors."""

    # KeyError.__str__ reprs the message; keep plain text in mixed subclasses
    __str__ = Exception.__str__


class DimensionMismatch(EcoVectorError, ValueError):
    """Vector dimensionality differs from what the consumer expects."""


class ZeroVector(EcoVectorError, ValueError):
    """Cosine similarity is undefined for a zero-norm vector."""


class EmptyGraph(EcoVectorError, RuntimeError):
    """Search was attempted on a graph with no live nodes."""


class EmptyIndex(EcoVectorError, RuntimeError):
    """Search was attempted on an index with no live vectors."""


class EmptyCorpus(EcoVectorError, ValueError):
    """An index build was attempted with no input vectors or documents."""


class DuplicateId(EcoVectorError, KeyError):
    """The id being inserted is already live."""


class UnknownId(EcoVectorError, KeyError):
    """The id is not present (or not live) where it was looked up."""


class GraphFormatError(EcoVectorError, ValueError):
    """Serialized graph bytes are malformed, truncated, or mislabeled."""


class DanglingReference(EcoVectorError, ValueError):
    """A row references a document id that does not exist."""


class InvalidConfig(EcoVectorError, ValueError):
    """A config file or environment override contains unknown or bad keys."""


class DatasetFormatError(EcoVectorError, ValueError):
    """A vector or corpus dataset file is malformed."""


class UpdateInProgress(EcoVectorError, RuntimeError):
    """A second index mutation was attempted while one is running."""


class GenerationUnavailable(EcoVectorError, RuntimeError):
    """The generation endpoint cannot be reached or returned a server error."""
