"""Exception hierarchy.

Two families matter to callers: :class:`FormatError` (bad or unreadable input
files) and :class:`PreconditionError` (inputs that parse but violate a metric,
sampler or kernel precondition). The CLI maps them to exit codes 1 and 2.
"""


class DCKitError(Exception):
    """Base class for every error raised by dckit."""


class FormatError(DCKitError, ValueError):
    """Input file has a bad magic number, unsupported version or bad manifest."""


class CorruptionError(FormatError):
    """Payload size disagrees with the header (truncated or trailing bytes)."""


class PreconditionError(DCKitError, ValueError):
    """Inputs are well-formed but violate an operation's precondition."""


class EmptySetError(PreconditionError):
    pass


class InvalidVectorError(PreconditionError):
    """Non-finite values, wrong dimension, or zero norm where cosine is needed."""


class UndefinedSimilarityError(InvalidVectorError):
    pass


class DegenerateCenterError(PreconditionError):
    def __init__(self, label):
        super().__init__(f"class {label} has a zero-vector center; cosine similarity is undefined")
        self.label = label


class InsufficientPointsError(PreconditionError):
    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class MissingAttributeError(PreconditionError):
    def __init__(self, label):
        super().__init__(f"label {label} has no attribute tag")
        self.label = label


class UnmatchedAttributeError(PreconditionError):
    def __init__(self, tag):
        super().__init__(f"style bank has no entry tagged {tag!r}")
        self.tag = tag


class ShapeMismatchError(PreconditionError):
    pass


class SingularStepError(PreconditionError):
    pass
