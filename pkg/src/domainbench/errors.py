"""Exception hierarchy shared by all domainbench modules."""


class DomainBenchError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(DomainBenchError, ValueError):
    """A parameter lies outside its documented domain."""


class AnnotationError(DomainBenchError):
    """Base class for annotation-loading failures."""


class MalformedAnnotationsError(AnnotationError):
    """The annotation file cannot be parsed or misses required keys."""


class InvalidBoxError(AnnotationError):
    """One or more boxes violate geometric invariants.

    ``ids`` holds the offending annotation ids.
    """

    def __init__(self, message: str, ids: list | None = None):
        super().__init__(message)
        self.ids = list(ids or [])


class UnknownCategoryError(AnnotationError):
    """An annotation references a category id missing from the table.

    ``ids`` holds the offending annotation ids.
    """

    def __init__(self, message: str, ids: list | None = None):
        super().__init__(message)
        self.ids = list(ids or [])


class MalformedDetectionsError(DomainBenchError):
    """A detection-results file violates the expected schema."""


class ManifestError(DomainBenchError):
    """A dataset manifest violates its invariants."""


class TensorFormatError(DomainBenchError):
    """A tensor container file is malformed."""


class ShapeError(DomainBenchError, ValueError):
    """Array shapes do not chain as required."""
