"""Exception types shared across the Mugak engine."""

from typing import List, Optional


class InvalidInputError(ValueError):
    """A user-supplied document, config or argument is invalid."""


class ConfigError(InvalidInputError):
    """The pipeline configuration violates one or more invariants."""

    def __init__(self, violations: List[str]) -> None:
        self.violations = list(violations)
        super().__init__("invalid configuration: " + "; ".join(self.violations))


class AnnotationFormatError(InvalidInputError):
    """An annotation, prediction or report document is malformed."""

    def __init__(
        self, message: str, video_id: Optional[str] = None, field: Optional[str] = None
    ) -> None:
        self.video_id = video_id
        self.field = field
        location = ""
        if video_id is not None:
            location += f"[{video_id}]"
        if field is not None:
            location += f"[{field}]"
        super().__init__(f"{location} {message}".strip())


class TensorFileError(InvalidInputError):
    """A tensor container file is truncated or has a bad header."""


class UnknownVideoError(InvalidInputError):
    """A prediction refers to a video id that has no annotation."""


class PipelineError(RuntimeError):
    """A pipeline stage failed at runtime."""


class StageOrderError(PipelineError):
    """A stage was started before the artifacts it depends on exist."""


class DivergenceError(PipelineError):
    """Training produced a non-finite loss."""
