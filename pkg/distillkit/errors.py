"""Errors raised by distillkit.

Every error subclasses the builtin it refines, so code that catches ``ValueError`` or
``ArithmeticError`` keeps working.
"""
from typing import Optional


class FormatError(ValueError):
    """A binary file does not match its declared layout.

    >>> str(FormatError("bad magic 0x00000000", offset=0))
    'bad magic 0x00000000 (at byte offset 0)'
    """

    def __init__(self, message: str, offset: int) -> None:
        """Init FormatError."""
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(ValueError):
    """A configuration is inconsistent or outside the support matrix."""


class InsufficientDataError(ValueError):
    """A class holds fewer samples than requested."""

    def __init__(self, class_id: int, available: int, requested: int) -> None:
        """Init InsufficientDataError."""
        super().__init__(f"class {class_id} has {available} samples, {requested} requested")
        self.class_id = class_id


class SamplingError(ValueError):
    """A class required by a per-class objective is missing from a batch."""

    def __init__(self, class_id: int, batch: str) -> None:
        """Init SamplingError."""
        super().__init__(f"class {class_id} missing from the {batch} batch")
        self.class_id = class_id


class DegenerateTrajectoryError(ValueError):
    """The teacher did not move between the start and target checkpoints."""


class NumericalFailure(ArithmeticError):
    """A loss became NaN or infinite."""

    def __init__(self, what: str, step: int) -> None:
        """Init NumericalFailure."""
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class SolverError(ArithmeticError):
    """A kernel system could not be solved."""


class MissingArtifactError(FileNotFoundError):
    """A required artifact or store does not exist."""

    def __init__(self, what: str, path: Optional[str] = None) -> None:
        """Init MissingArtifactError."""
        super().__init__(f"{what} not found" + (f": {path}" if path else ""))
        self.path = path
