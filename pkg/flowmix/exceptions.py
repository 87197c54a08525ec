"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class FlowmixError(Exception):
    """Base class for every error raised by flowmix."""


class ContractViolation(FlowmixError, ValueError):
    """A documented precondition of an operation does not hold."""


class ConvergenceError(FlowmixError, ArithmeticError):
    """An iterative kernel ran out of iterations."""


class DivergedError(FlowmixError, ArithmeticError):
    """A non-finite value appeared in a loss, an ELBO term or a gradient."""

    def __init__(self, term: str, message: str | None = None) -> None:
        self.term = term
        super().__init__(message or f"Non-finite value in {term}")


class TrainingDiverged(DivergedError):
    """Training stopped on a non-finite value.

    ``checkpoint`` holds the GMVM bytes of the model at the end of the last
    completed epoch (``None`` if no epoch completed).
    """

    def __init__(self, term: str, epoch: int, checkpoint: bytes | None) -> None:
        self.epoch = epoch
        self.checkpoint = checkpoint
        super().__init__(term, f"Training diverged in epoch {epoch} ({term})")


class FreezeViolation(FlowmixError):
    """Parameters that must stay frozen were modified."""


class FormatError(FlowmixError):
    """A binary file could not be parsed."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class VersionMismatchError(FormatError):
    """The file declares an unsupported format version."""


class TruncatedPayloadError(FormatError):
    """The file ends before the declared payload is complete."""
