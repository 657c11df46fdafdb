"""Exception types shared across the pipeline."""


class DelocateError(Exception):
    """Base class for all pipeline errors."""


class InvalidInput(DelocateError):
    """An argument violates an operation's precondition."""


class InvariantViolation(DelocateError):
    """A domain object failed its structural invariants."""


class FormatError(DelocateError):
    """A file on disk is corrupt or has an unsupported layout."""


class DegenerateGeometry(DelocateError):
    """Landmark geometry too degenerate to derive facial regions."""


class SplitInfeasible(DelocateError):
    """The requested meta split cannot be built from this manifest."""


class PhaseOrderError(DelocateError):
    """A training phase was started before its prerequisite checkpoint exists."""
