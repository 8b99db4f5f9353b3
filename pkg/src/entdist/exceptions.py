"""Exception hierarchy shared across the package."""


class EntdistError(Exception):
    """Base class for all package errors."""


class TopologyParseError(EntdistError):
    """Raised when a topology document is syntactically malformed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TopologyValidationError(EntdistError):
    """Raised when a parsed topology violates a structural invariant.

    ``entity`` names the offending node, link, or channel.
    """

    def __init__(self, message: str, entity: str = ""):
        super().__init__(message)
        self.entity = entity


class PhotonicsError(EntdistError):
    """Invalid input to a count-statistics operation."""


class UnreachableError(EntdistError):
    """No path exists between the requested endpoints."""


class LedgerError(EntdistError):
    """Channel-ledger misuse (double release, unknown assignment, ...)."""


class VerificationError(EntdistError):
    """A path-verification stage failed; ``cause`` is a short token."""

    def __init__(self, cause: str, message: str = ""):
        super().__init__(message or cause)
        self.cause = cause


class CalibrationError(EntdistError):
    """A calibration sub-procedure failed; ``cause`` is a short token."""

    def __init__(self, cause: str, message: str = ""):
        super().__init__(message or cause)
        self.cause = cause


class CausalityError(EntdistError):
    """An event was scheduled in the simulated past."""


class ScenarioParseError(EntdistError):
    """Raised when a scenario file is malformed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ResultStoreError(EntdistError):
    """Write-once violation in the session result store."""
