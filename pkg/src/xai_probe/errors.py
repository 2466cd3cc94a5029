"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto exit codes: InputError/ConfigError -> 3,
NumericError (and subclasses) -> 4. Usage errors are argparse's exit 2.
"""


class XaiProbeError(Exception):
    """Base class for all errors raised by this package."""


class InputError(XaiProbeError):
    """Caller passed an argument that violates an operation's contract."""


class ConfigError(XaiProbeError):
    """Configuration or input files are missing, malformed, or inconsistent."""


class InternalError(XaiProbeError):
    """Invariant violated inside the package; indicates a bug, not bad input."""


class NumericError(XaiProbeError):
    """A numeric computation failed (NaN/Inf, singular system)."""


class TrainingError(NumericError):
    """Training diverged; carries a diagnostic message."""
