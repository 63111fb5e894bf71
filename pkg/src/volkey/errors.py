"""Error taxonomy shared by the library, the service, and the CLI.

Every error carries a ``kind`` string (used in service error payloads) and a
distinct process exit code (used by the CLI).
"""


class VolkeyError(Exception):
    """Base class for all pipeline errors."""

    kind = "error"
    exit_code = 1


class InputOutputError(VolkeyError):
    """File could not be read or written."""

    kind = "io"
    exit_code = 3


class FormatError(VolkeyError):
    """File exists but its layout or header is not what was expected."""

    kind = "format"
    exit_code = 4


class ParameterError(VolkeyError):
    """An argument violates an operation's precondition."""

    kind = "parameter"
    exit_code = 5


class NoConsensusError(VolkeyError):
    """Transform voting produced no cell with enough votes."""

    kind = "no_consensus"
    exit_code = 6


class DataError(VolkeyError):
    """Input data is syntactically valid but semantically unusable (e.g. NaN voxels)."""

    kind = "data"
    exit_code = 7


EXIT_CODES = {
    cls.kind: cls.exit_code
    for cls in (VolkeyError, InputOutputError, FormatError, ParameterError, NoConsensusError, DataError)
}
