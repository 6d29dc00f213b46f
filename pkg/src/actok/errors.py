"""Exception types shared across the toolkit.

Every error raised by library code derives from ToolkitError so callers
(notably the CLI and the episode runner) can catch one base class and map
it to an exit category or a scored failure.
"""


class ToolkitError(Exception):
    category = "error"


class DatasetError(ToolkitError):
    """Malformed or inconsistent trajectory data."""

    category = "data"


class FitError(ToolkitError):
    """Model fitting could not proceed (empty input, bad config)."""

    category = "fit"


class CalibrationError(FitError):
    """Scale calibration could not reach the requested error target."""

    category = "fit"


class CodecError(ToolkitError):
    """Encode/decode misuse: shape mismatch, symbol out of range."""

    category = "codec"


class MalformedChunkError(CodecError):
    """Token sequence does not decode to a full chunk."""

    category = "codec"


class PolicyError(ToolkitError):
    """Policy misuse: unknown instruction key, fingerprint mismatch."""

    category = "policy"


class SimError(ToolkitError):
    """Invalid task specification or impossible scene layout."""

    category = "sim"
