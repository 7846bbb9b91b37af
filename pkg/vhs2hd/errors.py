"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class Vhs2HdError(Exception):
    """Base class for all package errors."""

    exit_code: int = 2


class UsageError(Vhs2HdError, ValueError):
    """Bad command-line usage (missing flag target, unknown override key)."""

    exit_code = 1


class ConfigError(Vhs2HdError, ValueError):
    """Config document failed validation."""

    exit_code = 1


class FrameDecodeError(Vhs2HdError, OSError):
    """Input could not be decoded (unreadable file, decoder failure, decoder timeout)."""


class EmptySourceError(Vhs2HdError, ValueError):
    """Source decoded to zero frames, or a domain directory is empty."""


class FrameSizeError(Vhs2HdError, ValueError):
    """Frame is too small for the requested operation (crop, kernel, PIQE block)."""


class DegradationConfigError(Vhs2HdError, ValueError):
    """Degradation parameters are out of range."""


class ShapeError(Vhs2HdError, ValueError):
    """Network input has dimensions the architecture cannot process."""


class LossShapeError(Vhs2HdError, ValueError):
    """Loss operands do not shape-match."""


class DegenerateInputError(Vhs2HdError, ValueError):
    """Distribution fit requested on degenerate samples (zero variance, single sign)."""


class FeatureWeightsMissingError(Vhs2HdError, FileNotFoundError):
    """Feature extractor weight archive is missing and random fallback is disabled."""


class CheckpointIntegrityError(Vhs2HdError, ValueError):
    """Checkpoint archive is truncated, tampered or otherwise unreadable."""


class CheckpointIncompatibleError(Vhs2HdError, ValueError):
    """Checkpoint was written by another format version or for another model config."""


class IqaModelError(Vhs2HdError, ValueError):
    """BRISQUE regression model file is malformed."""


class GridMismatchError(Vhs2HdError, ValueError):
    """Montage input directories do not share the same file names."""

    def __init__(self, differing: list):
        self.differing = sorted(differing)
        super().__init__("File names differ between directories: %s" % ", ".join(self.differing))


class NonFiniteLossError(Vhs2HdError, ArithmeticError):
    """A loss term evaluated to NaN or infinity."""

    exit_code = 3

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__("Loss term %s is not finite (%r)" % (term, value))


class DivergenceError(Vhs2HdError, RuntimeError):
    """Training aborted after too many consecutive non-finite steps."""

    exit_code = 3
