"""Exception hierarchy shared by all poddiv modules."""


class PoddivError(Exception):
    """Base class for every error raised by poddiv."""


class ContractError(PoddivError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(PoddivError):
    """A file does not follow the expected layout."""


class VersionError(FormatError):
    """A binary file carries an unsupported format version."""


class ChecksumError(FormatError):
    """Payload checksum does not match the stored CRC32."""


class DimensionError(PoddivError, ValueError):
    """Vector or matrix sizes do not match the function space."""


class IntegrityError(PoddivError):
    """Mesh or dof data is internally inconsistent."""


class UnsupportedError(PoddivError, ValueError):
    """Requested option is outside the implemented range."""


class ConfigError(PoddivError, ValueError):
    """Run configuration failed validation."""


class DegenerateEnsembleError(PoddivError):
    """Snapshot ensemble carries no energy above the rank cutoff."""


class SolverFailure(PoddivError):
    """Linear solve failed; ``residual`` holds the last relative residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class StepError(PoddivError):
    """A nonlinear time step did not converge.

    ``increment`` is the L2 norm of the last fixed-point increment.
    """

    def __init__(self, message, increment=float("nan")):
        super().__init__(f"{message} (last increment {increment:.3e})")
        self.increment = increment


class StorageError(PoddivError, OSError):
    """Reading or writing a file failed; the message names the path."""
