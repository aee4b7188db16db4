"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numeric/training failures with 3, protocol and file-format
violations with 4.
"""


class CycleDiffError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CycleDiffError):
    """Invalid configuration: unknown dataset kind, bad plan endpoints, ..."""


class NumericError(CycleDiffError):
    """Numerically ill-posed input (e.g. singular covariance)."""


class TrainingDivergedError(CycleDiffError):
    """Non-finite loss encountered during training.

    Carries the step index at which the divergence was detected.
    """

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ProtocolError(CycleDiffError):
    """Violation of the two-party exchange protocol."""


class RoleError(ProtocolError):
    """A party attempted an operation outside its role."""


class FormatError(ProtocolError):
    """Corrupt, truncated, or incompatible checkpoint/latent file."""
