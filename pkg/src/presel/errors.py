"""Exception taxonomy for the selection engine.

Every error carries a stable machine-readable ``code`` (the class name) that
the CLI emits on failure, so downstream tooling can dispatch on it without
parsing messages.
"""


class PreselError(Exception):
    """Base class for all engine errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class DuplicateId(PreselError):
    """A sample_id occurs more than once in a manifest or loss file."""


class MalformedRecord(PreselError):
    """A record violates the input file schema."""


class EmptyDataset(PreselError):
    """The manifest contains no image (non-text-only) samples."""


class RowCountMismatch(PreselError):
    """Feature file row count disagrees with the manifest or the payload size."""


class NonFiniteFeature(PreselError):
    """A feature entry is NaN or infinite."""


class ZeroNormFeature(PreselError):
    """A feature row is all-zero, so cosine similarity is undefined for it."""


class EmptyResponse(PreselError):
    """A response token-logprob sequence is empty."""


class InvalidLogprob(PreselError):
    """A token log-probability is positive or non-finite."""


class DegenerateDenominator(PreselError):
    """The without-question NLL is (numerically) zero; the ratio is undefined."""


class InvalidScore(PreselError):
    """A task score passed to the weighting step is non-finite."""


class InfeasibleBudget(PreselError):
    """Requested total exceeds the combined selectable pools."""

    def __init__(self, message: str, max_feasible: int):
        super().__init__(message)
        self.max_feasible = max_feasible


class TooManyClusters(PreselError):
    """Requested more clusters than points."""


class InvalidClusterCount(PreselError):
    """Cluster count must be a positive integer."""


class RefAlreadyAssigned(PreselError):
    """Manifest already carries reference flags; refusing to re-split."""


class SynthSpecError(PreselError):
    """Synthetic dataset specification is invalid or infeasible."""


class InvalidConfig(PreselError):
    """Selection configuration value out of range."""
