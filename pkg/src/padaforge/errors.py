"""Exception hierarchy shared by all padaforge modules.

Every failure mode raised by the library derives from PadaforgeError so
callers (and the CLI exit-code mapping) can catch one base class.
"""


class PadaforgeError(Exception):
    """Base class for all padaforge failures."""


# --- configuration / orchestration ---------------------------------------

class ConfigError(PadaforgeError):
    """A configuration field is missing, malformed, or inconsistent."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class StageArtifactMissing(PadaforgeError):
    """A pipeline stage requires an artifact that an earlier stage must produce."""


# --- i/o ------------------------------------------------------------------

class IoFailure(PadaforgeError):
    """Underlying file operation failed (missing file, permissions, short read)."""


class FormatViolation(PadaforgeError):
    """File content violates the declared schema (bad magic, dim mismatch, duplicate id)."""


class ParseError(PadaforgeError):
    """Text input could not be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# --- numerics -------------------------------------------------------------

class NonSquare(PadaforgeError):
    """Matrix operation requires a square matrix."""


class NotSymmetric(PadaforgeError):
    """Matrix operation requires symmetry within tolerance."""


class NoConvergence(PadaforgeError):
    """Iterative numerical procedure hit its iteration cap."""


class TooFewPoints(PadaforgeError):
    """Clustering asked for more clusters than there are points."""


# --- domains / divergence ---------------------------------------------------

class EmptyDomain(PadaforgeError):
    """A domain must contain at least one feature vector."""


class DimensionMismatch(PadaforgeError):
    """Operands do not share the required dimensionality."""


class TooFewSamples(PadaforgeError):
    """Estimator needs more samples than were supplied."""


# --- clustering / selection -------------------------------------------------

class InvalidK(PadaforgeError):
    """Requested cluster count is outside the valid range."""


class DisconnectedDegenerate(PadaforgeError):
    """Similarity matrix carries no structure to cluster (all-zero)."""


class DegenerateK(PadaforgeError):
    """Cluster-validity score undefined for this cluster count."""


class PoolTooSmall(PadaforgeError):
    """Automatic cluster-count search needs a larger domain pool."""


class CombinatorialBlowup(PadaforgeError):
    """Cross-cluster combination count exceeds the configured cap."""


class ZeroVector(PadaforgeError):
    """A feature vector with (near-)zero norm cannot be L2-normalized."""


# --- networks / losses -------------------------------------------------------

class ShapeMismatch(PadaforgeError):
    """Tensor shapes are incompatible with the network or operation."""


class NoPositives(PadaforgeError):
    """A contrastive anchor has no positive partner in the batch."""


class NonFiniteLoss(PadaforgeError):
    """Loss evaluated to NaN or infinity."""


class EmptyBatch(PadaforgeError):
    """Training step received an empty or single-class batch."""


# --- synthetic benchmark ------------------------------------------------------

class InfeasibleSeparation(PadaforgeError):
    """Rejection sampling could not place family centers at the requested separation."""


class ImageTooSmall(PadaforgeError):
    """Image is smaller than the fixed filter support."""
