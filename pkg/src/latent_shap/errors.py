"""Exception hierarchy for the latent-shap engine."""


class LatentShapError(Exception):
    """Base class for all engine errors."""


class ConfigError(LatentShapError):
    """Inconsistent or unusable configuration."""


class PlayerCountExceeded(ConfigError):
    """Requested Shapley computation over more players than the method supports."""


class InsufficientSamples(ConfigError):
    """Monte-Carlo estimation requested with fewer than two samples."""


class ValueFunctionFailure(LatentShapError):
    """A value function returned a non-usable number or raised."""


class GroupingMismatch(LatentShapError):
    """Feature grouping inconsistent with the scalars or coalition it is used with."""


class ShapeMismatch(LatentShapError):
    """Image or latent shape does not match what a handle expects."""


class ModelFailure(LatentShapError):
    """A model handle failed to produce predictions."""


class CodecFailure(LatentShapError):
    """A codec handle failed to encode or decode."""


class BadProbabilities(ModelFailure):
    """Model output violates the probability-simplex contract."""


class InvalidBinCount(ConfigError):
    """Frequency binning requested with an unusable bin count."""


class UnknownImage(CodecFailure):
    """Ground-truth codec asked to encode an image with no known provenance."""


class LatentOutOfRange(CodecFailure):
    """Latent values outside the generator's valid ranges."""


class DegenerateClusters(LatentShapError):
    """Threshold calibration found fewer count clusters than classes."""


class CodecMismatch(ConfigError):
    """Operation requires a different codec family than the one configured."""


class EmptyDataset(ConfigError):
    """Operation requires a non-empty dataset."""


class ProtocolError(LatentShapError):
    """External process sent a malformed or unexpected protocol message."""


class ProcessExited(ProtocolError):
    """External process terminated while a request was outstanding."""


class Timeout(ProtocolError):
    """External process did not answer within the allotted time."""
