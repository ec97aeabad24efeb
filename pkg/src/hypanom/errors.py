"""Exception types shared across the package."""


class HypanomError(Exception):
    """Base class for all package errors."""


class DimensionError(HypanomError, ValueError):
    """Operands have incompatible shapes or lengths."""


class InvalidPointError(HypanomError, ValueError):
    """Coordinates do not satisfy the hyperboloid constraint."""


class DegenerateWeightsError(HypanomError, ValueError):
    """Centroid weights are all zero (or negative)."""


class DegenerateHyperplaneError(HypanomError, ValueError):
    """Hyperplane normal is not spacelike."""


class ParameterError(HypanomError, ValueError):
    """An operation parameter is out of its valid range."""


class TensorFormatError(HypanomError, ValueError):
    """A tensor file is malformed, truncated, or of an unsupported dtype."""


class ManifestError(HypanomError, ValueError):
    """A dataset manifest is malformed or references missing files."""


class SynthesisError(HypanomError, RuntimeError):
    """Anomaly synthesis could not produce a valid sample."""


class UndefinedMetricError(HypanomError, ValueError):
    """A metric is undefined for the given inputs (e.g. single-class labels)."""


class CheckpointError(HypanomError, ValueError):
    """A model checkpoint is missing, malformed, or incompatible."""


class ConfigError(HypanomError, ValueError):
    """A run configuration is invalid (unknown key, bad value, missing path)."""


class AutodiffError(HypanomError, RuntimeError):
    """Misuse of the differentiation tape (repeated backward, non-scalar loss)."""
