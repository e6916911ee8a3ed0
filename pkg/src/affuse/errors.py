"""Exception hierarchy shared across the package.

Three broad categories drive the CLI exit codes: configuration problems
(exit 2), data problems (exit 3), and optimizer non-convergence (exit 4).
Specific errors additionally subclass a fitting builtin so callers can
catch ``ValueError``/``KeyError`` idiomatically.
"""


class AffuseError(Exception):
    """Base class for all package errors."""


class ConfigError(AffuseError):
    """Invalid configuration, flags, or file formats supplied by the user."""


class DataError(AffuseError):
    """Missing or malformed input data."""


class ConvergenceError(AffuseError):
    """An optimizer exhausted its budget without reaching its tolerance."""


# --- metrics ---------------------------------------------------------------

class ZeroVarianceError(AffuseError, ValueError):
    """A correlation was requested on a constant series."""


class DegenerateInputError(AffuseError, ValueError):
    """Both series constant with equal means: the CCC denominator is zero."""


class InvalidWeightsError(ConfigError, ValueError):
    """Multitask weights are negative or sum to more than one."""


# --- dsp -------------------------------------------------------------------

class TooShortError(DataError, ValueError):
    """Waveform shorter than a single analysis window."""


class UnsupportedRateError(DataError, ValueError):
    """Sample rate outside the accepted set."""


class UnsupportedFormatError(DataError, ValueError):
    """Audio file encoding or channel layout is not supported."""


class TooFewFramesError(DataError, ValueError):
    """Not enough frames to compute per-channel statistics."""


# --- stage1 ----------------------------------------------------------------

class ShapeMismatchError(AffuseError, ValueError):
    """Input dimensionality does not match the model."""


class DegenerateLabelsError(DataError, ValueError):
    """A gold label dimension is constant, so its CCC is undefined."""


class MissingFeatureError(DataError, KeyError):
    """No feature vector available for a requested utterance id."""


# --- svr -------------------------------------------------------------------

class DimensionMismatchError(AffuseError, ValueError):
    """Kernel arguments or prediction inputs have inconsistent dimensions."""


# --- pipeline --------------------------------------------------------------

class LabelOutOfRangeError(DataError, ValueError):
    """Raw label outside the 5-point scale [1, 5]."""


class UnknownSessionError(ConfigError, ValueError):
    """A held-out session id does not occur in the manifest."""


class SpeakerOverlapError(DataError, ValueError):
    """A test speaker also appears outside the held-out sessions."""


class IdMismatchError(DataError, ValueError):
    """Prediction sets to be fused do not cover the same utterance ids."""


class NonPositiveBaselineError(AffuseError, ValueError):
    """Relative improvement undefined for a non-positive baseline."""


class DegenerateDifferencesError(AffuseError, ValueError):
    """Paired differences are constant and nonzero: t statistic undefined."""


class ManifestError(DataError, ValueError):
    """Malformed manifest CSV; carries the offending line number."""
