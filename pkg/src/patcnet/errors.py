"""Exception hierarchy shared across the toolkit.

Validation problems (bad configs, malformed bundles, protocol violations)
raise subclasses of :class:`PatcnetError` so the CLI can map them to a
dedicated exit code; anything else is treated as a runtime failure.
"""


class PatcnetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PatcnetError):
    """A parameter or config value violates its documented constraints."""


class DataError(PatcnetError):
    """Input data violates an invariant (non-finite samples, bad labels...)."""


class ShapeError(DataError):
    """Array shape does not match the declared contract."""


class MontageError(DataError):
    """Required electrode labels are absent from the montage."""


class BundleFormatError(PatcnetError):
    """A trial bundle on disk is malformed or has an unsupported version."""


class CheckpointFormatError(PatcnetError):
    """A model checkpoint file is malformed or truncated."""


class LeakageError(PatcnetError):
    """Evaluation protocol violation: target-subject information reached training."""


class NumericError(PatcnetError):
    """A numeric computation produced non-finite values."""
