"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, DataError and
its subclasses exit 2, NumericError exits 3.
"""


class Syn2RealError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(Syn2RealError):
    """Tensor arguments with incompatible extents; names the offending axes."""


class DataError(Syn2RealError):
    """Invalid dataset, manifest, checkpoint or on-disk artifact."""


class FormatError(DataError):
    """A byte-level file format violation (bad magic, truncation, bad header)."""


class ConfigError(DataError):
    """A configuration that cannot be trained/sampled as requested."""


class NumericError(Syn2RealError):
    """Non-finite values or other numeric failures; training aborts on these."""
