"""Exception hierarchy shared by all modules.

Exit codes (used by the CLI): 2 usage/config, 3 data/format, 4 numerical.
"""


class CacheAdaptError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(CacheAdaptError):
    """Bad configuration, usage, or mismatched shapes/dimensions."""

    exit_code = 2


class DataError(CacheAdaptError):
    """Inconsistent or unusable data (missing ground truth, empty cache)."""

    exit_code = 3


class FormatError(DataError):
    """Malformed file: bad magic, truncated payload, shape mismatch."""

    exit_code = 3


class NumericalError(CacheAdaptError):
    """Numerical failure: zero-norm rows, non-finite or non-stochastic input."""

    exit_code = 4
