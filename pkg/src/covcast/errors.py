"""Exception hierarchy shared by the library, the service and the CLI."""


class CovcastError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(CovcastError):
    """Invalid run configuration (unknown model, bad option, bad combination)."""


class DataError(CovcastError):
    """Unusable input data (malformed file, singular matrix, degenerate series)."""


class NumericsError(CovcastError):
    """A numerical routine failed to converge or produced an unusable result."""
