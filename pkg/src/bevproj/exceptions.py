"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid camera, grid, or pipeline configuration."""


class FormatError(ValueError):
    """A file or tensor does not match its declared layout."""


class ValidationError(ValueError):
    """Tensor contents violate a documented invariant (e.g. non-finite values)."""
