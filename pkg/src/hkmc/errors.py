"""Exception hierarchy shared across the package."""


class HkmcError(Exception):
    """Base class for all package errors."""


class ConfigError(HkmcError):
    """Invalid configuration value or inconsistent inputs (grids, domains)."""


class InvalidFrameError(HkmcError):
    """A frame failed the metric-orthonormality check beyond tolerance."""


class ChartEscapeError(HkmcError):
    """A simulated step left the chart domain and no recentering is available."""


class UnsupportedManifoldError(HkmcError):
    """The requested operation needs data this manifold does not provide."""


class RegimeError(HkmcError):
    """Parameters outside the validated regime of a series/quadrature formula."""


class NumericsError(HkmcError):
    """A quadrature or series failed to converge to the requested accuracy."""


class StatisticsError(HkmcError):
    """Not enough samples to form the requested statistic."""
