"""
Gated volatility models.

GARCH-type conditional variance recursions whose persistence level,
fractional memory order and business-time clock are driven by observable
features, together with kernel analysis, Gaussian QMLE, rolling
backtests, residual diagnostics and a command-line interface.
"""
__version__ = "0.1.0"

from .errors import GatedVolError  # noqa: E402
from .models import Family, ModelSpec, ParamVector, filter_variance, simulate_path  # noqa: E402
from .estimation import FitOptions, fit_qmle  # noqa: E402

__all__ = [
    "__version__",
    "GatedVolError",
    "Family",
    "ModelSpec",
    "ParamVector",
    "filter_variance",
    "simulate_path",
    "FitOptions",
    "fit_qmle",
]
