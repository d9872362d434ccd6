"""Mean-variance hedging and valuation of employee stock options."""

__version__ = "0.1.0"

from .model import ESOContract, IntensitySpec, MarketParams, PayoffSpec, validate  # noqa: E402
from .lattice import build, rn_value, solve_mv, sr_value  # noqa: E402

__all__ = [
    "ESOContract",
    "IntensitySpec",
    "MarketParams",
    "PayoffSpec",
    "validate",
    "build",
    "solve_mv",
    "rn_value",
    "sr_value",
]
