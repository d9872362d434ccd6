"""Market, contract, payoff and liquidation-intensity definitions.

All public functions use forward calendar time ``t`` in years. Rates are
decimal fractions per year.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ModelError(ValueError):
    """Raised for parameter sets outside the model's hard assumptions."""


@dataclass(frozen=True)
class MarketParams:
    mu: float
    sigma: float
    r: float
    s0: float = 100.0

    def __post_init__(self):
        if self.sigma == 0 or not math.isfinite(self.sigma):
            raise ModelError("sigma must be finite and nonzero")
        if not self.s0 > 0:
            raise ModelError("s0 must be positive")
        if self.r < 0:
            raise ModelError("r must be nonnegative")

    @property
    def theta(self) -> float:
        """Market price of risk (mu - r) / sigma."""
        return (self.mu - self.r) / self.sigma


class PayoffKind(str, enum.Enum):
    CALL = "call"
    CAPPED_CALL = "capped_call"
    CUSTOM = "custom"


@dataclass(frozen=True)
class PayoffSpec:
    """Payoff F(s) paid at liquidation (or at maturity).

    Custom payoffs must declare their growth constants ``(growth_k, growth_xi)``
    such that ``0 <= F(s) <= growth_k * (1 + s**growth_xi)``.
    """

    kind: PayoffKind
    strike: float = 100.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    growth_k: Optional[float] = None
    growth_xi: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if self.kind is PayoffKind.CUSTOM:
            if self.func is None:
                raise ModelError("custom payoff needs a function")
            if self.growth_k is None or self.growth_xi is None:
                raise ModelError("custom payoff must declare growth_k and growth_xi")
        elif not self.strike > 0:
            raise ModelError("strike must be positive")
        if self.growth_xi is not None and self.growth_xi < 1:
            raise ModelError("growth exponent xi must be >= 1")

    @classmethod
    def call(cls, strike: float) -> "PayoffSpec":
        return cls(PayoffKind.CALL, strike)

    @classmethod
    def capped_call(cls, strike: float) -> "PayoffSpec":
        return cls(PayoffKind.CAPPED_CALL, strike)

    @classmethod
    def zero(cls, strike: float = 100.0) -> "PayoffSpec":
        return cls(PayoffKind.CUSTOM, strike, func=np.zeros_like, growth_k=1.0, growth_xi=1.0)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        K = self.strike
        if self.kind is PayoffKind.CALL:
            return np.maximum(s - K, 0.0)
        if self.kind is PayoffKind.CAPPED_CALL:
            return np.maximum(np.minimum(s, 2.0 * K) - K, 0.0)
        return np.asarray(self.func(s), dtype=float)

    @property
    def growth(self) -> tuple[float, float]:
        """Declared ``(K_F, xi)`` with ``F(s) <= K_F (1 + s**xi)``."""
        if self.kind is PayoffKind.CALL:
            return 1.0, 1.0
        if self.kind is PayoffKind.CAPPED_CALL:
            return self.strike, 1.0
        return float(self.growth_k), float(self.growth_xi)

    def segments(self) -> Optional[list[tuple[float, float, dict[float, float]]]]:
        """Piecewise-power representation ``[(lo, hi, {power: coeff})]``.

        Only available for built-in payoffs; ``None`` for custom ones.
        """
        K = self.strike
        if self.kind is PayoffKind.CALL:
            return [(K, math.inf, {1.0: 1.0, 0.0: -K})]
        if self.kind is PayoffKind.CAPPED_CALL:
            return [(K, 2.0 * K, {1.0: 1.0, 0.0: -K}), (2.0 * K, math.inf, {0.0: K})]
        return None


class IntensityKind(str, enum.Enum):
    CONSTANT = "constant"
    AFFINE_LOG_MONEYNESS = "affine_log_moneyness"
    INDICATOR_MONEYNESS = "indicator_moneyness"
    CUSTOM = "custom"


@dataclass(frozen=True)
class IntensitySpec:
    """Liquidation intensity l(t, s).

    ``AFFINE_LOG_MONEYNESS`` is ``lambda_f + lambda_e * (ln s - ln K)^+``, the
    moneyness term switched on only after vesting when ``gated`` is set.
    ``INDICATOR_MONEYNESS`` is ``lambda_f + lambda_e * 1{s > K}``.
    Custom intensities take ``func(t, s)`` and must declare a ``cap``.
    """

    kind: IntensityKind
    lam: float = 0.0
    lambda_f: float = 0.0
    lambda_e: float = 0.0
    strike: float = 100.0
    gated: bool = True
    func: Optional[Callable[[float, np.ndarray], np.ndarray]] = field(default=None, compare=False)
    cap: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", IntensityKind(self.kind))
        for name in ("lam", "lambda_f", "lambda_e"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be nonnegative")
        if self.kind is IntensityKind.CUSTOM:
            if self.func is None or self.cap is None:
                raise ModelError("custom intensity needs func and a declared cap")
            if self.cap < 0:
                raise ModelError("cap must be nonnegative")
        if self.kind in (IntensityKind.AFFINE_LOG_MONEYNESS, IntensityKind.INDICATOR_MONEYNESS):
            if not self.strike > 0:
                raise ModelError("strike must be positive")

    @classmethod
    def constant(cls, lam: float) -> "IntensitySpec":
        return cls(IntensityKind.CONSTANT, lam=lam)

    @classmethod
    def affine_log_moneyness(cls, lambda_f, lambda_e, strike, gated=True) -> "IntensitySpec":
        return cls(IntensityKind.AFFINE_LOG_MONEYNESS, lambda_f=lambda_f,
                   lambda_e=lambda_e, strike=strike, gated=gated)

    @classmethod
    def indicator_moneyness(cls, lambda_f, lambda_e, strike, gated=False) -> "IntensitySpec":
        return cls(IntensityKind.INDICATOR_MONEYNESS, lambda_f=lambda_f,
                   lambda_e=lambda_e, strike=strike, gated=gated)

    def rate(self, t: float, s, vesting: float = 0.0):
        """Vectorised intensity in ``s`` at a single time ``t``."""
        s = np.asarray(s, dtype=float)
        kind = self.kind
        if kind is IntensityKind.CONSTANT:
            return np.full_like(s, self.lam)
        if kind is IntensityKind.CUSTOM:
            return np.asarray(self.func(t, s), dtype=float) + np.zeros_like(s)
        active = (not self.gated) or t >= vesting
        if not active or self.lambda_e == 0.0:
            return np.full_like(s, self.lambda_f)
        if kind is IntensityKind.AFFINE_LOG_MONEYNESS:
            extra = np.maximum(np.log(s / self.strike), 0.0)
        else:
            extra = (s > self.strike).astype(float)
        return self.lambda_f + self.lambda_e * extra

    @property
    def bound(self) -> float:
        """Declared upper bound on l (``inf`` when unbounded in s)."""
        kind = self.kind
        if kind is IntensityKind.CONSTANT:
            return self.lam
        if kind is IntensityKind.INDICATOR_MONEYNESS:
            return self.lambda_f + self.lambda_e
        if kind is IntensityKind.AFFINE_LOG_MONEYNESS:
            return self.lambda_f if self.lambda_e == 0 else math.inf
        return float(self.cap)

    @property
    def is_constant(self) -> bool:
        if self.kind is IntensityKind.CONSTANT:
            return True
        if self.kind in (IntensityKind.AFFINE_LOG_MONEYNESS, IntensityKind.INDICATOR_MONEYNESS):
            return self.lambda_e == 0
        return False

    @property
    def constant_value(self) -> float:
        if not self.is_constant:
            raise ModelError("intensity is not constant")
        return self.lam if self.kind is IntensityKind.CONSTANT else self.lambda_f


@dataclass(frozen=True)
class ESOContract:
    maturity: float
    vesting: float
    payoff: PayoffSpec
    intensity: IntensitySpec

    def __post_init__(self):
        if not self.maturity > 0:
            raise ModelError("maturity T must be positive")
        if not 0 <= self.vesting < self.maturity:
            raise ModelError("vesting Tv must lie in [0, T)")

    @property
    def strike(self) -> float:
        return self.payoff.strike

    def intensity_at(self, t: float, s):
        return self.intensity.rate(t, s, self.vesting)


def intensity_eval(spec: IntensitySpec, t: float, s, contract: ESOContract):
    return spec.rate(t, s, contract.vesting)


def payoff_eval(spec: PayoffSpec, s):
    return spec(s)


@dataclass(frozen=True)
class ValidationReport:
    intensity_bounded: bool
    intensity_bound: float
    intensity_nonnegative: bool
    growth_k: float
    growth_xi: float
    payoff_nonnegative: bool
    growth_ok: bool
    infinite_horizon_ok: Optional[bool] = None
    infinite_horizon_reason: str = ""
    warnings: tuple[str, ...] = ()


_S_GRID = np.logspace(-3, 6, 400)


def infinite_horizon_conditions(market: MarketParams, lam: float, xi: float) -> tuple[bool, str]:
    """Parameter inequalities under which the T -> infinity limit is finite."""
    r, sigma, theta = market.r, market.sigma, market.theta
    first = lam + theta**2 > (r + 0.5 * sigma**2 * xi) * (xi - 1)
    bound = 2 * r * (xi - 1) + 2 * sigma * theta * xi + sigma**2 * xi * (2 * xi - 1)
    second = lam > bound
    if first and second:
        return True, ""
    if not second:
        return False, f"need lambda > {bound:.6g} (got {lam:.6g})"
    return False, "need lambda + theta^2 > (r + sigma^2 xi / 2)(xi - 1)"


def validate(market: MarketParams, contract: ESOContract, infinite_horizon: bool = False) -> ValidationReport:
    # Hard checks repeat the constructors' so hand-built objects are caught too.
    if market.sigma == 0:
        raise ModelError("sigma must be nonzero")
    if market.r < 0:
        raise ModelError("r must be nonnegative")
    if contract.maturity <= 0 or not 0 <= contract.vesting < contract.maturity:
        raise ModelError("need T > 0 and Tv in [0, T)")

    warnings = []
    spec = contract.intensity
    ts = np.linspace(0.0, contract.maturity, 21)
    rates = np.array([contract.intensity_at(t, _S_GRID) for t in ts])
    nonneg = bool(np.all(rates >= 0))
    bound = spec.bound
    bounded = math.isfinite(bound) and bool(np.all(rates <= bound * (1 + 1e-12)))
    if not nonneg:
        warnings.append("intensity takes negative values on the sample grid")
    if not bounded:
        warnings.append("intensity is not bounded in s; boundedness assumption violated")

    K_F, xi = contract.payoff.growth
    F = contract.payoff(_S_GRID)
    pay_nonneg = bool(np.all(F >= 0))
    growth_ok = bool(np.all(F <= K_F * (1 + _S_GRID**xi) * (1 + 1e-12)))
    if not pay_nonneg:
        warnings.append("payoff takes negative values on the sample grid")
    if not growth_ok:
        warnings.append("declared payoff growth bound fails on the sample grid")

    ih_ok, ih_reason = None, ""
    if infinite_horizon:
        if not spec.is_constant:
            ih_ok, ih_reason = False, "infinite-horizon limit needs a constant intensity"
        elif contract.vesting != 0:
            ih_ok, ih_reason = False, "infinite-horizon limit needs immediate vesting"
        elif spec.constant_value <= 0:
            ih_ok, ih_reason = False, "infinite-horizon limit needs lambda > 0"
        else:
            ih_ok, ih_reason = infinite_horizon_conditions(market, spec.constant_value, xi)
        if not ih_ok:
            warnings.append(ih_reason)

    return ValidationReport(
        intensity_bounded=bounded,
        intensity_bound=bound,
        intensity_nonnegative=nonneg,
        growth_k=K_F,
        growth_xi=xi,
        payoff_nonnegative=pay_nonneg,
        growth_ok=growth_ok,
        infinite_horizon_ok=ih_ok,
        infinite_horizon_reason=ih_reason,
        warnings=tuple(warnings),
    )


def standard_grant(vesting: float = 3.0, maturity: float = 10.0, strike: float = 100.0,
                   lambda_f: float = 0.10, lambda_e: float = 0.10) -> ESOContract:
    """At-the-money ten-year call with a moneyness-driven exit intensity."""
    return ESOContract(
        maturity=maturity,
        vesting=vesting,
        payoff=PayoffSpec.call(strike),
        intensity=IntensitySpec.affine_log_moneyness(lambda_f, lambda_e, strike, gated=True),
    )
