"""JSON run configuration.

Every block rejects unknown keys. Parse errors are reported with the line
of the offending key in the source file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .model import ESOContract, IntensitySpec, MarketParams, PayoffSpec


class ConfigError(ValueError):
    pass


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class MarketBlock(_Block):
    mu: float
    sigma: float
    r: float = Field(ge=0)
    s0: float = Field(default=100.0, gt=0)

    @field_validator("sigma")
    @classmethod
    def _nonzero(cls, v):
        if v == 0:
            raise ValueError("sigma must be nonzero")
        return v


class IntensityBlock(_Block):
    type: Literal["constant", "affine_log_moneyness", "indicator_moneyness"]
    lambda_f: float = Field(default=0.0, ge=0)
    lambda_e: float = Field(default=0.0, ge=0)
    lam: Optional[float] = Field(default=None, ge=0, alias="lambda")
    gated: Optional[bool] = None


class ContractBlock(_Block):
    T: float = Field(gt=0)
    Tv: float = Field(default=0.0, ge=0)
    strike: float = Field(default=100.0, gt=0)
    payoff: Literal["call", "capped_call", "zero"] = "call"
    intensity: IntensityBlock


class LatticeBlock(_Block):
    n_steps: int = Field(default=1000, ge=2)


StrategyName = Literal["mv", "bs", "sr"]


class SimulateBlock(_Block):
    n_paths: int = Field(default=1_000_000, ge=1)
    seed: int = Field(default=20240101, ge=0, lt=2**64)
    strategies: list[StrategyName] = Field(default_factory=lambda: ["mv", "bs", "sr"])
    endowment: Literal["auto", "star", "rn", "sr", "explicit"] = "auto"
    endowment_value: Optional[float] = None
    n_time_steps: Optional[int] = Field(default=None, ge=2)
    workers: int = Field(default=1, ge=1)
    bs_delta_mode: Literal["vanilla", "lattice"] = "vanilla"
    path_model: Literal["tree", "gbm"] = "tree"
    hazard_rule: Literal["left", "trapezoid"] = "left"
    histogram_bin_width: float = Field(default=1.0, gt=0)
    histogram_range: tuple[float, float] = (-150.0, 250.0)


class FrontierBlock(_Block):
    x_min: float = -20.0
    x_max: float = 80.0
    n_samples: int = Field(default=201, ge=2)
    simulate_points: bool = True


class LimitBlock(_Block):
    s: Optional[float] = Field(default=None, gt=0)
    method: Literal["auto", "analytic", "quadrature"] = "auto"


class ConvergeBlock(_Block):
    T_list: list[float] = Field(default_factory=lambda: [5.0, 10.0, 20.0])
    n_steps: int = Field(default=2000, ge=2)


class RunConfig(_Block):
    market: MarketBlock
    contract: ContractBlock
    lattice: LatticeBlock = Field(default_factory=LatticeBlock)
    simulate: SimulateBlock = Field(default_factory=SimulateBlock)
    frontier: FrontierBlock = Field(default_factory=FrontierBlock)
    limit: LimitBlock = Field(default_factory=LimitBlock)
    converge: ConvergeBlock = Field(default_factory=ConvergeBlock)

    def market_params(self) -> MarketParams:
        m = self.market
        return MarketParams(mu=m.mu, sigma=m.sigma, r=m.r, s0=m.s0)

    def contract_spec(self, maturity: Optional[float] = None) -> ESOContract:
        c = self.contract
        if c.payoff == "call":
            payoff = PayoffSpec.call(c.strike)
        elif c.payoff == "capped_call":
            payoff = PayoffSpec.capped_call(c.strike)
        else:
            payoff = PayoffSpec.zero(c.strike)
        it = c.intensity
        if it.type == "constant":
            lam = it.lam if it.lam is not None else it.lambda_f
            intensity = IntensitySpec.constant(lam)
        elif it.type == "affine_log_moneyness":
            gated = True if it.gated is None else it.gated
            intensity = IntensitySpec.affine_log_moneyness(it.lambda_f, it.lambda_e, c.strike, gated)
        else:
            gated = False if it.gated is None else it.gated
            intensity = IntensitySpec.indicator_moneyness(it.lambda_f, it.lambda_e, c.strike, gated)
        T = c.T if maturity is None else maturity
        return ESOContract(maturity=T, vesting=c.Tv, payoff=payoff, intensity=intensity)


def _line_of(text: str, loc: tuple) -> Optional[int]:
    """Best-effort line number of the key path ``loc`` in JSON ``text``."""
    pos = 0
    found = None
    for part in loc:
        if not isinstance(part, str):
            continue
        hit = text.find(f'"{part}"', pos)
        if hit < 0:
            break
        pos = hit + 1
        found = hit
    if found is None:
        return None
    return text.count("\n", 0, found) + 1


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            where = ".".join(str(p) for p in loc) or "<root>"
            line = _line_of(text, loc)
            prefix = f"{source}:{line}" if line else source
            lines.append(f"{prefix}: {where}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None
    if cfg.contract.Tv >= cfg.contract.T:
        raise ConfigError(f"{source}:{_line_of(text, ('contract', 'Tv'))}: contract.Tv: must be < T")
    if cfg.simulate.endowment == "explicit" and cfg.simulate.endowment_value is None:
        raise ConfigError(f"{source}: simulate.endowment_value required for explicit endowment")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def standard_grant_config(mu: float = 0.15) -> dict:
    """Ten-year at-the-money grant with three-year vesting."""
    return {
        "market": {"mu": mu, "sigma": 0.30, "r": 0.05, "s0": 100.0},
        "contract": {
            "T": 10.0,
            "Tv": 3.0,
            "strike": 100.0,
            "payoff": "call",
            "intensity": {"type": "affine_log_moneyness", "lambda_f": 0.10, "lambda_e": 0.10, "gated": True},
        },
    }


def long_horizon_config() -> dict:
    return {
        "market": {"mu": 0.10, "sigma": 0.30, "r": 0.05, "s0": 100.0},
        "contract": {
            "T": 20.0,
            "Tv": 0.0,
            "strike": 100.0,
            "payoff": "call",
            "intensity": {"type": "constant", "lambda": 0.20},
        },
        "converge": {"T_list": [5.0, 10.0, 20.0], "n_steps": 2000},
    }

