"""Report payloads written by the command-line tool.

Each model's ``model_json_schema()`` is the published schema for the
corresponding JSON file.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict

from . import __version__


class _Report(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: str = __version__


class ValueReport(_Report):
    x_star: float
    x_rn: float
    x_sr: float
    f0: float
    h0: float
    rmshe_star: float
    n_steps: int
    dt: float
    vesting_snapped: float
    warnings: list[str] = []


class StrategyRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    strategy: str
    x0: float
    MHE: float
    RMSHE: float
    p1: float
    p5: float
    p10: float
    p50: float
    p90: float
    p95: float
    p99: float
    mse_stderr: float
    n_modes: int
    exact_percentiles: bool


class SimulateReport(_Report):
    seed: int
    n_paths: int
    n_steps: int
    n_time_steps: int
    path_model: str
    hazard_rule: str
    bs_delta_mode: str
    h0: float
    rows: list[StrategyRow]


class LimitReport(_Report):
    s0: float
    lam: float
    method: str
    f_inf: float
    m_g: float
    n_g: float
    m_h: float
    n_h: float
    g_inf: float
    h_inf: float
    rmshe_inf: float


class ConvergeRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: float
    f0: float
    g0: float
    h0: float
    f_closed: float
    g_inf: float
    h_inf: float


class ConvergeReport(_Report):
    n_steps: int
    rows: list[ConvergeRow]


class FrontierReport(_Report):
    n_steps: int
    x_star: float
    rmshe_star: float
    x_rn: Optional[float] = None
    rmshe_rn: Optional[float] = None
    x_sr: Optional[float] = None
    rmshe_sr: Optional[float] = None
    seed: Optional[int] = None
    n_paths: Optional[int] = None


SCHEMAS = {
    "value": ValueReport,
    "simulate": SimulateReport,
    "limit": LimitReport,
    "converge": ConvergeReport,
    "frontier": FrontierReport,
}
