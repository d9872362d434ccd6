"""Monte Carlo hedging-error engine.

Paths are simulated in fixed-size blocks. Block ``i`` draws from its own
stream seeded by ``(seed, i)``, so a path's randomness depends only on the
seed and its index, never on how blocks are spread over workers.

Wealth is tracked discounted to time 0, which makes the self-financing
identity exact when no stock is held.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage, signal

from . import lattice as lt
from .closedform import bs_call
from .model import ESOContract, MarketParams
from .sketch import QuantileSketch

BLOCK_SIZE = 1 << 15
EXACT_PERCENTILE_LIMIT = 10_000_000
PERCENTILES = (1, 5, 10, 50, 90, 95, 99)


class Strategy(str, enum.Enum):
    MEAN_VARIANCE = "mv"
    BS_DELTA = "bs"
    SUPER_REPLICATION = "sr"


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 1_000_000
    seed: int = 20240101
    n_time_steps: int = 1000
    strategy: Strategy = Strategy.MEAN_VARIANCE
    initial_endowment: float = 0.0
    workers: int = 1
    # "vanilla": Black-Scholes call delta; "lattice": delta of the risk-neutral tree value
    bs_delta_mode: str = "vanilla"
    # "left": intensity at step start, liquidation at step start (matches the tree);
    # "trapezoid": trapezoidal hazard, liquidation at the first grid time it crosses
    hazard_rule: str = "left"
    # "gbm": exact lognormal increments; "tree": CRR up/down moves under the real-world law
    path_model: str = "tree"
    keep_paths: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.n_paths < 1:
            raise SimulationError("n_paths must be at least 1")
        if self.n_time_steps < 2:
            raise SimulationError("n_time_steps must be at least 2")
        if self.bs_delta_mode not in ("vanilla", "lattice"):
            raise SimulationError("bs_delta_mode must be 'vanilla' or 'lattice'")
        if self.hazard_rule not in ("left", "trapezoid"):
            raise SimulationError("hazard_rule must be 'left' or 'trapezoid'")
        if self.path_model not in ("gbm", "tree"):
            raise SimulationError("path_model must be 'gbm' or 'tree'")
        if self.workers < 1:
            raise SimulationError("workers must be at least 1")


@dataclass
class Accumulator:
    """Mergeable summary of a block of hedging errors."""

    count: int = 0
    total: float = 0.0
    total_sq: float = 0.0
    total_4: float = 0.0
    sketch: QuantileSketch = field(default_factory=QuantileSketch)

    def add(self, err: np.ndarray) -> None:
        self.count += err.size
        self.total += float(np.sum(err))
        sq = err * err
        self.total_sq += float(np.sum(sq))
        self.total_4 += float(np.sum(sq * sq))
        self.sketch.add(err)

    def merge(self, other: "Accumulator") -> None:
        self.count += other.count
        self.total += other.total
        self.total_sq += other.total_sq
        self.total_4 += other.total_4
        self.sketch.merge(other.sketch)


@dataclass
class HedgeRun:
    """Per-path discounted hedging errors and liquidation data.

    ``errors`` and friends are ``None`` when the run was too large to keep
    every path; the accumulator then carries the statistics.
    """

    strategy: Strategy
    x0: float
    config: SimConfig
    n_paths: int
    errors: Optional[np.ndarray]
    eta: Optional[np.ndarray]
    forfeited: Optional[np.ndarray]
    acc: Accumulator
    vesting: float = 0.0


HedgeFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def _make_hedge(market: MarketParams, contract: ESOContract, config: SimConfig,
                mv: Optional[lt.MVSolution], rn: Optional[lt.ValueSurface],
                sr: Optional[lt.ValueSurface]) -> HedgeFn:
    """Money amount held in stock as a function of ``(t, S, X)``."""
    strategy = config.strategy
    if strategy is Strategy.MEAN_VARIANCE:
        if mv is None:
            raise SimulationError("mean-variance strategy needs a solved MVSolution")
        interp = lt.NodeInterpolator(mv.lattice, mv.a, mv.b)

        def hedge(t, s, x):
            a, b = interp(t, s)
            return a * x + b
        return hedge

    if strategy is Strategy.SUPER_REPLICATION or config.bs_delta_mode == "lattice":
        surface = sr if strategy is Strategy.SUPER_REPLICATION else rn
        if surface is None:
            raise SimulationError(f"strategy {strategy.value} needs its value surface")
        interp = lt.NodeInterpolator(surface.lattice, lt.delta_surface(surface))

        def hedge(t, s, x):
            return interp(t, s) * s
        return hedge

    K, T, r, sigma = contract.strike, contract.maturity, market.r, market.sigma

    def hedge(t, s, x):
        _, delta = bs_call(s, K, r, sigma, T - t)
        return delta * s
    return hedge


def _simulate_block(market: MarketParams, contract: ESOContract, config: SimConfig,
                    hedge: HedgeFn, x0: float, block: int, n: int):
    ss = np.random.SeedSequence(config.seed, spawn_key=(block,))
    rng = np.random.Generator(np.random.PCG64(ss))
    M = config.n_time_steps
    T = contract.maturity
    dt = T / M
    r, sigma, mu = market.r, abs(market.sigma), market.mu
    drift = (mu - 0.5 * sigma * sigma) * dt
    vol = sigma * math.sqrt(dt)
    step_disc = math.exp(-r * dt)
    vest_step = int(round(contract.vesting / dt))
    vest_time = vest_step * dt
    left = config.hazard_rule == "left"
    tree = config.path_model == "tree"
    if tree:
        up = math.exp(vol)
        q_up = (math.exp(mu * dt) - 1.0 / up) / (up - 1.0 / up)

    threshold = -np.log1p(-rng.random(n))  # -ln U with U uniform on (0, 1]
    err = np.empty(n)
    eta = np.full(n, T)

    idx = np.arange(n)
    s = np.full(n, market.s0)
    y = np.full(n, float(x0))
    hazard = np.zeros(n)
    lam_prev = contract.intensity.rate(0.0, s, vest_time) if not left else None

    def liquidate(hit, t, k):
        nonlocal idx, s, y, hazard, threshold, lam_prev
        who = idx[hit]
        pay = contract.payoff(s[hit]) if k >= vest_step else 0.0
        err[who] = y[hit] - math.exp(-r * t) * pay
        eta[who] = t
        keep = ~hit
        idx, s, y, hazard, threshold = idx[keep], s[keep], y[keep], hazard[keep], threshold[keep]
        if lam_prev is not None:
            lam_prev = lam_prev[keep]

    for k in range(M):
        t = k * dt
        if left:
            hazard += contract.intensity.rate(t, s, vest_time) * dt
            hit = hazard >= threshold
            if hit.any():
                liquidate(hit, t, k)
        z = rng.random(n) if tree else rng.standard_normal(n)
        if idx.size == 0:
            continue
        pi = hedge(t, s, y * math.exp(r * t))
        if tree:
            growth = np.where(z[idx] < q_up, up, 1.0 / up)
        else:
            growth = np.exp(drift + vol * z[idx])
        y = y + pi * math.exp(-r * t) * (growth * step_disc - 1.0)
        s = s * growth
        if not left:
            lam_next = contract.intensity.rate(t + dt, s, vest_time)
            hazard += 0.5 * (lam_prev + lam_next) * dt
            lam_prev = lam_next
            if k + 1 < M:
                hit = hazard >= threshold
                if hit.any():
                    liquidate(hit, t + dt, k + 1)
    if idx.size:
        err[idx] = y - math.exp(-r * T) * contract.payoff(s)
    return err, eta, eta < vest_time


def simulate(market: MarketParams, contract: ESOContract, config: SimConfig,
             mv: Optional[lt.MVSolution] = None, rn: Optional[lt.ValueSurface] = None,
             sr: Optional[lt.ValueSurface] = None) -> HedgeRun:
    """Replay one hedging strategy over ``config.n_paths`` paths."""
    hedge = _make_hedge(market, contract, config, mv, rn, sr)
    x0 = config.initial_endowment
    n_blocks = -(-config.n_paths // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, config.n_paths - i * BLOCK_SIZE) for i in range(n_blocks)]
    keep = config.keep_paths
    if keep is None:
        keep = config.n_paths <= EXACT_PERCENTILE_LIMIT

    def run(i):
        e, eta, forf = _simulate_block(market, contract, config, hedge, x0, i, sizes[i])
        acc = Accumulator()
        acc.add(e)
        return (e, eta, forf) if keep else None, acc

    if config.workers == 1 or n_blocks == 1:
        results = [run(i) for i in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, range(n_blocks)))

    acc = Accumulator()
    for _, a in results:  # block order
        acc.merge(a)
    errors = eta = forfeited = None
    if keep:
        errors = np.concatenate([res[0] for res, _ in results])
        eta = np.concatenate([res[1] for res, _ in results])
        forfeited = np.concatenate([res[2] for res, _ in results])
    return HedgeRun(config.strategy, float(x0), config, config.n_paths, errors, eta,
                    forfeited, acc, contract.vesting)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int
    x0: float
    mhe: float
    rmshe: float
    n_modes: int

    @property
    def bimodal(self) -> bool:
        return self.n_modes >= 2


@dataclass(frozen=True)
class ErrorStats:
    n: int
    mhe: float
    rmshe: float
    mse: float
    mse_stderr: float
    percentiles: dict[int, float]
    exact: bool


def error_stats(run: HedgeRun) -> ErrorStats:
    if run.n_paths == 0:
        raise SimulationError("empty run")
    if run.errors is not None:
        e = run.errors
        n = e.size
        mse = float(np.mean(e * e))
        mhe = float(np.mean(e))
        var_sq = float(np.var(e * e, ddof=1)) if n > 1 else 0.0
        qs = np.quantile(e, [p / 100 for p in PERCENTILES], method="inverted_cdf")
        pct = {p: float(v) for p, v in zip(PERCENTILES, qs)}
        exact = True
    else:
        acc = run.acc
        n = acc.count
        mhe = acc.total / n
        mse = acc.total_sq / n
        var_sq = max(acc.total_4 / n - mse * mse, 0.0) * n / max(n - 1, 1)
        pct = {p: acc.sketch.quantile(p / 100) for p in PERCENTILES}
        exact = False
    return ErrorStats(
        n=n,
        mhe=mhe,
        rmshe=math.sqrt(mse),
        mse=mse,
        mse_stderr=math.sqrt(var_sq / n),
        percentiles=pct,
        exact=exact,
    )


def count_modes(counts: np.ndarray, smooth: float = 2.0, prominence: float = 0.02) -> int:
    """Number of well-separated local maxima in a smoothed histogram.

    A peak counts when its prominence is at least ``prominence`` times the
    tallest smoothed bin.
    """
    c = ndimage.gaussian_filter1d(np.asarray(counts, dtype=float), smooth, mode="constant")
    if c.max() <= 0:
        return 0
    padded = np.concatenate([[0.0], c, [0.0]])
    peaks, _ = signal.find_peaks(padded, prominence=prominence * c.max())
    return int(len(peaks))


def histogram(run: HedgeRun, bins=None, bin_width: float = 1.0,
              lo: float = -150.0, hi: float = 250.0) -> Histogram:
    """Histogram of discounted hedging errors plus a mode-count diagnostic."""
    if bins is None:
        bins = np.arange(lo, hi + 0.5 * bin_width, bin_width)
    edges = np.asarray(bins, dtype=float)
    stats = error_stats(run)
    if run.errors is not None:
        data, weights = run.errors, None
    else:
        items = run.acc.sketch.items()
        data = np.array([v for v, _ in items])
        weights = np.array([c for _, c in items], dtype=float)
    counts, _ = np.histogram(data, bins=edges, weights=weights)
    w = np.ones_like(data) if weights is None else weights
    under = int(w[data < edges[0]].sum())
    over = int(w[data > edges[-1]].sum())
    counts = counts.astype(np.int64)
    return Histogram(edges, counts, under, over, run.x0, stats.mhe, stats.rmshe,
                     count_modes(counts))
