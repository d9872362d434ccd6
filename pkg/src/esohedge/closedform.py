"""Closed-form references: constant-intensity f, Black-Scholes, and the
stationary (T -> infinity) solutions g_inf, h_inf.

The stationary functions are resolvents of a killed geometric Brownian
motion. For a generator ``1/2 sigma^2 s^2 d2 + b s d - rho`` with
characteristic roots ``m < 0 < n`` the resolvent of a source ``c(s)`` is

    2 / (sigma^2 (n - m)) * [ s^m int_0^s u^(-m-1) c(u) du
                              + s^n int_s^inf u^(-n-1) c(u) du ].

Built-in payoffs are piecewise sums of powers of ``s``; for those both
resolvents are integrated exactly. Any payoff can also go through
adaptive quadrature in ``ln u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .model import MarketParams, ModelError, PayoffSpec, infinite_horizon_conditions


class DivergenceError(ArithmeticError):
    """Raised when a resolvent integral does not converge."""


def f_const_lambda(tau, lam: float, theta: float):
    """f(tau) for a constant intensity; identically 1 when lam + theta^2 = 0."""
    tau = np.asarray(tau, dtype=float)
    k = lam + theta * theta
    if k == 0:
        out = np.ones_like(tau)
    else:
        out = lam / k + (theta * theta / k) * np.exp(-k * tau)
    return float(out) if out.ndim == 0 else out


def bs_call(s, K, r, sigma, tau):
    """Black-Scholes call price and spot delta.

    At ``tau = 0`` the delta is the step function with value 0.5 at ``s = K``.
    """
    s = np.asarray(s, dtype=float)
    sigma = abs(sigma)
    if tau <= 0:
        price = np.maximum(s - K, 0.0)
        delta = np.where(s > K, 1.0, np.where(s < K, 0.0, 0.5))
    else:
        vol = sigma * math.sqrt(tau)
        with np.errstate(divide="ignore"):
            d1 = (np.log(s / K) + (r + 0.5 * sigma * sigma) * tau) / vol
        d2 = d1 - vol
        delta = ndtr(d1)
        price = s * delta - K * math.exp(-r * tau) * ndtr(d2)
    if price.ndim == 0:
        return float(price), float(delta)
    return price, delta


def bs_put(s, K, r, sigma, tau):
    """Black-Scholes put price, written directly rather than by parity."""
    s = np.asarray(s, dtype=float)
    if tau <= 0:
        return np.maximum(K - s, 0.0)
    sigma = abs(sigma)
    vol = sigma * math.sqrt(tau)
    d1 = (np.log(s / K) + (r + 0.5 * sigma * sigma) * tau) / vol
    d2 = d1 - vol
    return K * math.exp(-r * tau) * ndtr(-d2) - s * ndtr(-d1)


def _roots(drift: float, rate: float, sigma: float) -> tuple[float, float]:
    """Roots of 1/2 sigma^2 k(k-1) + drift k - rate = 0."""
    c = (drift - 0.5 * sigma * sigma) / (sigma * sigma)
    disc = c * c + 2.0 * rate / (sigma * sigma)
    if disc < 0:
        raise ModelError("negative discriminant in characteristic quadratic")
    root = math.sqrt(disc)
    return -c - root, -c + root


def characteristic(k: float, drift: float, rate: float, sigma: float) -> float:
    return 0.5 * sigma * sigma * k * (k - 1.0) + drift * k - rate


@dataclass(frozen=True)
class LimitParams:
    lam: float
    market: MarketParams
    payoff: PayoffSpec

    def __post_init__(self):
        if not self.lam > 0:
            raise ModelError("stationary limit needs a positive constant intensity")

    @property
    def g_rate(self) -> float:
        """Killing rate of the g-equation, r + lam / f_inf."""
        return self.market.r + self.lam + self.market.theta**2

    @property
    def h_rate(self) -> float:
        return 2.0 * self.market.r + self.lam


def exponents(params: LimitParams) -> tuple[float, float, float, float]:
    """``(m_g, n_g, m_h, n_h)``: g uses drift r, h uses drift mu."""
    mk = params.market
    sigma = abs(mk.sigma)
    m_g, n_g = _roots(mk.r, params.g_rate, sigma)
    m_h, n_h = _roots(mk.mu, params.h_rate, sigma)
    return m_g, n_g, m_h, n_h


# -- piecewise power functions ------------------------------------------------

Segment = tuple[float, float, dict[float, float]]


def _eval_terms(terms: dict[float, float], u):
    return sum(c * u**p for p, c in terms.items())


def _power_integral(terms: dict[float, float], k: float, lo: float, hi: float) -> float:
    """int_lo^hi u^(-k-1) sum_p c_p u^p du, hi may be inf."""
    total = 0.0
    for p, c in terms.items():
        e = p - k
        if c == 0:
            continue
        if abs(e) < 1e-13:
            if math.isinf(hi) or lo == 0:
                raise DivergenceError("logarithmically divergent resolvent integral")
            total += c * (math.log(hi) - math.log(lo))
            continue
        if math.isinf(hi):
            if e >= 0:
                raise DivergenceError(f"upper resolvent integral diverges (power {p} vs {k})")
            top = 0.0
        else:
            top = hi**e / e
        if lo == 0:
            if e <= 0:
                raise DivergenceError(f"lower resolvent integral diverges (power {p} vs {k})")
            bottom = 0.0
        else:
            bottom = lo**e / e
        total += c * (top - bottom)
    return total


def _multiply(a: dict[float, float], b: dict[float, float]) -> dict[float, float]:
    out: dict[float, float] = {}
    for p, c in a.items():
        for q, d in b.items():
            out[p + q] = out.get(p + q, 0.0) + c * d
    return out


def _resolvent_segments(segments: list[Segment], m: float, n: float, scale: float,
                        breaks: list[float]) -> list[Segment]:
    """Resolvent of a piecewise-power source, itself piecewise power.

    ``breaks`` must include every breakpoint of ``segments``.
    """
    edges = [0.0] + sorted(set(b for b in breaks if 0 < b < math.inf)) + [math.inf]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        # on (lo, hi): s^m [A + int_lo^s] + s^n [B + int_s^hi]
        A = sum(_power_integral(t, m, a, min(b, lo)) for a, b, t in segments if a < lo)
        B = sum(_power_integral(t, n, max(a, hi), b) for a, b, t in segments if b > hi)
        local = {}
        for a, b, t in segments:
            if a <= lo and b >= hi:
                local = t
                break
        terms: dict[float, float] = {m: A, n: B}
        for p, c in local.items():
            # s^m int_lo^s u^(p-m-1) du + s^n int_s^hi u^(p-n-1) du
            em, en = p - m, p - n
            terms[p] = terms.get(p, 0.0) + c * (1.0 / em - 1.0 / en)
            if lo > 0:
                terms[m] = terms.get(m, 0.0) - c * lo**em / em
            if not math.isinf(hi):
                terms[n] = terms.get(n, 0.0) + c * hi**en / en
            elif en >= 0:
                raise DivergenceError("upper resolvent integral diverges")
        out.append((lo, hi, {p: scale * c for p, c in terms.items() if c != 0}))
    return out


def _eval_segments(segments: list[Segment], s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    for lo, hi, terms in segments:
        mask = (s > lo) & (s <= hi) if lo > 0 else (s <= hi)
        if np.any(mask):
            out[mask] = _eval_terms(terms, s[mask])
    return out


# -- quadrature ---------------------------------------------------------------

def _quad_resolvent(func: Callable[[float], float], m: float, n: float, s: float,
                    breaks: tuple[float, ...], decay: float) -> tuple[float, float]:
    """``(int_0^s u^-m-1 c du, int_s^inf u^-n-1 c du)`` in ln u coordinates.

    ``decay`` is a lower bound on how fast the upper integrand falls off in
    ``ln u``. The upper range stops once that envelope is below 1e-14, or
    after ``_MAX_LOG_SPAN``; past the cut the source is continued as a power
    law with its log-slope over the last unit of ``ln u`` and the tail is added in closed form.
    """
    z_s = math.log(s)
    pts = sorted(math.log(b) for b in breaks if b > 0)

    def lower(z):
        return math.exp(-m * z) * func(math.exp(z))

    def upper(z):
        return math.exp(-n * z) * func(math.exp(z))

    low_end = z_s - min(math.log(1e14) / max(-m, 1e-3), _MAX_LOG_SPAN)
    z_hi = z_s + min(math.log(1e14) / decay, _MAX_LOG_SPAN)
    opts = dict(epsabs=0.0, epsrel=1e-10, limit=400)
    lo_pts = [p for p in pts if low_end < p < z_s]
    hi_pts = [p for p in pts if z_s < p < z_hi]
    low = 0.0
    edges = [low_end] + lo_pts + [z_s]
    for a, b in zip(edges[:-1], edges[1:]):
        low += integrate.quad(lower, a, b, **opts)[0]
    high = 0.0
    edges = [z_s] + hi_pts + [z_hi]
    for a, b in zip(edges[:-1], edges[1:]):
        high += integrate.quad(upper, a, b, **opts)[0]
    U = math.exp(z_hi)
    c_hi = func(U)
    c_back = func(U / math.e)
    if c_hi > 0 and c_back > 0:
        # slope over one full log unit; a short stencil is swamped by
        # cancellation noise when the source is a difference of large terms
        slope = math.log(c_hi / c_back)
        if slope >= n:
            raise DivergenceError("upper resolvent integral diverges")
        high += c_hi * U ** (-n) / (n - slope)
    return low, high


_MAX_LOG_SPAN = 25.0


@dataclass(frozen=True)
class LimitSolution:
    params: LimitParams
    f_inf: float
    m_g: float
    n_g: float
    m_h: float
    n_h: float
    method: str = "analytic"
    _g_segments: Optional[list] = field(default=None, repr=False, compare=False)
    _h_segments: Optional[list] = field(default=None, repr=False, compare=False)

    @property
    def g_scale(self) -> float:
        p = self.params
        sig2 = p.market.sigma**2
        return 2.0 * (p.lam + p.market.theta**2) / (sig2 * (self.n_g - self.m_g))

    @property
    def h_scale(self) -> float:
        p = self.params
        sig2 = p.market.sigma**2
        return 2.0 * p.lam / (sig2 * (self.n_h - self.m_h))

    def g(self, s):
        return g_infinity(self, s)

    def h(self, s):
        return h_infinity(self, s)


def solve_limit(params: LimitParams, method: str = "auto") -> LimitSolution:
    """Stationary solution; ``method`` is ``analytic``, ``quadrature`` or ``auto``."""
    mk = params.market
    _, xi = params.payoff.growth
    ok, reason = infinite_horizon_conditions(mk, params.lam, xi)
    if not ok:
        raise DivergenceError(reason)
    m_g, n_g, m_h, n_h = exponents(params)
    if n_g <= xi:
        raise DivergenceError("n_g <= xi: upper g-integral diverges")
    if n_h <= 2 * xi:
        raise DivergenceError("n_h <= 2 xi: upper h-integral diverges")
    f_inf = params.lam / (params.lam + mk.theta**2)
    segs = params.payoff.segments()
    if method == "auto":
        method = "analytic" if segs is not None else "quadrature"
    if method == "analytic" and segs is None:
        raise ModelError("analytic stationary solution needs a built-in payoff")
    sol = LimitSolution(params, f_inf, m_g, n_g, m_h, n_h, method)
    if method == "analytic":
        breaks = [a for a, _, _ in segs] + [b for _, b, _ in segs]
        g_segs = _resolvent_segments(segs, m_g, n_g, sol.g_scale, breaks)
        # tracking error F - g_inf on the common refinement, squared
        edges = [a for a, _, _ in g_segs]
        diff_segs = []
        for lo, hi, gt in g_segs:
            ft: dict[float, float] = {}
            mid = hi if math.isinf(hi) else 0.5 * (lo + hi)
            probe = lo * 2 + 1 if math.isinf(hi) else mid
            for a, b, t in segs:
                if a < probe <= b:
                    ft = t
            d = dict(ft)
            for p, c in gt.items():
                d[p] = d.get(p, 0.0) - c
            diff_segs.append((lo, hi, _multiply(d, d)))
        h_segs = _resolvent_segments(diff_segs, m_h, n_h, sol.h_scale, edges)
        object.__setattr__(sol, "_g_segments", g_segs)
        object.__setattr__(sol, "_h_segments", h_segs)
    return sol


def _payoff_scalar(payoff: PayoffSpec) -> Callable[[float], float]:
    return lambda u: float(payoff(u))


def g_infinity(sol: LimitSolution, s):
    if sol.method == "analytic":
        out = _eval_segments(sol._g_segments, s)
        return float(out) if out.ndim == 0 else out
    return _vectorize(lambda x: _g_quad(sol, x), s)


def h_infinity(sol: LimitSolution, s):
    if sol.method == "analytic":
        out = _eval_segments(sol._h_segments, s)
        out = np.maximum(out, 0.0)
        return float(out) if out.ndim == 0 else out
    return _vectorize(lambda x: _h_quad(sol, x), s)


def _vectorize(fn, s):
    arr = np.asarray(s, dtype=float)
    out = np.array([fn(float(x)) for x in arr.ravel()]).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def _breaks(sol: LimitSolution) -> tuple[float, ...]:
    segs = sol.params.payoff.segments()
    if segs is None:
        return (sol.params.payoff.strike,)
    return tuple(b for a, b2, _ in segs for b in (a, b2) if math.isfinite(b))


def _g_quad(sol: LimitSolution, s: float) -> float:
    if s <= 0:
        raise ValueError("s must be positive")
    _, xi = sol.params.payoff.growth
    F = _payoff_scalar(sol.params.payoff)
    low, high = _quad_resolvent(F, sol.m_g, sol.n_g, s, _breaks(sol), sol.n_g - xi)
    return sol.g_scale * (s**sol.m_g * low + s**sol.n_g * high)


def _h_quad(sol: LimitSolution, s: float) -> float:
    if s <= 0:
        raise ValueError("s must be positive")
    _, xi = sol.params.payoff.growth
    F = _payoff_scalar(sol.params.payoff)
    g = _memo_g(sol)

    def err2(u):
        return (F(u) - g(u)) ** 2

    low, high = _quad_resolvent(err2, sol.m_h, sol.n_h, s, _breaks(sol), sol.n_h - 2 * xi)
    return max(sol.h_scale * (s**sol.m_h * low + s**sol.n_h * high), 0.0)


_G_CACHES: dict[int, Callable[[float], float]] = {}


def _memo_g(sol: LimitSolution) -> Callable[[float], float]:
    key = id(sol)
    fn = _G_CACHES.get(key)
    if fn is None:
        if sol.method == "analytic":
            fn = lambda u: float(_eval_segments(sol._g_segments, u))  # noqa: E731
        else:
            fn = lru_cache(maxsize=65536)(lambda u: _g_quad(sol, u))
        _G_CACHES.clear()
        _G_CACHES[key] = fn
    return fn


def limit_report(sol: LimitSolution, s: float) -> dict:
    g = float(g_infinity(sol, s))
    h = float(h_infinity(sol, s))
    return {
        "f_inf": sol.f_inf,
        "m_g": sol.m_g,
        "n_g": sol.n_g,
        "m_h": sol.m_h,
        "n_h": sol.n_h,
        "g_inf": g,
        "h_inf": h,
        "rmshe_inf": math.sqrt(h),
    }
