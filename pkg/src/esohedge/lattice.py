"""Binomial-tree dynamic programming for the ESO hedging problem.

Surfaces are stored as ``(N + 1, N + 1)`` arrays indexed ``[n, j]`` where
``n`` is the time layer and ``j`` the number of up moves; entries with
``j > n`` are NaN.

The mean-variance value at layer ``n`` is kept in the quadratic form
``W_n(x) = f (x - g)^2 + h`` in current-money units. One step of the
recursion is

    W_n(x) = min_pi  p (x - Phi)^2 + (1 - p) D^2 E_P[W_{n+1}(x e^{r dt} + pi (R - e^{r dt}))]

with ``p`` the liquidation probability over the step, ``Phi`` the vested
payoff at the current node and ``D = e^{-r dt}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ESOContract, MarketParams


class LatticeError(ValueError):
    """Raised when the tree is too coarse for the given parameters."""


class NumericalError(ArithmeticError):
    """Raised when the backward recursion produces an inadmissible surface."""


@dataclass(frozen=True)
class Lattice:
    n_steps: int
    maturity: float
    s0: float
    sigma: float
    u: float
    d: float
    q_p: float
    q_q: float
    r: float
    vesting_layer: int

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps

    @property
    def disc(self) -> float:
        return math.exp(-self.r * self.dt)

    @property
    def vesting_time(self) -> float:
        """Vesting date after snapping to the nearest layer."""
        return self.vesting_layer * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def layer(self, n: int) -> np.ndarray:
        j = np.arange(n + 1)
        return self.s0 * np.exp((2 * j - n) * self.sigma * math.sqrt(self.dt))

    def prices(self) -> np.ndarray:
        N = self.n_steps
        n = np.arange(N + 1)[:, None]
        j = np.arange(N + 1)[None, :]
        s = self.s0 * np.exp((2 * j - n) * self.sigma * math.sqrt(self.dt))
        return np.where(j <= n, s, np.nan)


def build(market: MarketParams, contract: ESOContract, n_steps: int) -> Lattice:
    """Cox-Ross-Rubinstein tree with exact one-step moment matching."""
    if n_steps < 2:
        raise LatticeError("n_steps must be at least 2")
    dt = contract.maturity / n_steps
    vol = abs(market.sigma)
    u = math.exp(vol * math.sqrt(dt))
    d = 1.0 / u
    q_p = (math.exp(market.mu * dt) - d) / (u - d)
    q_q = (math.exp(market.r * dt) - d) / (u - d)
    for name, q in (("real-world", q_p), ("risk-neutral", q_q)):
        if not 0.0 < q < 1.0:
            raise LatticeError(f"{name} up-probability {q:.4g} outside (0, 1); refine the tree")
    return Lattice(
        n_steps=n_steps,
        maturity=contract.maturity,
        s0=market.s0,
        sigma=vol,
        u=u,
        d=d,
        q_p=q_p,
        q_q=q_q,
        r=market.r,
        vesting_layer=int(round(contract.vesting / dt)),
    )


def _liquidation(lat: Lattice, contract: ESOContract, n: int, s: np.ndarray):
    """Per-step liquidation probability and vested payoff at layer ``n``."""
    t = n * lat.dt
    lam = contract.intensity.rate(t, s, lat.vesting_time)
    p = -np.expm1(-lam * lat.dt)
    if n >= lat.vesting_layer:
        phi = contract.payoff(s)
    else:
        phi = np.zeros_like(s)
    return p, phi


def _empty(N: int) -> np.ndarray:
    return np.full((N + 1, N + 1), np.nan)


@dataclass(frozen=True)
class MVSolution:
    """Solved mean-variance surfaces and the affine optimal policy.

    The optimal stock holding (money amount) at node ``(n, j)`` given wealth
    ``x`` is ``a[n, j] * x + b[n, j]``. Policy rows exist for ``n < N``.
    """

    lattice: Lattice
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def f0(self) -> float:
        return float(self.f[0, 0])

    @property
    def g0(self) -> float:
        return float(self.g[0, 0])

    @property
    def h0(self) -> float:
        return float(self.h[0, 0])

    def value(self, x) -> np.ndarray:
        """Time-0 expected squared discounted hedging error from endowment ``x``."""
        x = np.asarray(x, dtype=float)
        return self.f0 * (x - self.g0) ** 2 + self.h0


def mv_step(p, phi, f_up, f_dn, g_up, g_dn, h_up, h_dn, q_p, q_q, u, d, disc):
    """One backward step of the quadratic recursion.

    Returns ``(f, g, h, a, b)`` for the current nodes given next-layer
    values in the up and down successors.
    """
    z_up = u * disc - 1.0
    z_dn = d * disc - 1.0
    w_up = q_p * f_up
    w_dn = (1.0 - q_p) * f_dn
    m0 = f_dn + q_p * (f_up - f_dn)
    m1 = w_up * z_up + w_dn * z_dn
    m2 = w_up * z_up**2 + w_dn * z_dn**2
    G_up = disc * g_up
    G_dn = disc * g_dn
    n1 = w_up * z_up * G_up + w_dn * z_dn * G_dn

    # Over one binomial step (x, pi) can replicate any target, so the
    # continuation minimum is attained at the risk-neutral price with zero
    # residual; only its curvature phi depends on f and the real-world law.
    phi_c = m0 - m1 * m1 / m2
    gamma = G_dn + q_q * (G_up - G_dn)
    kappa = disc * disc * (h_dn + q_p * (h_up - h_dn))

    surv = 1.0 - p
    f = 1.0 - surv * (1.0 - phi_c)
    g = (p * phi + surv * phi_c * gamma) / f
    h = surv * kappa + p * surv * phi_c * (phi - gamma) ** 2 / f
    a = -m1 / m2
    b = n1 / m2
    return f, g, h, a, b


def solve_mv(lat: Lattice, market: MarketParams, contract: ESOContract) -> MVSolution:
    N = lat.n_steps
    f, g, h, a, b = (_empty(N) for _ in range(5))
    s = lat.layer(N)
    f[N, :] = 1.0
    g[N, :] = contract.payoff(s)
    h[N, :] = 0.0
    disc = lat.disc
    for n in range(N - 1, -1, -1):
        s = lat.layer(n)
        p, phi = _liquidation(lat, contract, n, s)
        k = n + 1
        fn, gn, hn, an, bn = mv_step(
            p, phi,
            f[k, 1:k + 1], f[k, :k], g[k, 1:k + 1], g[k, :k], h[k, 1:k + 1], h[k, :k],
            lat.q_p, lat.q_q, lat.u, lat.d, disc,
        )
        if not np.all(fn > 0):
            raise NumericalError(f"nonpositive f at layer {n}")
        f[n, :n + 1] = fn
        g[n, :n + 1] = gn
        h[n, :n + 1] = hn
        a[n, :n + 1] = an
        b[n, :n + 1] = bn
    return MVSolution(lat, f, g, h, a, b)


@dataclass(frozen=True)
class ValueSurface:
    lattice: Lattice
    v: np.ndarray

    @property
    def v0(self) -> float:
        return float(self.v[0, 0])


def rn_value(lat: Lattice, market: MarketParams, contract: ESOContract) -> ValueSurface:
    """Expected discounted payoff at liquidation under the risk-neutral drift."""
    N = lat.n_steps
    v = _empty(N)
    v[N, :] = contract.payoff(lat.layer(N))
    disc, q = lat.disc, lat.q_q
    for n in range(N - 1, -1, -1):
        p, phi = _liquidation(lat, contract, n, lat.layer(n))
        cont = disc * (v[n + 1, :n + 1] + q * (v[n + 1, 1:n + 2] - v[n + 1, :n + 1]))
        v[n, :n + 1] = p * phi + (1.0 - p) * cont
    return ValueSurface(lat, v)


def sr_value(lat: Lattice, market: MarketParams, contract: ESOContract) -> ValueSurface:
    """American value with exercise allowed from the vesting layer onward."""
    N = lat.n_steps
    v = _empty(N)
    v[N, :] = contract.payoff(lat.layer(N))
    disc, q = lat.disc, lat.q_q
    for n in range(N - 1, -1, -1):
        cont = disc * (v[n + 1, :n + 1] + q * (v[n + 1, 1:n + 2] - v[n + 1, :n + 1]))
        if n >= lat.vesting_layer:
            cont = np.maximum(cont, contract.payoff(lat.layer(n)))
        v[n, :n + 1] = cont
    return ValueSurface(lat, v)


def node_delta(surface: ValueSurface, lat: Lattice, n: int, j: int) -> float:
    if not 0 <= n < lat.n_steps:
        raise IndexError("delta needs 0 <= n < N")
    s_next = lat.layer(n + 1)
    v = surface.v
    return float((v[n + 1, j + 1] - v[n + 1, j]) / (s_next[j + 1] - s_next[j]))


def delta_surface(surface: ValueSurface) -> np.ndarray:
    """Forward-difference hedge ratios for every node with ``n < N``."""
    lat = surface.lattice
    N = lat.n_steps
    out = _empty(N)[:N]
    for n in range(N):
        s_next = lat.layer(n + 1)
        v = surface.v[n + 1, :n + 2]
        out[n, :n + 1] = np.diff(v) / np.diff(s_next)
    return out


class NodeInterpolator:
    """Looks up node quantities at arbitrary ``(t, s)``.

    Time snaps to the nearest layer below ``N``; within a layer values are
    interpolated linearly in ``ln s`` and clamped at the edge nodes.
    """

    def __init__(self, lat: Lattice, *surfaces: np.ndarray):
        self.lat = lat
        self.surfaces = surfaces
        self._step = 2.0 * lat.sigma * math.sqrt(lat.dt)
        self._log_s0 = math.log(lat.s0)

    def layer_index(self, t: float) -> int:
        n = int(round(t / self.lat.dt))
        return min(max(n, 0), self.lat.n_steps - 1)

    def __call__(self, t: float, s):
        n = self.layer_index(t)
        s = np.asarray(s, dtype=float)
        # node j sits at ln s0 + (2j - n) sigma sqrt(dt)
        pos = (np.log(s) - self._log_s0) / self._step + 0.5 * n
        pos = np.clip(pos, 0.0, float(n))
        lo = np.minimum(np.floor(pos).astype(np.intp), max(n - 1, 0))
        w = pos - lo
        hi = np.minimum(lo + 1, n)
        out = []
        for surf in self.surfaces:
            row = surf[n]
            out.append(row[lo] + w * (row[hi] - row[lo]))
        return tuple(out) if len(out) > 1 else out[0]


def policy_at(sol: MVSolution, t: float, s):
    """Affine policy coefficients ``(a, b)`` at ``(t, s)``."""
    a, b = NodeInterpolator(sol.lattice, sol.a, sol.b)(t, s)
    if np.ndim(a) == 0:
        return float(a), float(b)
    return a, b


def dump_surface(sol: MVSolution, path) -> None:
    """Write every node as ``n, t, j, s, f, g, h, a, b`` in layer-major order."""
    lat = sol.lattice
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "t", "j", "s", "f", "g", "h", "a", "b"])
        for n in range(lat.n_steps + 1):
            s = lat.layer(n)
            t = n * lat.dt
            for j in range(n + 1):
                a = sol.a[n, j] if n < lat.n_steps else ""
                b = sol.b[n, j] if n < lat.n_steps else ""
                w.writerow([n, repr(t), j, repr(float(s[j])), repr(float(sol.f[n, j])),
                            repr(float(sol.g[n, j])), repr(float(sol.h[n, j])),
                            a if a == "" else repr(float(a)), b if b == "" else repr(float(b))])
