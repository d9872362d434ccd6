import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from esohedge import closedform as cf
from esohedge import lattice as lt
from esohedge import simulate as sim
from esohedge.model import ESOContract, IntensitySpec, MarketParams, PayoffSpec

from conftest import constant_contract


def _run_from(errors, x0=0.0):
    errors = np.asarray(errors, dtype=float)
    acc = sim.Accumulator()
    acc.add(errors)
    config = sim.SimConfig(n_paths=errors.size)
    return sim.HedgeRun(sim.Strategy.MEAN_VARIANCE, x0, config, errors.size, errors,
                        np.zeros(errors.size), np.zeros(errors.size, bool), acc)


def _solve(market, contract, n):
    lat = lt.build(market, contract, n)
    return lt.solve_mv(lat, market, contract), lt.rn_value(lat, market, contract), lt.sr_value(lat, market, contract)


def _frozen_policy(mv):
    """The same lattice with a zero stock position everywhere."""
    return dataclasses.replace(mv, a=np.zeros_like(mv.a), b=np.zeros_like(mv.b))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

class TestErrorStats:
    def test_all_zero(self):
        st = sim.error_stats(_run_from(np.zeros(100)))
        assert st.mhe == 0 and st.rmshe == 0
        assert all(v == 0 for v in st.percentiles.values())

    def test_two_point(self):
        st = sim.error_stats(_run_from([-1.0, 1.0]))
        assert st.mhe == 0 and st.rmshe == 1

    def test_exact_order_statistics(self):
        data = np.arange(1, 1001, dtype=float)
        st = sim.error_stats(_run_from(data))
        # inverted CDF: the ceil(q n)-th smallest value
        assert st.percentiles[1] == 10 and st.percentiles[50] == 500 and st.percentiles[99] == 990

    def test_empty_run_rejected(self):
        run = _run_from([1.0])
        run.n_paths = 0
        with pytest.raises(sim.SimulationError):
            sim.error_stats(run)

    def test_sketch_route_when_paths_dropped(self):
        rng = np.random.default_rng(1)
        data = rng.normal(5, 30, 50_000)
        exact = sim.error_stats(_run_from(data))
        run = _run_from(data)
        run.errors = None
        approx = sim.error_stats(run)
        assert not approx.exact
        assert approx.mhe == pytest.approx(exact.mhe, rel=1e-12)
        assert approx.rmshe == pytest.approx(exact.rmshe, rel=1e-12)
        assert approx.mse_stderr == pytest.approx(exact.mse_stderr, rel=1e-6)
        for p in sim.PERCENTILES:
            assert approx.percentiles[p] == pytest.approx(exact.percentiles[p], rel=2e-3)


class TestHistogram:
    def test_single_value_one_bin(self):
        h = sim.histogram(_run_from(np.full(50, 3.3)))
        assert np.count_nonzero(h.counts) == 1
        assert h.counts.sum() == 50 and h.underflow == h.overflow == 0

    def test_out_of_range_counted(self):
        h = sim.histogram(_run_from([-1000.0, 0.5, 1000.0]))
        assert (h.underflow, h.overflow, h.counts.sum()) == (1, 1, 1)

    def test_mode_counter(self):
        rng = np.random.default_rng(0)
        one = rng.normal(0, 20, 100_000)
        two = np.concatenate([one, rng.normal(120, 8, 15_000)])
        edges = np.arange(-150, 251.0)
        assert sim.count_modes(np.histogram(one, edges)[0]) == 1
        assert sim.count_modes(np.histogram(two, edges)[0]) == 2
        assert sim.count_modes(np.zeros(10)) == 0


# ---------------------------------------------------------------------------
# simulation mechanics
# ---------------------------------------------------------------------------

class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(n_paths=0), dict(n_time_steps=1), dict(bs_delta_mode="x"),
        dict(hazard_rule="x"), dict(path_model="x"), dict(workers=0),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(sim.SimulationError):
            sim.SimConfig(**kwargs)

    def test_missing_surfaces(self, grant_market, grant):
        with pytest.raises(sim.SimulationError):
            sim.simulate(grant_market, grant, sim.SimConfig(n_paths=10, strategy="mv"))
        with pytest.raises(sim.SimulationError):
            sim.simulate(grant_market, grant, sim.SimConfig(n_paths=10, strategy="sr"))
        with pytest.raises(sim.SimulationError):
            sim.simulate(grant_market, grant, sim.SimConfig(n_paths=10, strategy="bs", bs_delta_mode="lattice"))

    def test_bs_needs_no_surface(self, grant_market, grant):
        run = sim.simulate(grant_market, grant, sim.SimConfig(n_paths=10, n_time_steps=20, strategy="bs"))
        assert run.errors.size == 10

    def test_single_path(self, grant_market, grant):
        run = sim.simulate(grant_market, grant, sim.SimConfig(n_paths=1, n_time_steps=20, strategy="bs"))
        st = sim.error_stats(run)
        assert st.n == 1 and st.rmshe == pytest.approx(abs(st.mhe))


class TestDeterminism:
    @pytest.mark.parametrize("path_model", ["tree", "gbm"])
    def test_worker_count_does_not_matter(self, grant_market, grant, path_model):
        mv, _, _ = _solve(grant_market, grant, 100)
        cfgs = [sim.SimConfig(n_paths=70_000, n_time_steps=100, strategy="mv", workers=w,
                              initial_endowment=mv.g0, path_model=path_model) for w in (1, 3)]
        a, b = (sim.simulate(grant_market, grant, c, mv=mv) for c in cfgs)
        np.testing.assert_array_equal(a.errors, b.errors)
        assert sim.error_stats(a) == sim.error_stats(b)

    def test_seed_changes_output(self, grant_market, grant):
        runs = [sim.simulate(grant_market, grant, sim.SimConfig(n_paths=100, n_time_steps=20, strategy="bs", seed=s))
                for s in (1, 2)]
        assert not np.array_equal(runs[0].errors, runs[1].errors)


class TestLiquidation:
    def test_exponential_law(self):
        lam, T, M = 0.5, 20.0, 1000
        market = MarketParams(mu=0.1, sigma=0.3, r=0.05)
        contract = constant_contract(lam, maturity=T)
        run = sim.simulate(market, contract, sim.SimConfig(n_paths=100_000, n_time_steps=M, strategy="bs"))
        dt = T / M
        # on the grid, eta + dt is the first multiple of dt at or above an Exp(lam)
        # draw, so spreading it uniformly over the preceding step restores the
        # continuous law up to O((lam dt)^2)
        jitter = np.random.default_rng(99).random(run.eta.size)
        sample = run.eta + dt * jitter
        D, pval = stats.kstest(sample, stats.expon(scale=1 / lam).cdf)
        assert D < 1.63 / math.sqrt(sample.size)

    def test_trapezoid_rule_constant_intensity(self):
        lam, T, M = 0.5, 20.0, 1000
        market = MarketParams(mu=0.1, sigma=0.3, r=0.05)
        contract = constant_contract(lam, maturity=T)
        run = sim.simulate(market, contract, sim.SimConfig(n_paths=100_000, n_time_steps=M,
                                                           strategy="bs", hazard_rule="trapezoid"))
        dt = T / M
        sample = run.eta - dt * np.random.default_rng(98).random(run.eta.size)
        D, _ = stats.kstest(sample, stats.expon(scale=1 / lam).cdf)
        assert D < 1.63 / math.sqrt(sample.size)

    def test_self_financing_with_no_position(self, long_market):
        c = ESOContract(5.0, 0.0, PayoffSpec.zero(), IntensitySpec.constant(0.3))
        mv, _, _ = _solve(long_market, c, 50)
        run = sim.simulate(long_market, c, sim.SimConfig(n_paths=5000, n_time_steps=50, strategy="mv",
                                                         initial_endowment=12.5), mv=_frozen_policy(mv))
        # wealth discounted to time 0 stays exactly at x0
        np.testing.assert_array_equal(run.errors, 12.5)

    def test_forfeiture_during_vesting(self, grant_market, grant):
        mv, _, _ = _solve(grant_market, grant, 100)
        run = sim.simulate(grant_market, grant, sim.SimConfig(n_paths=20_000, n_time_steps=100, strategy="mv",
                                                              initial_endowment=7.0), mv=_frozen_policy(mv))
        assert run.forfeited.any() and (~run.forfeited).any()
        np.testing.assert_array_equal(run.errors[run.forfeited], 7.0)
        assert np.all(run.eta[run.forfeited] < 3.0)
        assert np.all(run.errors[~run.forfeited] <= 7.0)


class TestAgainstLattice:
    @pytest.mark.parametrize("shift", [-10.0, 0.0, 10.0])
    def test_mean_square_error_matches_value_function(self, grant_market, grant, shift):
        mv, _, _ = _solve(grant_market, grant, 200)
        x0 = mv.g0 + shift
        run = sim.simulate(grant_market, grant, sim.SimConfig(n_paths=200_000, n_time_steps=200, strategy="mv",
                                                              initial_endowment=x0), mv=mv)
        st = sim.error_stats(run)
        assert abs(st.mse - float(mv.value(x0))) <= 3 * st.mse_stderr

    def test_super_replication_never_short(self, grant_market, grant):
        _, _, sr = _solve(grant_market, grant, 200)
        run = sim.simulate(grant_market, grant, sim.SimConfig(n_paths=50_000, n_time_steps=200, strategy="sr",
                                                              initial_endowment=sr.v0), sr=sr)
        assert run.errors.min() >= -1e-8 * sr.v0

    def test_delta_hedge_complete_market(self, grant_market):
        c = constant_contract(0.0, maturity=1.0)
        price, _ = cf.bs_call(100.0, 100.0, 0.05, 0.30, 1.0)
        rmshe = []
        for M in (50, 200, 800):
            cfg = sim.SimConfig(n_paths=20_000, n_time_steps=M, strategy="bs", initial_endowment=price,
                                path_model="gbm")
            rmshe.append(sim.error_stats(sim.simulate(grant_market, c, cfg)).rmshe)
        assert rmshe[0] > rmshe[1] > rmshe[2]
        assert rmshe[2] < 0.5


def test_stats_invariants(grant_market, grant):
    _, rn, _ = _solve(grant_market, grant, 100)
    run = sim.simulate(grant_market, grant, sim.SimConfig(n_paths=20_000, n_time_steps=100, strategy="bs",
                                                          initial_endowment=rn.v0))
    st = sim.error_stats(run)
    assert st.rmshe**2 >= st.mhe**2
    vals = [st.percentiles[p] for p in sim.PERCENTILES]
    assert vals == sorted(vals)
