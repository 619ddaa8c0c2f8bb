import numpy as np
import pytest

from popdyn.errors import ConfigurationError
from popdyn.models import (
    DModelParams,
    PopulationConfig,
    Trace,
    WModelParams,
    dmodel_cumulative,
    wmodel_derived,
)
from popdyn.simulator import (
    AgentState,
    SimConfig,
    SubUnitFanoutWarning,
    add_observation_noise,
    mean_cumulative,
    run_direct,
    run_wom,
    simulate,
    simulate_direct,
    simulate_wom,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def dparams(N=1e4, q=0.5, alpha=0.1, t_e=np.inf, gamma=None):
    return DModelParams(PopulationConfig(N, q), alpha=alpha, t_e=t_e, gamma=gamma)


def wparams(N=1e4, q=0.5, beta_n=1.5, x0=10):
    return WModelParams(PopulationConfig(N, q), beta=beta_n / N, x0=x0)


def test_zero_promotion_gives_no_views():
    run = run_direct(dparams(N=1000), 30, rng(), alpha=0.0)
    assert run.trace.total == 0
    assert np.all(run.states[:, AgentState.UNAWARE] == 1000)


def test_certain_interest_everyone_watches():
    run = run_direct(dparams(N=1000, q=1.0, alpha=50.0), 5, rng())
    assert run.trace.total == 1000
    assert run.trace.counts[0] == 1000


def test_zero_fanout_only_seeds():
    run = run_wom(wparams(N=1000, x0=7), 20, rng(), beta_n=0.0)
    assert run.trace.initial == 7
    assert run.trace.total == 0
    assert np.all(run.states[1:, AgentState.INTERESTED] == 7)


@pytest.mark.parametrize(
    "params",
    [dparams(N=5000, alpha=0.2, t_e=8, gamma=2.0), wparams(N=5000, beta_n=2.5, x0=5)],
)
def test_partition_and_monotone_states(params):
    run = simulate(SimConfig(params, 40, rng_seed=3))[0]
    np.testing.assert_array_equal(run.states.sum(axis=1), 5000)
    assert np.all(np.diff(run.states[:, AgentState.UNAWARE]) <= 0)
    assert np.all(np.diff(run.states[:, AgentState.INTERESTED]) >= 0)
    assert np.all(np.diff(run.states[:, AgentState.NOT_INTERESTED]) >= 0)
    cum = run.trace.cumulative()
    assert cum[-1] <= run.states[-1, AgentState.INTERESTED]


def test_wom_views_track_interested_count():
    run = run_wom(wparams(N=5000, beta_n=2.0, x0=4), 30, rng(2))
    np.testing.assert_array_equal(run.trace.cumulative(), run.states[1:, AgentState.INTERESTED])


def test_determinism_and_replication_independence():
    cfg = SimConfig(wparams(N=2000), 25, rng_seed=11, replications=3)
    a, b = simulate_wom(cfg), simulate_wom(cfg)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.counts, y.counts)
    assert not np.array_equal(a[0].counts, a[1].counts)
    other = simulate_wom(SimConfig(wparams(N=2000), 25, rng_seed=12, replications=3))
    assert not np.array_equal(a[0].counts, other[0].counts)


def test_mean_cumulative_is_order_independent():
    traces = simulate_direct(SimConfig(dparams(N=2000), 20, rng_seed=1, replications=4))
    np.testing.assert_allclose(mean_cumulative(traces), mean_cumulative(traces[::-1]))


def test_interested_fraction_matches_q():
    # everyone gets exposed; the INTERESTED share is a binomial(N, q) draw
    run = run_direct(dparams(N=1e5, q=0.3, alpha=20.0), 3, rng(5))
    frac = run.states[-1, AgentState.INTERESTED] / 1e5
    assert frac == pytest.approx(0.3, abs=4 * np.sqrt(0.3 * 0.7 / 1e5))


def test_direct_mean_tracks_fluid_with_cutoff():
    p = dparams(N=2e4, q=0.4, alpha=0.08, t_e=15, gamma=0.8)
    traces = simulate_direct(SimConfig(p, 40, rng_seed=4, replications=40))
    mean = mean_cumulative(traces)
    fluid = dmodel_cumulative(p, np.arange(1, 41, dtype=float))
    assert np.max(np.abs(mean - fluid)) / p.pop.interested < 0.02


def test_wom_mean_endpoint_near_x1():
    p = WModelParams(PopulationConfig(2e4, 0.5), beta=1.67 / 2e4, x0=200)
    traces = simulate_wom(SimConfig(p, 80, rng_seed=9, replications=30))
    end = np.mean([t.cumulative()[-1] for t in traces])
    assert end == pytest.approx(wmodel_derived(p).x1, rel=0.1)


def test_subunit_fanout_warns_and_keeps_mean():
    p = wparams(N=1e5, beta_n=0.5, x0=2000)
    with pytest.warns(SubUnitFanoutWarning):
        run = run_wom(p, 1, rng(0))
    # first slot: 2000 * 0.5 recommendations, a q-share of them land on unaware agents
    assert run.trace.counts[0] == pytest.approx(2000 * 0.5 * 0.5, rel=0.15)


def test_invalid_configs():
    with pytest.raises(ConfigurationError):
        SimConfig(dparams(), 0)
    with pytest.raises(ConfigurationError):
        SimConfig(dparams(), 10, replications=0)
    with pytest.raises(ConfigurationError):
        run_wom(wparams(x0=0.2), 5, rng())
    with pytest.raises(ConfigurationError):
        simulate_wom(SimConfig(dparams(), 5))


class TestNoise:
    def test_zero_noise_is_identity(self):
        tr = Trace([1.0, 2.0, 3.0])
        assert add_observation_noise(tr, 0.0) is tr

    def test_mean_one_and_relative_sd(self):
        tr = Trace(np.full(200_000, 100.0))
        noisy = add_observation_noise(tr, 0.1, rng_seed=1)
        ratio = noisy.counts / 100.0
        assert ratio.mean() == pytest.approx(1.0, abs=2e-3)
        assert ratio.std() == pytest.approx(0.1, rel=0.02)
        assert np.all(ratio > 0)

    def test_seeded(self):
        tr = Trace(np.arange(1.0, 11.0))
        a = add_observation_noise(tr, 0.2, rng_seed=3)
        b = add_observation_noise(tr, 0.2, rng_seed=3)
        np.testing.assert_array_equal(a.counts, b.counts)
        with pytest.raises(ConfigurationError):
            add_observation_noise(tr, -0.1)


def test_direct_daily_views_match_fluid_increments():
    # fluid daily count on day t is x(t) - x(t-1), not the instantaneous rate at t
    p = dparams(N=1e5, q=0.5, alpha=0.1)
    traces = simulate_direct(SimConfig(p, 60, rng_seed=21, replications=200))
    mean_daily = np.mean([t.counts for t in traces], axis=0)
    fluid = np.diff(dmodel_cumulative(p, np.arange(0, 61, dtype=float)))
    assert np.max(np.abs(mean_daily - fluid)) / fluid.max() < 0.03


def test_wom_well_above_threshold_reaches_interested_population():
    # just above the threshold the agent process (like the discrete recursion)
    # stops short of qN; at 2.5x the threshold it saturates
    p = WModelParams(PopulationConfig(1e5, 0.5), beta=10.0 / 1e5, x0=1000)
    traces = simulate_wom(SimConfig(p, 60, rng_seed=22, replications=10))
    end = np.mean([t.cumulative()[-1] for t in traces])
    assert end == pytest.approx(p.pop.interested, rel=0.03)


def test_wom_near_threshold_tracks_discrete_recursion():
    from popdyn.models import wmodel_discrete_trace

    p = WModelParams(PopulationConfig(1e5, 0.5), beta=4.0 / 1e5, x0=1000)
    traces = simulate_wom(SimConfig(p, 100, rng_seed=23, replications=10))
    end = np.mean([t.cumulative()[-1] for t in traces])
    assert end == pytest.approx(wmodel_discrete_trace(p, 100).cumulative()[-1], rel=0.1)
