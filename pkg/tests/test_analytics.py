from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from doicsim.analytics import (
    HorizonTooShortError,
    InstabilityError,
    RateLaw,
    ServiceMoments,
    delay_targets_feasible,
    lambda_scale_for_load,
    mean_service_time,
    priority_delay,
    priority_delays,
    rate_law,
    renewal_mean_service_time,
    second_moment_double_sum,
    second_moment_service_time,
    service_moments,
    service_survival,
    total_load,
)
from doicsim.channel import GainDistribution
from doicsim.oracle import enumerate_service_time, mc_service_moments
from doicsim.power import PowerPolicy, optimal_power_array, rate_array

POLICY = PowerPolicy(100.0, 20.0)
GAMMA = GainDistribution.truncated_exponential(1.0)
G_LOW = GainDistribution.truncated_exponential(0.1)
G_HIGH = GainDistribution.truncated_exponential(0.4)

small_laws = st.dictionaries(st.sampled_from([1.0, 2.0, 3.0, 4.0]), st.floats(0.05, 1.0), min_size=1, max_size=4).map(
    lambda d: {k: v / sum(d.values()) for k, v in d.items()}
)


def test_point_mass_law():
    law = rate_law(GainDistribution.constant(1.0), GainDistribution.constant(20.0), POLICY)
    assert law.mean == pytest.approx(1.0) and law.r_max == pytest.approx(1.0)
    assert law.probs[np.flatnonzero(law.probs)].tolist() == [1.0]


def test_two_point_law():
    law = rate_law(GainDistribution.table({0.01: 0.5, 0.03: 0.5}), GainDistribution.constant(0.1), POLICY)
    nz = np.flatnonzero(law.probs)
    assert law.support[nz] == pytest.approx([1.0, 2.0])
    assert law.probs[nz] == pytest.approx([0.5, 0.5])


@pytest.mark.parametrize("g_dist", [G_LOW, G_HIGH], ids=["g=0.1", "g=0.4"])
def test_rate_law_mean_matches_monte_carlo(g_dist):
    rng = np.random.default_rng(77)
    n = 10_000_000
    r = rate_array(optimal_power_array(g_dist.sample(rng, n), 20.0, 100.0), GAMMA.sample(rng, n))
    law = rate_law(GAMMA, g_dist, POLICY)
    assert abs(law.mean - r.mean()) / r.mean() < 0.005
    assert float(np.sum(law.probs)) == pytest.approx(1.0, abs=1e-9)
    assert law.r_max <= math.log2(1 + 100 * 10) + 1e-12


def test_mean_service_time_examples():
    law = RateLaw.from_points({10.0: 1.0})
    assert mean_service_time(law, 100) == 10
    assert mean_service_time(law, 95) == pytest.approx(9.5)
    assert renewal_mean_service_time(law, 95) == pytest.approx(10.0)


def test_zero_law_rejected():
    with pytest.raises(ValueError):
        mean_service_time(RateLaw.from_points({0.0: 1.0}), 10)


@pytest.mark.parametrize("k, R", [(1, 3.0), (5, 2.0), (10, 10.0), (37, 0.5)])
def test_second_moment_deterministic(k, R):
    assert second_moment_service_time(RateLaw.from_points({R: 1.0}), k * R) == pytest.approx(k * k, rel=1e-12)


def test_second_moment_small_enumeration():
    law = RateLaw.from_points({1.0: 0.5, 2.0: 0.5})
    mean, second = enumerate_service_time({1.0: 0.5, 2.0: 0.5}, 4)
    assert second_moment_service_time(law, 4) == pytest.approx(second, abs=1e-12)
    assert renewal_mean_service_time(law, 4) == pytest.approx(mean, abs=1e-12)


@given(points=small_laws, L=st.integers(1, 14))
def test_against_enumeration(points, L):
    law = RateLaw.from_points(points)
    mean, second = enumerate_service_time(points, L)
    assert renewal_mean_service_time(law, L) == pytest.approx(mean, rel=1e-10)
    assert second_moment_service_time(law, L) == pytest.approx(second, rel=1e-10)


@given(points=small_laws, L=st.integers(1, 20))
def test_collapsed_equals_double_sum(points, L):
    law = RateLaw.from_points(points)
    assert second_moment_service_time(law, L) == pytest.approx(second_moment_double_sum(law, L), rel=1e-12, abs=1e-12)


@given(points=small_laws, L=st.integers(2, 30), c=st.floats(1.05, 3.0))
def test_moments_decrease_when_rates_grow(points, L, c):
    law = RateLaw.from_points(points)
    big = RateLaw(law.support * c, law.probs, law.step * c)
    assert mean_service_time(big, L) < mean_service_time(law, L)
    assert second_moment_service_time(big, L) <= second_moment_service_time(law, L)
    assert second_moment_service_time(law, L) >= renewal_mean_service_time(law, L) ** 2 - 1e-9


def test_scaled_continuous_law_is_strictly_faster():
    law = rate_law(GAMMA, G_LOW, POLICY)
    big = RateLaw(law.support * 1.1, law.probs, law.step * 1.1, law.continuous)
    assert second_moment_service_time(big, 100) < second_moment_service_time(law, 100)


@pytest.mark.parametrize("g_dist", [G_LOW, G_HIGH], ids=["g=0.1", "g=0.4"])
def test_second_moment_against_monte_carlo_L50(g_dist):
    law = rate_law(GAMMA, g_dist, POLICY)
    mc = mc_service_moments(GAMMA, g_dist, POLICY, 50, 100_000, seed=11)
    e2 = second_moment_service_time(law, 50)
    assert abs(e2 - mc.second) < 3 * mc.se_second
    assert abs(e2 - mc.second) / mc.second < 0.05


@pytest.mark.parametrize("L", [200, 1000])
def test_ratio_mean_within_five_percent_when_packets_are_long(L):
    # L >= 20 * R_max regime
    law = rate_law(GAMMA, G_LOW, POLICY)
    mc = mc_service_moments(GAMMA, G_LOW, POLICY, L, 100_000, seed=12)
    assert abs(mean_service_time(law, L) - mc.mean) / mc.mean <= 0.05


def test_horizon_too_short():
    law = RateLaw.from_points({1.0: 0.5, 2.0: 0.5})
    with pytest.raises(HorizonTooShortError):
        service_survival(law, 10, horizon=3)
    assert service_survival(law, 10, horizon=10).size == 10


def _m(mean, second, lam):
    return ServiceMoments(mean, second, lam)


def test_priority_delay_light_traffic_limit():
    k = 7.0
    assert priority_delay([_m(k, k * k, 1e-9)], 0) == pytest.approx(k, rel=1e-6)


def test_priority_delay_single_class_is_pollaczek_khinchine():
    # M/G/1: W = E[s] + lam E[s^2] / (2 (1 - rho))
    m = _m(4.0, 20.0, 0.1)
    assert priority_delay([m], 0) == pytest.approx(4.0 + 0.1 * 20.0 / (2 * 0.6))


def test_priority_delay_higher_class_is_faster():
    ms = [_m(5.0, 30.0, 0.05), _m(5.0, 30.0, 0.05)]
    assert priority_delay(ms, 0) < priority_delay(ms, 1)
    d = priority_delays(ms, (1, 0))
    assert d[1] < d[0]


def test_priority_delay_unscaled_residual_option():
    ms = [_m(5.0, 30.0, 0.05)]
    base = priority_delay(ms, 0, residual_scale=0.0)
    assert priority_delay(ms, 0, residual_scale=1.0) - base == pytest.approx(2 * (priority_delay(ms, 0) - base))


def test_priority_delay_instability():
    with pytest.raises(InstabilityError):
        priority_delay([_m(5.0, 30.0, 0.1), _m(5.0, 30.0, 0.11)], 1)
    with pytest.raises(IndexError):
        priority_delay([_m(5.0, 30.0, 0.1)], 1)


def test_priority_delay_diverges_towards_saturation():
    lams = np.linspace(0.01, 0.1999, 40)
    vals = [priority_delay([_m(5.0, 30.0, lam)], 0) for lam in lams]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 100 * vals[0]


def test_load_helpers():
    ms = [_m(2.0, 5.0, 0.1), _m(3.0, 10.0, 0.1)]
    assert total_load(ms) == pytest.approx(0.5)
    lam = lambda_scale_for_load([2.0, 3.0], [1, 2], 0.8)
    assert lam * (2.0 + 6.0) == pytest.approx(0.8)


def test_feasibility_lp():
    law = rate_law(GAMMA, G_LOW, POLICY)
    ms = [service_moments(law, 100, 0.005)] * 3
    loose = [1000.0] * 3
    assert delay_targets_feasible(ms, loose)
    assert not delay_targets_feasible(ms, [1.0, 1000.0, 1000.0])
    # conservation: the weighted delay sum cannot be beaten by all three at once
    w = priority_delays(ms, (0, 1, 2))
    assert not delay_targets_feasible(ms, [min(w) * 0.99] * 3)
    assert not delay_targets_feasible([service_moments(law, 100, 0.03)] * 2, loose)
