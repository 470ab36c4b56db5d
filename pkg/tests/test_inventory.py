import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsiu import inventory as inv
from rsiu.core import stream
from rsiu.errors import DomainError, ShapeError


def test_zero_demand_cost():
    assert inv.inventory_cost(1, np.zeros(12)) == pytest.approx(1.2)


def test_constant_demand_first_two_periods():
    # Period 1: post-demand -1, backlog 0.2, produce 0.5.
    # Period 2: post-demand -2.5, holding 0.1 * 0.5 + backlog 0.2 * 2.5.
    p1 = inv.InventoryParams(horizon=1)
    p2 = inv.InventoryParams(horizon=2)
    assert inv.inventory_cost(1, np.full(1, 2.0), p1) == pytest.approx(0.2)
    assert inv.inventory_cost(1, np.full(2, 2.0), p2) == pytest.approx(0.2 + 0.55)


def _loop_cost(s, demand, p=inv.InventoryParams()):
    inv_level, arriving, total = s, 0.0, 0.0
    for d in demand:
        post = inv_level - d + arriving
        total += p.c_hold * (arriving + max(post, 0.0)) + p.c_back * max(-post, 0.0)
        arriving = min(p.r_max, max(s - post, 0.0))
        inv_level = post
    return total


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_vectorized_cost_matches_scalar_trace(seed):
    rng = np.random.default_rng(seed)
    demand = rng.exponential(1.0, size=(3, 12))
    levels = np.array([1.0, 5.0, 12.5])
    got = inv.inventory_cost(levels, demand)
    assert got.shape == (3, 3)
    for a, s in enumerate(levels):
        for b in range(3):
            assert got[a, b] == pytest.approx(_loop_cost(s, demand[b]), rel=1e-12)


def test_cost_is_continuous_in_level():
    demand = np.random.default_rng(1).exponential(1.0, size=12)
    grid = np.linspace(0.0, 20.0, 20_001)
    cost = inv.inventory_cost(grid, demand)
    # Piecewise linear with slopes bounded by the cost rates times the horizon.
    assert np.max(np.abs(np.diff(cost))) < 12 * 0.3 * (grid[1] - grid[0]) * 2


def test_cost_rejects_bad_input():
    with pytest.raises(DomainError):
        inv.inventory_cost(1, -np.ones(12))
    with pytest.raises(ShapeError):
        inv.inventory_cost(1, np.ones(11))


def test_demand_sampler_means():
    d = inv.demand_sampler([1.0], "single", stream(1), n=100_000)
    assert abs(d.mean() - 1.0) < 3 / np.sqrt(d.size)
    m = inv.demand_sampler([1.0, 0.8, 0.5, 0.5], "multi", stream(2), n=200_000)
    months = m.mean(axis=0)
    se = np.repeat([1.0, 0.8, 0.5, 0.5], 3) / np.sqrt(m.shape[0])
    np.testing.assert_array_less(np.abs(months - np.repeat([1.0, 0.8, 0.5, 0.5], 3)), 4 * se)
    assert abs(m[:, 3:6].mean() - 0.8) < 0.01


def test_demand_sampler_reproducible_and_checked():
    a = inv.demand_sampler([1.0], "single", stream(5, 1))
    b = inv.demand_sampler([1.0], "single", stream(5, 1))
    assert a.tobytes() == b.tobytes()
    with pytest.raises(DomainError):
        inv.demand_sampler([0.0], "single", stream(0))


def test_score_formulas():
    assert inv.score(np.full(12, 0.7), [0.7], "single")[0] == pytest.approx(0.0)
    d = np.zeros(12)
    d[0] = 14.0
    assert inv.score(d, [1.0], "single")[0] == pytest.approx(2.0)
    theta = np.array([1.0, 0.8, 0.5, 0.5])
    d = np.arange(12.0)
    expect = [(d[3 * q : 3 * q + 3].sum() - 3 * theta[q]) / theta[q] ** 2 for q in range(4)]
    np.testing.assert_allclose(inv.score(d, theta, "multi"), expect)
    with pytest.raises(DomainError):
        inv.score(d, [-1.0], "single")


def test_score_mean_zero_per_block():
    theta = [1.0, 0.8, 0.5, 0.5]
    d = inv.demand_sampler(theta, "multi", stream(3), n=500_000)
    s = inv.score(d, theta, "multi")
    np.testing.assert_array_less(np.abs(s.mean(axis=0)), 4 * s.std(axis=0) / np.sqrt(s.shape[0]))


def test_sigma_theta():
    assert inv.sigma_theta([1.0], "single").tolist() == [[1.0]]
    np.testing.assert_allclose(inv.sigma_theta([1, 0.8, 0.5, 0.5], "multi"), np.diag([1, 0.64, 0.25, 0.25]))


def test_quarter_mean_variance():
    theta = np.array([1.0, 0.8, 0.5, 0.5])
    d = inv.demand_sampler(theta, "multi", stream(4), n=200_000)
    q_means = d.reshape(-1, 4, 3).mean(axis=2)
    np.testing.assert_allclose(q_means.var(axis=0), theta**2 / 3, rtol=0.03)


def test_problem_layout():
    single = inv.inventory_problem("single")
    multi = inv.inventory_problem("multi")
    assert single.K == multi.K == 20
    assert (single.model.d, single.model.m) == (1, 12)
    assert (multi.model.d, multi.model.m) == (4, 12)
    xi = inv.demand_sampler([1.0], "single", stream(6), n=7)
    np.testing.assert_allclose(single.evaluate([3, 5], xi), -inv.inventory_cost(np.array([3.0, 5.0]), xi))
    np.testing.assert_allclose(single.designs[4].h(xi), -inv.inventory_cost(5.0, xi))
