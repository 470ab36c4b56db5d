import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsiu.core import (
    DATA,
    SIM,
    Block,
    Design,
    ExponentialMean,
    InputModel,
    NormalMean,
    ParametricSource,
    Problem,
    RecordedSource,
    RngStream,
    batch_data,
    family_mappings,
    simulate,
    simulate_crn,
    stream,
)
from rsiu.errors import DomainError, ShapeError, StreamExhaustedError
from rsiu.inventory import inventory_problem


class Constant:
    """Degenerate family that always returns ``value``."""

    dim = 1

    def __init__(self, value):
        self.value = value

    def check(self, theta):
        pass

    def sample(self, theta, size, rng):
        return np.full(size, self.value, dtype=float)

    def mapping(self, x):
        return np.asarray(x, dtype=float)[:, None]

    def score(self, x, theta):
        return np.zeros(np.shape(x) + (1,))

    def covariance(self, theta):
        return np.eye(1)


def test_batch_data_examples():
    assert batch_data([[1.0, 3.0]], [2]).mean == pytest.approx([2.0])
    assert batch_data([[0.7]], [1]).mean == pytest.approx([0.7])
    np.testing.assert_allclose(batch_data([[1, 3], [1, 2, 3]], [2, 3]).mean, [2.0, 2.0])


def test_batch_data_count_mismatch():
    with pytest.raises(ShapeError):
        batch_data([[1.0, 2.0, 3.0]], [2])
    with pytest.raises(ShapeError):
        batch_data([[1.0]], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 10_000))
def test_batched_means_average_to_raw_mean(k, n, seed):
    rng = np.random.default_rng(seed)
    raw = rng.exponential(2.0, size=(n, k))
    D = [batch_data([row], [k]).mean[0] for row in raw]
    assert np.mean(D) == pytest.approx(raw.mean(), abs=1e-12)


def test_simulate_degenerate_input():
    model = InputModel((Block(Constant(3.0), 2),))
    problem = Problem(model, [Design(1, lambda xi: xi.sum(axis=1)), Design(2, lambda xi: -xi[:, 0])])
    out = simulate(problem, 1, [0.0], 5, stream(1))
    np.testing.assert_array_equal(out, np.full(5, 6.0))


def test_inventory_design_one_with_zero_demand():
    problem = inventory_problem("single")
    xi = np.zeros((1, 12))
    assert problem.evaluate([1], xi)[0, 0] == pytest.approx(-1.2)


def test_same_stream_reproduces():
    problem = inventory_problem("single")
    a = simulate(problem, 5, [1.0], 50, stream(7, 3, 1, 4))
    b = simulate(problem, 5, [1.0], 50, stream(7, 3, 1, 4))
    assert a.tobytes() == b.tobytes()


def test_distinct_stream_ids_differ():
    draws = {
        ids: RngStream(11, *ids).generator().random(4).tobytes()
        for ids in [(0, 0, 0, SIM), (1, 0, 0, SIM), (0, 1, 0, SIM), (0, 0, 1, SIM), (0, 0, 0, DATA)]
    }
    assert len(set(draws.values())) == len(draws)


def test_simulate_rejects_bad_parameter():
    problem = inventory_problem("single")
    with pytest.raises(DomainError):
        simulate(problem, 1, [-1.0], 3, stream(0))
    with pytest.raises(ValueError):
        simulate(problem, 1, [1.0], 0, stream(0))


def test_crn_designs_see_identical_inputs():
    seen = {}

    def recorder(i):
        def h(xi):
            seen[i] = xi.copy()
            return xi[:, 0]

        return h

    model = InputModel((Block(ExponentialMean(), 3),), noise=1)
    problem = Problem(model, [Design(i, recorder(i)) for i in (1, 2, 3)])
    xi, _ = simulate_crn(problem, [1, 2, 3], [1.5], 10, stream(5))
    for i in (1, 2, 3):
        np.testing.assert_array_equal(seen[i], xi)


def test_input_model_shapes_and_score():
    model = InputModel((Block(ExponentialMean(), 3, "a"), Block(NormalMean(2.0), 2, "b")), noise=2)
    assert (model.Q, model.d, model.m) == (2, 2, 7)
    theta = np.array([1.0, 0.5])
    xi = model.sample_xi(theta, 4, stream(2))
    assert xi.shape == (4, 7)
    s = model.score(xi, theta)
    np.testing.assert_allclose(s[:, 0], (xi[:, :3] - 1.0).sum(axis=1))
    np.testing.assert_allclose(s[:, 1], (xi[:, 3:5] - 0.5).sum(axis=1) / 4.0)
    np.testing.assert_allclose(model.covariance(theta), np.diag([1.0, 4.0]))


def test_score_has_mean_zero():
    model = InputModel((Block(ExponentialMean(), 2),))
    xi = model.sample_xi([0.7], 400_000, stream(3))
    s = model.score(xi, [0.7])[:, 0]
    assert abs(s.mean()) < 4 * s.std() / np.sqrt(s.size)


def test_parametric_and_recorded_sources():
    model = InputModel((Block(ExponentialMean(), 1),))
    src = ParametricSource(model, [2.0])
    x = src.take(0, 200_000, stream(9, kind=DATA))
    assert abs(x.mean() - 2.0) < 3 * 2.0 / np.sqrt(x.size)

    rec = RecordedSource([np.arange(5.0)])
    np.testing.assert_array_equal(rec.take(0, 3), [0.0, 1.0, 2.0])
    with pytest.raises(StreamExhaustedError):
        rec.take(0, 3)
    assert rec.remaining(0) == 2


def test_family_mappings_identity():
    model = InputModel((Block(ExponentialMean(), 1), Block(NormalMean(), 1)))
    maps = family_mappings(model)
    assert batch_data([[1.0, 2.0], [4.0, 6.0]], [2, 2], maps).mean.tolist() == [1.5, 5.0]


def test_problem_requires_ordered_ids():
    model = InputModel((Block(ExponentialMean(), 1),))
    with pytest.raises(ShapeError):
        Problem(model, [Design(1, lambda xi: xi[:, 0])])
    with pytest.raises(ShapeError):
        Problem(model, [Design(2, lambda xi: xi[:, 0]), Design(1, lambda xi: xi[:, 0])])
