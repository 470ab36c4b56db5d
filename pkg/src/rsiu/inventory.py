"""Capacitated production-inventory testbed with exponential monthly demand.

Each period: last period's production arrives, demand is filled or backlogged,
holding and backlog costs are charged on the post-demand inventory, and the next
production quantity is set to close the gap to the order-up-to level, capped at
``r_max``.  Designs are the order-up-to levels ``s = 1..20``; the registered
performance is the negative total cost so that larger is better.

Two input-uncertainty cases are supported:

* ``"single"``: all months share one demand mean ``theta`` (one input source).
* ``"multi"``: each quarter has its own mean, months ``3q-2 .. 3q`` use ``theta[q]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Block, Design, ExponentialMean, InputModel, Problem
from .errors import DomainError, ShapeError

CASES = ("single", "multi")
THETA_SINGLE = np.array([1.0])
THETA_MULTI = np.array([1.0, 0.8, 0.5, 0.5])
LEVELS = tuple(range(1, 21))


@dataclass(frozen=True)
class InventoryParams:
    r_max: float = 0.5
    c_hold: float = 0.1
    c_back: float = 0.2
    horizon: int = 12

    def __post_init__(self):
        if self.r_max <= 0 or self.c_hold <= 0 or self.c_back <= 0 or self.horizon < 1:
            raise DomainError("inventory parameters must be positive")


def inventory_cost(s, demand, params: InventoryParams = InventoryParams()):
    """Total cost over the horizon for order-up-to level(s) ``s``.

    Args:
        s: scalar or 1-d array of order-up-to levels.
        demand: array whose last axis holds the ``horizon`` monthly demands.

    Returns:
        Array of shape ``s.shape + demand.shape[:-1]`` (a float for scalar inputs).
    """
    demand = np.asarray(demand, dtype=float)
    if demand.shape[-1] != params.horizon:
        raise ShapeError(f"expected {params.horizon} demands, got {demand.shape[-1]}")
    if np.any(demand < 0):
        raise DomainError("demand must be non-negative")
    s_arr = np.asarray(s, dtype=float)
    lead = demand.shape[:-1]
    level = s_arr.reshape(s_arr.shape + (1,) * len(lead))
    inv = np.broadcast_to(level, s_arr.shape + lead).astype(float)
    arriving = np.zeros_like(inv)
    total = np.zeros_like(inv)
    for t in range(params.horizon):
        post = inv - demand[..., t] + arriving
        total += params.c_hold * (arriving + np.maximum(post, 0.0)) + params.c_back * np.maximum(-post, 0.0)
        arriving = np.minimum(params.r_max, np.maximum(level - post, 0.0))
        inv = post
    if total.ndim == 0:
        return float(total)
    return total


def _check_case(case):
    if case not in CASES:
        raise DomainError(f"unknown case {case!r}; expected one of {CASES}")


def month_means(theta, case, horizon=12):
    _check_case(case)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if np.any(theta <= 0):
        raise DomainError("demand means must be positive")
    if case == "single":
        if theta.shape != (1,):
            raise ShapeError("single case takes one demand mean")
        return np.full(horizon, theta[0])
    if horizon % 4:
        raise DomainError("multi case needs a horizon that is a multiple of 4")
    if theta.shape != (4,):
        raise ShapeError("multi case takes four quarterly means")
    return np.repeat(theta, horizon // 4)


def demand_sampler(theta, case, rng, n=None, horizon=12):
    """Monthly demands; shape ``(horizon,)`` or ``(n, horizon)``."""
    means = month_means(theta, case, horizon)
    size = horizon if n is None else (n, horizon)
    return rng.exponential(1.0, size=size) * means


def score(demand, theta, case, horizon=12):
    """Score of the demand vector(s) with respect to the demand mean(s)."""
    month_means(theta, case, horizon)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    demand = np.asarray(demand, dtype=float)
    if case == "single":
        return ((demand.sum(axis=-1) - horizon * theta[0]) / theta[0] ** 2)[..., None]
    per = horizon // 4
    quarters = demand.reshape(demand.shape[:-1] + (4, per)).sum(axis=-1)
    return (quarters - per * theta) / theta**2


def sigma_theta(theta, case):
    """Asymptotic covariance of the sample-mean estimator of the demand mean(s)."""
    _check_case(case)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if np.any(theta <= 0):
        raise DomainError("demand means must be positive")
    if case == "single":
        return np.array([[theta[0] ** 2]])
    return np.diag(theta**2)


def input_model(case, horizon=12):
    _check_case(case)
    if case == "single":
        return InputModel((Block(ExponentialMean(), horizon, "demand"),))
    return InputModel(tuple(Block(ExponentialMean(), horizon // 4, f"Q{q + 1}") for q in range(4)))


def inventory_problem(case="single", params: InventoryParams = InventoryParams(), levels=LEVELS):
    """Build the testbed as a maximization :class:`Problem` (output = -cost)."""
    levels = tuple(levels)

    def evaluator(ids, xi):
        s = np.array([levels[i - 1] for i in ids], dtype=float)
        return -inventory_cost(s, xi, params)

    def make_h(s):
        return lambda xi: -inventory_cost(float(s), xi, params)

    designs = tuple(Design(i + 1, make_h(s), f"s={s}") for i, s in enumerate(levels))
    return Problem(input_model(case, params.horizon), designs, f"inv-{case}", evaluator)
