"""Named problem instances with oracle (true-parameter) statistics.

The oracle side knows the true input parameter and exposes the quantities the
procedures would otherwise have to estimate: performances, output variances,
CRN difference variances and performance gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import inventory
from .core import ORACLE, Block, Design, ExponentialMean, InputModel, NormalMean, Problem, stream
from .errors import ConfigError


@dataclass(frozen=True)
class OracleStats:
    """True-parameter statistics of a problem.

    Attributes:
        theta: the parameter the statistics refer to.
        H: expected performance per design.
        var: output variance per design.
        grad: ``(K, d)`` performance gradients with respect to ``theta``.
        diff_var: ``(K, K)`` variances of CRN output differences.
        cov_theta: per-observation asymptotic covariance of the parameter estimator.
        se: standard errors of ``H`` when obtained by Monte Carlo (zeros if exact).
    """

    theta: np.ndarray
    H: np.ndarray
    var: np.ndarray
    grad: np.ndarray
    diff_var: np.ndarray
    cov_theta: np.ndarray
    se: np.ndarray | None = None

    @property
    def best(self):
        return int(np.argmax(self.H)) + 1


@dataclass(frozen=True)
class Testbed:
    name: str
    problem: Problem
    theta: np.ndarray
    best: int
    oracle_fn: Callable[[], OracleStats] = field(compare=False, repr=False)

    def oracle(self) -> OracleStats:
        return self.oracle_fn()

    @property
    def K(self):
        return self.problem.K


# ---------------------------------------------------------------------------
# Inventory


@lru_cache(maxsize=16)
def inventory_oracle(case, theta=None, reps=200_000, seed=20190101, step=0.01, chunk=25_000):
    """Long-run Monte Carlo statistics of the inventory testbed.

    Gradients are central finite differences under common random numbers: the
    demand of block ``q`` is rescaled from ``theta(q)`` to ``theta(q) +/- step``
    on the same unit-exponential draws.
    """
    if theta is None:
        theta = inventory.THETA_SINGLE if case == "single" else inventory.THETA_MULTI
    theta = np.asarray(theta, dtype=float).reshape(-1)
    params = inventory.InventoryParams()
    levels = np.array(inventory.LEVELS, dtype=float)
    means = inventory.month_means(theta, case, params.horizon)
    per = params.horizon if case == "single" else params.horizon // 4
    d = theta.shape[0]
    K = levels.shape[0]
    rng = stream(seed, kind=ORACLE)
    sums = np.zeros(K)
    cross = np.zeros((K, K))
    grad_sum = np.zeros((K, d))
    done = 0
    while done < reps:
        n = min(chunk, reps - done)
        unit = rng.exponential(1.0, size=(n, params.horizon))
        out = -inventory.inventory_cost(levels, unit * means, params)
        sums += out.sum(axis=1)
        cross += out @ out.T
        for q in range(d):
            up = means.copy()
            dn = means.copy()
            up[q * per : (q + 1) * per] += step
            dn[q * per : (q + 1) * per] -= step
            f_up = -inventory.inventory_cost(levels, unit * up, params)
            f_dn = -inventory.inventory_cost(levels, unit * dn, params)
            grad_sum[:, q] += ((f_up - f_dn) / (2 * step)).sum(axis=1)
        done += n
    H = sums / reps
    cov = (cross - reps * np.outer(H, H)) / (reps - 1)
    var = np.diag(cov).copy()
    diff_var = np.maximum(var[:, None] + var[None, :] - 2 * cov, 0.0)
    return OracleStats(
        theta=theta,
        H=H,
        var=var,
        grad=grad_sum / reps,
        diff_var=diff_var,
        cov_theta=inventory.sigma_theta(theta, case),
        se=np.sqrt(var / reps),
    )


def _inventory_testbed(case, reps=200_000):
    theta = inventory.THETA_SINGLE if case == "single" else inventory.THETA_MULTI
    best = 5 if case == "single" else 3
    return Testbed(
        f"inv-{case}",
        inventory.inventory_problem(case),
        theta.copy(),
        best,
        lambda: inventory_oracle(case, reps=reps),
    )


# ---------------------------------------------------------------------------
# Toy problems with closed-form statistics


def gauss_toy(means=(0.0, -0.5, -1.0), sds=None):
    """Independent normal designs ``h_i = mu_i + s_i * z_i`` with no input uncertainty.

    The input model has a single normal block whose draws are not used by the
    designs, so every design is insensitive to ``theta``.
    """
    means = np.asarray(means, dtype=float)
    K = means.shape[0]
    sds = np.ones(K) if sds is None else np.asarray(sds, dtype=float)
    model = InputModel((Block(NormalMean(1.0), 1, "unused"),), noise=K)

    def evaluator(ids, xi):
        idx = np.asarray(ids) - 1
        return means[idx, None] + sds[idx, None] * xi[:, 1 + idx].T

    designs = tuple(Design(i + 1, lambda xi, i=i: means[i] + sds[i] * xi[:, 1 + i]) for i in range(K))
    problem = Problem(model, designs, "gauss-toy", evaluator)
    theta = np.zeros(1)

    def oracle():
        return OracleStats(
            theta=theta,
            H=means.copy(),
            var=sds**2,
            grad=np.zeros((K, 1)),
            diff_var=sds[:, None] ** 2 + sds[None, :] ** 2 - 2 * np.diag(sds**2),
            cov_theta=np.eye(1),
            se=np.zeros(K),
        )

    best = int(np.argmax(means)) + 1
    return Testbed("gauss-toy", problem, theta, best, oracle)


def shift_toy(offsets=(1.0, 0.5, 0.0), theta=1.0):
    """Common-shift family ``h_i(xi) = C_i + xi`` with ``xi ~ Exp(theta)``.

    Every design moves by the same amount when ``theta`` changes, so the ranking
    is insensitive to input uncertainty and CRN differences are deterministic.
    """
    offsets = np.asarray(offsets, dtype=float)
    K = offsets.shape[0]
    model = InputModel((Block(ExponentialMean(), 1, "shift"),))

    def evaluator(ids, xi):
        return offsets[np.asarray(ids) - 1, None] + xi[:, 0][None, :]

    designs = tuple(Design(i + 1, lambda xi, i=i: offsets[i] + xi[:, 0]) for i in range(K))
    problem = Problem(model, designs, "shift-toy", evaluator)
    th = np.array([theta])

    def oracle():
        return OracleStats(
            theta=th,
            H=offsets + theta,
            var=np.full(K, theta**2),
            grad=np.ones((K, 1)),
            diff_var=np.zeros((K, K)),
            cov_theta=np.array([[theta**2]]),
            se=np.zeros(K),
        )

    return Testbed("shift-toy", problem, th, int(np.argmax(offsets)) + 1, oracle)


def linear_toy(intercepts=(0.0, 0.3), slopes=(1.0, 0.0), noise_sds=(1.0, 1.0), theta=1.0):
    """Linear-in-theta designs ``h_i = a_i + b_i * e + s_i * z_i``.

    ``e ~ Exp(theta)`` is shared by all designs and ``z_i`` are standard normal, so
    ``H_i(theta) = a_i + b_i * theta`` and ``sigma_i^2 = b_i^2 theta^2 + s_i^2``.
    """
    a = np.asarray(intercepts, dtype=float)
    b = np.asarray(slopes, dtype=float)
    s = np.asarray(noise_sds, dtype=float)
    K = a.shape[0]
    model = InputModel((Block(ExponentialMean(), 1, "rate"),), noise=K)

    def evaluator(ids, xi):
        idx = np.asarray(ids) - 1
        return a[idx, None] + b[idx, None] * xi[:, 0][None, :] + s[idx, None] * xi[:, 1 + idx].T

    designs = tuple(
        Design(i + 1, lambda xi, i=i: a[i] + b[i] * xi[:, 0] + s[i] * xi[:, 1 + i]) for i in range(K)
    )
    problem = Problem(model, designs, "linear-toy", evaluator)
    th = np.array([theta])

    def oracle():
        var = b**2 * theta**2 + s**2
        diff_var = (b[:, None] - b[None, :]) ** 2 * theta**2 + s[:, None] ** 2 + s[None, :] ** 2
        np.fill_diagonal(diff_var, 0.0)
        return OracleStats(
            theta=th,
            H=a + b * theta,
            var=var,
            grad=b[:, None].copy(),
            diff_var=diff_var,
            cov_theta=np.array([[theta**2]]),
            se=np.zeros(K),
        )

    return Testbed("linear-toy", problem, th, int(np.argmax(a + b * theta)) + 1, oracle)


REGISTRY = {
    "inv-single": lambda: _inventory_testbed("single"),
    "inv-multi": lambda: _inventory_testbed("multi"),
    "gauss-toy": gauss_toy,
    "shift-toy": shift_toy,
    "linear-toy": linear_toy,
}


def get_testbed(name) -> Testbed:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown testbed {name!r}; known: {sorted(REGISTRY)}") from None
    return factory()
