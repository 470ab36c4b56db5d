"""Online estimation of the input parameter and of design performance.

The moving-average estimator discards the oldest ``floor(eta * n)`` outputs of a
design and averages the rest.  Its limiting variance is a weighted sum of an
input-uncertainty term and a simulation-uncertainty term; the weight on the
former is :func:`weight_w`.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NumericalError, ShapeError


def n_discard(n, eta):
    """Number of oldest outputs dropped at stage ``n``."""
    return int(math.floor(eta * n))


class ThetaTracker:
    """Running mean and sample covariance of the batched data ``D_1, D_2, ...``.

    Uses Welford's update so the mean equals ``(1/n) sum D_j`` up to rounding.
    """

    def __init__(self, d):
        self.d = d
        self.n = 0
        self.theta = np.zeros(d)
        self._m2 = np.zeros((d, d))

    def update(self, D):
        D = np.asarray(D, dtype=float).reshape(-1)
        if D.shape != (self.d,):
            raise ShapeError(f"expected a {self.d}-vector, got shape {D.shape}")
        self.n += 1
        delta = D - self.theta
        self.theta = (self.n - 1) / self.n * self.theta + D / self.n
        self._m2 += np.outer(delta, D - self.theta)
        return self.theta

    @property
    def cov(self):
        """Unbiased sample covariance of the D_j (zeros until two updates)."""
        if self.n < 2:
            return np.zeros((self.d, self.d))
        c = self._m2 / (self.n - 1)
        return (c + c.T) / 2


class OutputWindow:
    """Append-only output history of one design with O(1) moving averages."""

    def __init__(self, eta=0.0, capacity=64):
        if not 0 <= eta < 1:
            raise DomainError(f"eta must lie in [0, 1), got {eta}")
        self.eta = eta
        self._csum = np.zeros(capacity + 1)
        self.n = 0

    def append(self, value):
        if self.n + 1 >= self._csum.shape[0]:
            grown = np.zeros(2 * self._csum.shape[0])
            grown[: self._csum.shape[0]] = self._csum
            self._csum = grown
        self._csum[self.n + 1] = self._csum[self.n] + value
        self.n += 1

    def extend(self, values):
        for v in np.asarray(values, dtype=float).reshape(-1):
            self.append(v)

    def estimate(self, n=None):
        """Moving average over outputs ``n_eta+1 .. n`` (1-based)."""
        n = self.n if n is None else n
        if n < 1:
            raise ValueError("moving average of an empty window")
        if n > self.n:
            raise ShapeError(f"window holds {self.n} outputs, {n} requested")
        lo = n_discard(n, self.eta)
        return (self._csum[n] - self._csum[lo]) / (n - lo)


def moving_average(outputs, n, eta):
    """Moving-average estimate from the first ``n`` outputs along the last axis.

    Args:
        outputs: array whose last axis is the stage index (extra leading axes are
            treated as independent series).
        n: current stage; only ``outputs[..., :n]`` is used.
        eta: discard fraction in [0, 1).
    """
    if not 0 <= eta < 1:
        raise DomainError(f"eta must lie in [0, 1), got {eta}")
    if n < 1:
        raise ValueError("moving average of an empty window")
    outputs = np.asarray(outputs, dtype=float)
    if outputs.shape[-1] < n:
        raise ShapeError(f"only {outputs.shape[-1]} outputs available, {n} requested")
    lo = n_discard(n, eta)
    return outputs[..., lo:n].mean(axis=-1)


def weight_w(eta):
    """Inflation weight of the input-uncertainty variance for discard fraction ``eta``."""
    if not 0 <= eta < 1:
        raise DomainError(f"eta must lie in [0, 1), got {eta}")
    if eta == 0:
        return 2.0
    return 2 / (1 - eta) + 2 * eta * math.log(eta) / (1 - eta) ** 2


def _quad(grad, cov):
    grad = np.atleast_1d(np.asarray(grad, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (grad.shape[0], grad.shape[0]):
        raise ShapeError(f"gradient of length {grad.shape[0]} vs covariance {cov.shape}")
    return float(grad @ cov @ grad)


def limiting_variance_single(grad, cov_g, sigma2, eta):
    """Asymptotic variance of sqrt(n) times the moving-average error of one design."""
    return weight_w(eta) * _quad(grad, cov_g) + sigma2 / (1 - eta)


def limiting_variance_pairwise(grad_diff, cov_g, sigma2_diff, eta):
    """Same as :func:`limiting_variance_single` for a CRN difference of two designs."""
    return weight_w(eta) * _quad(grad_diff, cov_g) + sigma2_diff / (1 - eta)


GOLDEN = (math.sqrt(5) - 1) / 2


def eta_star(v_iu, v_su, tol=1e-8, upper=1 - 1e-6):
    """Discard fraction minimizing ``w(eta) * v_iu + v_su / (1 - eta)``.

    Golden-section search on ``[0, upper]``.

    Returns:
        ``(eta, boundary_hit)`` where ``boundary_hit`` is True when the minimizer
        sits at the upper end of the search interval (IU-only case).
    """
    if v_iu < 0 or v_su < 0:
        raise DomainError("variance components must be non-negative")
    if v_iu == 0 and v_su == 0:
        raise DomainError("objective is identically zero; eta is undefined")
    if v_iu == 0:
        return 0.0, False

    def f(e):
        return weight_w(e) * v_iu + v_su / (1 - e)

    a, b = 0.0, upper
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(200):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    else:
        raise NumericalError("golden-section search did not converge")
    x = (a + b) / 2
    candidates = [(f(0.0), 0.0), (f(x), x), (f(upper), upper)]
    val, best = min(candidates)
    return best, best >= upper - tol
