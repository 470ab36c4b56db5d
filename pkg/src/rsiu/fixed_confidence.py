"""Fixed-confidence selection with streaming input data.

Every stage collects a batch of input data, refreshes the input estimate, runs
one (batched) replication of each surviving design and applies an elimination
rule built on confidence bounds around moving-average estimates.

Variants:

``SEIU``
    per-design bounds, independent sampling; design ``i`` is dropped when its
    upper bound falls below another design's lower bound.
``PAIRWISE``
    pairwise bounds on CRN differences; ``j`` is dropped once some ``i`` beats
    it by more than the bound.
``HEURISTIC``
    pairwise rule with bounds from the normal approximation of the moving
    average, no warm-up.
``NOIU_BASELINE``
    ``PAIRWISE`` with the input-uncertainty part of the bound removed.  It does
    not control the error probability when inputs are estimated and exists to
    show how far coverage falls short.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import DATA, PILOT_DATA, PILOT_SIM, SHARED, SIM, Problem, batch_data, family_mappings, stream
from .errors import (
    DomainError,
    InsufficientPilotError,
    NumericalError,
    StreamExhaustedError,
    WarmupError,
)
from .estimation import ThetaTracker, n_discard, weight_w
from .fixed_budget import centered_lr_gradient

SEIU = "SEIU"
PAIRWISE = "PAIRWISE"
HEURISTIC = "HEURISTIC"
NOIU_BASELINE = "NOIU_BASELINE"
VARIANTS = (SEIU, PAIRWISE, HEURISTIC, NOIU_BASELINE)

FLOOR = 1e-12


def _u_lhs(u, n0, nu, d):
    a = u * u / (2 * d * nu**2)
    return float(np.sum(np.exp(-(n0 + 1) * a) / -np.expm1(-a)))


def solve_u_star(n0, alpha, nu, d=None):
    """Radius ``u*`` that keeps the input estimate inside its ball with high probability.

    Solves ``sum_j exp(-(n0+1) u^2 / (2 d nu_j^2)) / (1 - exp(-u^2 / (2 d nu_j^2))) = alpha / 6``.
    The left side decreases strictly from infinity to zero, so the root is unique.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    d = nu.shape[0] if d is None else d
    if n0 < 1 or not 0 < alpha < 1 or np.any(nu <= 0):
        raise DomainError("need n0 >= 1, alpha in (0, 1) and positive nu")
    target = alpha / 6

    def f(u):
        return _u_lhs(u, n0, nu, d) - target

    hi = float(nu.max()) * math.sqrt(2 * d)
    for _ in range(200):
        if f(hi) < 0:
            break
        hi *= 2
    else:
        raise NumericalError("could not bracket u*")
    lo = hi / 2
    for _ in range(2000):
        if f(lo) > 0:
            break
        lo /= 2
    else:
        raise NumericalError("could not bracket u*")
    u = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Polish on the scale of the residual itself.
    for _ in range(50):
        r = f(u)
        if abs(r) <= 1e-12 * target:
            break
        h = u * 1e-7
        slope = (f(u + h) - f(u - h)) / (2 * h)
        if slope >= 0:
            break
        u -= r / slope
    return u


def tail_kappa(n0):
    """``sum_{n > n0} n^-2`` computed as the Basel remainder."""
    if n0 < 1:
        raise DomainError("n0 must be >= 1")
    return math.pi**2 / 6 - math.fsum(1.0 / (n * n) for n in range(1, int(n0) + 1))


def tail_beta(n0, eta, tol=1e-10):
    """``sum_{n > n0} (n - floor(eta n))^-2``.

    The series is summed term by term up to ``N`` and the remainder is replaced
    by ``sum_{n > N} ((1 - eta) n + 1/2)^-2`` (a trigamma value).  Because
    ``n - floor(eta n) = (1 - eta) n + f_n`` with ``f_n`` in [0, 1), that
    replacement is off by at most ``1 / (2 (1 - eta)^3 N^2)``; ``N`` is chosen to
    push this below ``tol``.
    """
    from scipy.special import polygamma

    if n0 < 1:
        raise DomainError("n0 must be >= 1")
    if not 0 < eta < 1:
        raise DomainError("eta must lie in (0, 1)")
    N = max(int(n0) + 1, int(math.ceil(math.sqrt(1 / (2 * tol * (1 - eta) ** 3)))))
    n = np.arange(int(n0) + 1, N + 1, dtype=np.float64)
    kept = n - np.floor(eta * n)
    head = math.fsum(1.0 / kept**2)
    shift = 1 / (2 * (1 - eta))
    tail = float(polygamma(1, N + 1 + shift)) / (1 - eta) ** 2
    return head + tail


@dataclass(frozen=True)
class BoundParams:
    """Constants feeding the confidence bounds.

    ``sigma_bar``/``L_bar`` are per design (SE-IU); ``sigma_pair``/``L_pair`` are
    ``(K, K)`` matrices for the pairwise procedures; ``sigma_tilde`` holds the
    heuristic's limiting standard deviations of each CRN difference.
    """

    alpha: float
    eta: float
    n0: int
    K: int
    d: int
    nu: np.ndarray
    u_star: float
    kappa: float
    beta: float
    sigma_bar: np.ndarray | None = None
    L_bar: np.ndarray | None = None
    sigma_pair: np.ndarray | None = None
    L_pair: np.ndarray | None = None
    sigma_tilde: np.ndarray | None = None
    plug_in: bool = True

    @property
    def nu_bar(self):
        return float(np.max(self.nu))

    @classmethod
    def build(cls, alpha, eta, n0, K, nu, **arrays):
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        if not 0 < alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if not 0 < eta < 1:
            raise DomainError("eta must lie in (0, 1)")
        if n0 < 1 or K < 2:
            raise DomainError("need n0 >= 1 and K >= 2")
        arrays = {k: None if v is None else np.asarray(v, dtype=float) for k, v in arrays.items()}
        return cls(
            alpha=alpha,
            eta=eta,
            n0=int(n0),
            K=int(K),
            d=nu.shape[0],
            nu=nu,
            u_star=solve_u_star(n0, alpha, nu),
            kappa=tail_kappa(n0),
            beta=tail_beta(n0, eta),
            **arrays,
        )


def _stage_terms(n, p: BoundParams):
    if n <= p.n0:
        raise WarmupError(f"bounds are defined for n > n0 = {p.n0}, got n = {n}")
    lo = n_discard(n, p.eta)
    return n - lo, lo


def seiu_bounds(n, p: BoundParams):
    """Per-design bounds ``c_{i,n} = t_{i,n} + r_{i,n}`` as a ``(K,)`` array."""
    kept, lo = _stage_terms(n, p)
    t = 2 * p.sigma_bar * math.sqrt(math.log(math.sqrt(6 * p.K * p.kappa / p.alpha) * n) / kept)
    arg = (6 * p.d * p.K * p.beta / p.alpha) ** (1 / 3) * kept
    r = p.nu_bar * p.L_bar * math.sqrt(6 * p.d * math.log(arg) / (lo + 1))
    return t + r


def bounds_seiu(i, n, p: BoundParams):
    return float(seiu_bounds(n, p)[i - 1])


def pairwise_bounds(n, p: BoundParams, include_iu=True):
    """``(K, K)`` symmetric matrix of pairwise bounds ``c_{ij,n}``."""
    kept, lo = _stage_terms(n, p)
    KK = p.K * (p.K - 1)
    t = 2 * p.sigma_pair * math.sqrt(math.log(math.sqrt(3 * KK * p.kappa / p.alpha) * n) / kept)
    if not include_iu:
        return t
    arg = (3 * p.d * KK * p.beta / p.alpha) ** (1 / 3) * kept
    r = p.nu_bar * p.L_pair * math.sqrt(6 * p.d * math.log(arg) / (lo + 1))
    return t + r


def bounds_pairwise(i, j, n, p: BoundParams):
    return float(pairwise_bounds(n, p)[i - 1, j - 1])


def heuristic_constant(K, alpha):
    return math.sqrt(K * (K - 1) * math.pi**2 / (6 * alpha))


def bounds_heuristic(n, sigma_tilde, K, alpha):
    """Normal-approximation bound ``2 sigma_tilde sqrt(ln(C n) / n)``.

    With ``C = sqrt(K (K-1) pi^2 / (6 alpha))`` the Gaussian tail terms
    ``2 exp(-n c^2 / (2 sigma_tilde^2)) = 2 / (C n)^2`` sum to ``alpha`` over all
    stages and pairs.
    """
    if n < 1:
        raise WarmupError("heuristic bounds start at n = 1")
    return 2 * np.asarray(sigma_tilde, dtype=float) * math.sqrt(math.log(heuristic_constant(K, alpha) * n) / n)


# ---------------------------------------------------------------------------
# Plug-in constants


@dataclass(frozen=True)
class Pilot:
    """Pilot sample used to estimate the bound constants.

    Attributes:
        data: raw observations per input block.
        outputs: ``(K, P)`` raw (unbatched) simulation outputs under CRN.
        scores: ``(P, d)`` scores of the pilot inputs at ``theta``.
        theta: input estimate the pilot simulations ran under.
    """

    data: tuple
    outputs: np.ndarray
    scores: np.ndarray
    theta: np.ndarray


def run_pilot(problem: Problem, source, n_data, n_sims, seed=0, replication=0) -> Pilot:
    model = problem.model
    data = tuple(
        np.asarray(source.take(q, n_data, stream(seed, replication, SHARED, q, PILOT_DATA)))
        for q in range(model.Q)
    )
    theta = batch_data(data, [n_data] * model.Q, family_mappings(model)).mean
    xi = model.sample_xi(theta, n_sims, stream(seed, replication, SHARED, 0, PILOT_SIM))
    outputs = problem.evaluate(range(1, problem.K + 1), xi)
    return Pilot(data, outputs, model.score(xi, theta), theta)


def _floor(x, what, mask=None):
    x = np.asarray(x, dtype=float)
    low = x < FLOOR if mask is None else (x < FLOOR) & mask
    if np.any(low):
        warnings.warn(f"degenerate pilot estimate for {what}; flooring at {FLOOR}", stacklevel=3)
    out = np.maximum(x, FLOOR)
    return out if mask is None else np.where(mask, out, 0.0)


def plug_in_params(pilot: Pilot, problem: Problem, alpha, eta, n0=1, k=1, R=1) -> BoundParams:
    """Estimate every bound constant from a pilot.

    Suprema over the parameter neighbourhood are replaced by point estimates at
    the pilot input estimate: output standard deviations for ``sigma_bar``, norms
    of likelihood-ratio gradients for ``L_bar`` and standard deviations of the
    batched data for ``nu``.  ``k`` (per block) and ``R`` are the stage batch
    sizes; raw pilot quantities are rescaled to batched ones.
    """
    model = problem.model
    outputs = np.asarray(pilot.outputs, dtype=float)
    K, P = outputs.shape
    k = np.broadcast_to(np.asarray(k, dtype=float), (model.Q,))
    if P < 2 or any(np.asarray(x).shape[0] < 2 for x in pilot.data):
        raise InsufficientPilotError("need at least two pilot samples")

    cov_g = np.zeros((model.d, model.d))
    for q, (blk, sl) in enumerate(zip(model.blocks, model.theta_slices())):
        g = np.asarray(blk.family.mapping(pilot.data[q]), dtype=float).reshape(len(pilot.data[q]), -1)
        cov_g[sl, sl] = np.atleast_2d(np.cov(g, rowvar=False)) / k[q]
    nu = _floor(np.sqrt(np.diag(cov_g)), "nu")

    sd = np.std(outputs, axis=1, ddof=1) / math.sqrt(R)
    diff = outputs[:, None, :] - outputs[None, :, :]
    sd_pair = np.std(diff, axis=2, ddof=1) / math.sqrt(R)
    off = ~np.eye(K, dtype=bool)

    grad = centered_lr_gradient(outputs, pilot.scores)
    gdiff = grad[:, None, :] - grad[None, :, :]
    L = np.linalg.norm(grad, axis=1)
    L_pair = np.linalg.norm(gdiff, axis=2)
    iu = np.einsum("ija,ab,ijb->ij", gdiff, cov_g, gdiff)
    sigma_tilde = np.sqrt(weight_w(eta) * iu + sd_pair**2 / (1 - eta))

    sd = _floor(sd, "sigma_i")
    sd_pair = _floor(sd_pair, "sigma_ij", off)
    sigma_tilde = _floor(sigma_tilde, "sigma_tilde", off)
    return BoundParams.build(
        alpha,
        eta,
        n0,
        K,
        nu,
        sigma_bar=sd,
        L_bar=L,
        sigma_pair=sd_pair,
        L_pair=L_pair,
        sigma_tilde=sigma_tilde,
    )


def oracle_params(stats, problem: Problem, alpha, eta, n0=1, k=1, R=1) -> BoundParams:
    """Bound constants from true-parameter statistics (point values at theta^c)."""
    model = problem.model
    k = np.broadcast_to(np.asarray(k, dtype=float), (model.Q,))
    per_coord = np.concatenate([np.full(sl.stop - sl.start, k[q]) for q, sl in enumerate(model.theta_slices())])
    cov_g = np.asarray(stats.cov_theta, dtype=float) / np.sqrt(np.outer(per_coord, per_coord))
    grad = np.asarray(stats.grad, dtype=float)
    gdiff = grad[:, None, :] - grad[None, :, :]
    diff_var = np.asarray(stats.diff_var, dtype=float) / R
    iu = np.einsum("ija,ab,ijb->ij", gdiff, cov_g, gdiff)
    K = problem.K
    off = ~np.eye(K, dtype=bool)
    sigma_tilde = np.where(off, np.maximum(np.sqrt(weight_w(eta) * iu + diff_var / (1 - eta)), FLOOR), 0.0)
    return BoundParams.build(
        alpha,
        eta,
        n0,
        K,
        np.sqrt(np.diag(cov_g)),
        sigma_bar=np.maximum(np.sqrt(np.asarray(stats.var) / R), FLOOR),
        L_bar=np.linalg.norm(grad, axis=1),
        sigma_pair=np.where(off, np.maximum(np.sqrt(diff_var), FLOOR), 0.0),
        L_pair=np.linalg.norm(gdiff, axis=2),
        sigma_tilde=sigma_tilde,
        plug_in=False,
    )


# ---------------------------------------------------------------------------
# Procedure


@dataclass
class SelectionResult:
    """Outcome of one fixed-confidence run.

    ``trajectory`` rows are ``(stage, i, j, estimate, bound)``; ``j == 0`` marks a
    single-design row (estimate of ``H_i`` and its own bound).
    """

    winner: int
    stages: int
    data_samples: int
    replications: int
    terminated: bool
    eliminated_at: dict = field(default_factory=dict)
    trajectory: list = field(default_factory=list)


def _seiu_eliminate(est, c):
    lower = est - c
    order = np.argsort(-lower, kind="stable")
    top = lower[order[0]]
    second = lower[order[1]] if lower.shape[0] > 1 else -np.inf
    rival = np.where(np.arange(est.shape[0]) == order[0], second, top)
    return est + c < rival


def _pair_eliminate(est, C):
    delta = est[:, None] - est[None, :]
    return (delta > C).any(axis=0)


def run_fixed_confidence(
    problem: Problem,
    variant,
    params: BoundParams,
    source,
    k=1,
    R=1,
    stage_cap=10_000,
    seed=0,
    replication=0,
    record=None,
):
    """Run one fixed-confidence procedure until a single design survives.

    Args:
        variant: one of :data:`VARIANTS`.
        source: data source with ``take(q, k, rng)``.
        k: data observations per block and stage (scalar or per block).
        R: replications per design and stage, averaged into one output.
        stage_cap: maximum number of stages; reaching it returns the design with
            the highest current estimate and ``terminated=False``.
        record: ``None``, ``"pairs"`` (log every surviving pair) or a list of
            ``(i, j)`` design-id pairs; ``"designs"`` logs per-design estimates
            and bounds.

    Raises:
        StreamExhaustedError: when the source runs dry; ``partial`` carries the
            result so far.
    """
    if variant not in VARIANTS:
        raise DomainError(f"unknown variant {variant!r}")
    if stage_cap < params.n0 + 1:
        raise DomainError("stage cap must exceed the warm-up length")
    model = problem.model
    K = problem.K
    ks = [int(x) for x in np.broadcast_to(np.asarray(k), (model.Q,))]
    maps = family_mappings(model)
    tracker = ThetaTracker(model.d)
    hist = np.zeros((K, 16))
    alive = np.ones(K, dtype=bool)
    warmup = 0 if variant == HEURISTIC else params.n0
    crn = variant != SEIU
    out = SelectionResult(winner=0, stages=0, data_samples=0, replications=0, terminated=False)
    pairs = None if record in (None, "pairs", "designs") else [(i - 1, j - 1) for i, j in record]
    est = np.zeros(K)

    for n in range(1, stage_cap + 1):
        try:
            samples = [source.take(q, ks[q], stream(seed, replication, SHARED, n, DATA)) for q in range(model.Q)]
        except StreamExhaustedError as exc:
            out.stages = n - 1
            out.winner = int(np.flatnonzero(alive)[np.argmax(est[alive])]) + 1
            raise StreamExhaustedError(str(exc), partial=out) from exc
        theta = tracker.update(batch_data(samples, ks, maps).mean)
        ids = np.flatnonzero(alive)
        if n > hist.shape[1]:
            hist = np.concatenate([hist, np.zeros_like(hist)], axis=1)
        if crn:
            xi = model.sample_xi(theta, R, stream(seed, replication, SHARED, n, SIM))
            hist[ids, n - 1] = problem.evaluate(ids + 1, xi).mean(axis=1)
        else:
            for i in ids:
                xi = model.sample_xi(theta, R, stream(seed, replication, i + 1, n, SIM))
                hist[i, n - 1] = problem.evaluate([i + 1], xi)[0].mean()
        out.stages = n
        out.data_samples += sum(ks)
        out.replications += R * ids.shape[0]
        lo = n_discard(n, params.eta)
        est[ids] = hist[ids, lo:n].mean(axis=1)
        if n <= warmup:
            continue

        sub = np.ix_(ids, ids)
        if variant == SEIU:
            c = seiu_bounds(n, params)
            drop = _seiu_eliminate(est[ids], c[ids])
            C = c[:, None] + c[None, :]
        elif variant == HEURISTIC:
            C = bounds_heuristic(n, params.sigma_tilde, K, params.alpha)
            drop = _pair_eliminate(est[ids], C[sub])
        else:
            C = pairwise_bounds(n, params, include_iu=variant == PAIRWISE)
            drop = _pair_eliminate(est[ids], C[sub])

        if record is not None:
            _log(out.trajectory, n, ids, est, C, record, pairs, c if variant == SEIU else None)
        for i in ids[drop]:
            out.eliminated_at[int(i) + 1] = n
        alive[ids[drop]] = False
        if alive.sum() == 1:
            out.terminated = True
            break

    ids = np.flatnonzero(alive)
    out.winner = int(ids[np.argmax(est[ids])]) + 1
    return out


def _log(rows, n, ids, est, C, record, pairs, c_single):
    if record == "designs":
        for i in ids:
            bound = c_single[i] if c_single is not None else float("nan")
            rows.append((n, int(i) + 1, 0, float(est[i]), float(bound)))
        return
    alive = set(ids.tolist())
    todo = pairs if pairs is not None else [(i, j) for a, i in enumerate(ids) for j in ids[a + 1 :]]
    for i, j in todo:
        if i in alive and j in alive:
            rows.append((n, int(i) + 1, int(j) + 1, float(est[i] - est[j]), float(C[i, j])))
