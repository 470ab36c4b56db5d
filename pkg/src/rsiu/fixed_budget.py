"""Fixed-budget selection: OCBA and its input-uncertainty extension OCBAIU.

A joint budget ``T`` pays for real-world input data (``c_D[q]`` per observation
of source ``q``) and simulation replications (``c_S`` each).  The procedure takes
a pilot, estimates how sensitive every pairwise gap is to each input source,
sizes the data collection with a closed-form rule, and spends what is left on
sequential OCBA under the refined input estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import DATA, PILOT_SIM, SHARED, SIM, Problem, batch_data, family_mappings, stream
from .errors import InfeasibleBudgetError, NumericalError, ShapeError, TieError

SIGMA2_FLOOR = 1e-12
GAP_FLOOR = 1e-8


def lr_gradient(outputs, scores):
    """Likelihood-ratio estimate of the performance gradient.

    Args:
        outputs: ``(N,)`` outputs, or ``(K, N)`` for several designs sharing inputs.
        scores: ``(N, d)`` scores of the inputs that produced the outputs.

    Returns:
        ``(d,)`` or ``(K, d)`` sample means of output times score.
    """
    outputs = np.asarray(outputs, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    if outputs.shape[-1] != scores.shape[0]:
        raise ShapeError(f"{outputs.shape[-1]} outputs vs {scores.shape[0]} scores")
    if scores.shape[0] < 2:
        raise ShapeError("need at least two (output, score) pairs")
    return outputs @ scores / scores.shape[0]


def centered_lr_gradient(outputs, scores):
    """:func:`lr_gradient` applied to outputs minus their sample mean.

    The score has mean zero, so subtracting a constant changes only the noise.
    Under CRN the gradients of designs that differ by a constant then coincide
    exactly instead of differing by ``(C_i - C_j) * mean(score)``.
    """
    outputs = np.asarray(outputs, dtype=float)
    return lr_gradient(outputs - outputs.mean(axis=-1, keepdims=True), scores)


def psi_sq(grad_i, grad_j, cov):
    """Quadratic form of the gradient gap of two designs under one source's covariance."""
    gi = np.atleast_1d(np.asarray(grad_i, dtype=float))
    gj = np.atleast_1d(np.asarray(grad_j, dtype=float))
    if gi.shape != gj.shape:
        raise ShapeError(f"gradients of shapes {gi.shape} and {gj.shape}")
    g = gi - gj
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (g.shape[0], g.shape[0]):
        raise ShapeError(f"gradient of length {g.shape[0]} vs covariance {cov.shape}")
    return float(g @ cov @ g)


def ocba_weights(sigma, gaps, best):
    """Unnormalized OCBA allocation (reals) for designs with stds ``sigma``.

    ``gaps[i]`` is the gap between the best and design ``i`` (ignored at ``best``).
    Inferior designs get weight ``(sigma_i / gap_i)^2``; the best design gets
    ``sigma_b * sqrt(sum_i w_i^2 / sigma_i^2)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if sigma.shape != gaps.shape:
        raise ShapeError("sigma and gaps must have the same length")
    if np.any(sigma <= 0):
        raise ValueError("all standard deviations must be positive")
    others = np.arange(sigma.shape[0]) != best
    if np.any(gaps[others] <= 0):
        raise TieError("zero gap to the best design; break ties first")
    w = np.zeros_like(sigma)
    w[others] = (sigma[others] / gaps[others]) ** 2
    w[best] = sigma[best] * math.sqrt(np.sum(w[others] ** 2 / sigma[others] ** 2))
    return w


def round_to_total(x, total, floor=1):
    """Integer allocation close to ``x`` with every entry ``>= floor`` summing to ``total``.

    Entries below ``floor`` are raised to it; the rest of the total is shared in
    proportion to ``x`` by the largest-remainder method.
    """
    x = np.asarray(x, dtype=float)
    K = x.shape[0]
    if total < floor * K:
        raise InfeasibleBudgetError(f"total {total} cannot give {floor} to each of {K} entries")
    out = np.full(K, floor, dtype=np.int64)
    pinned = np.zeros(K, dtype=bool)
    # Water-filling: pin entries whose proportional share falls under the floor.
    while True:
        free = ~pinned
        budget = total - floor * pinned.sum()
        scale = x[free].sum()
        share = np.zeros(K)
        share[free] = budget * x[free] / scale if scale > 0 else budget / free.sum()
        low = free & (share < floor)
        if not low.any():
            break
        pinned |= low
    base = np.floor(share[free]).astype(np.int64)
    rest = budget - base.sum()
    order = np.argsort(-(share[free] - base), kind="stable")
    base[order[:rest]] += 1
    out[free] = base
    return out


def ocba_rule(sigma, gaps, best, budget):
    """Integer OCBA allocation of ``budget`` replications.

    Args:
        sigma: standard deviations per design (index 0-based).
        gaps: ``H_best - H_i`` per design.
        best: 0-based index of the current best design.
        budget: total number of replications, at least one per design.
    """
    sigma = np.asarray(sigma, dtype=float)
    if budget < sigma.shape[0]:
        raise InfeasibleBudgetError(f"budget {budget} is below one replication per design")
    return round_to_total(ocba_weights(sigma, gaps, best), int(budget))


def optimal_data_size(M, sigma, psi2, c_S, c_D):
    """Closed-form data sizes ``N_q`` given a simulation allocation (unrounded).

    Args:
        M: ``(K,)`` replications per design.
        sigma: ``(K,)`` output standard deviations.
        psi2: ``(K, Q)`` sensitivity of the gap between the best design and design
            ``i`` to source ``q`` (row of the best design is ignored).
        c_S: cost per replication.
        c_D: ``(Q,)`` cost per data observation.
    """
    M = np.asarray(M, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    psi2 = np.atleast_2d(np.asarray(psi2, dtype=float))
    c_D = np.atleast_1d(np.asarray(c_D, dtype=float))
    if psi2.shape != (M.shape[0], c_D.shape[0]):
        raise ShapeError(f"psi2 must be (K, Q) = ({M.shape[0]}, {c_D.shape[0]}), got {psi2.shape}")
    weight = (M**2 / sigma**2) @ psi2
    return np.sqrt(c_S / c_D * weight)


@dataclass
class AllocationPlan:
    """Budget split between data collection and simulation."""

    N: np.ndarray
    M: np.ndarray
    c_D: np.ndarray
    c_S: float
    T: float
    N_real: np.ndarray | None = None
    M_real: np.ndarray | None = None
    residual: float = 0.0

    @property
    def data_spend(self):
        return float(np.dot(self.c_D, self.N))

    @property
    def sim_spend(self):
        return float(self.c_S * np.sum(self.M))

    @property
    def spend(self):
        return self.data_spend + self.sim_spend

    @property
    def rho(self):
        return np.asarray(self.N, dtype=float) / self.T

    @property
    def pi(self):
        return np.asarray(self.M, dtype=float) / self.T

    @property
    def data_fraction(self):
        """Share of the budget spent on each source's data (``c_D[q] N_q / T``)."""
        return self.c_D * np.asarray(self.N, dtype=float) / self.T


def solve_allocation(H, sigma2, psi2, c_D, c_S, T):
    """Joint real-valued solution of the data-size rule and the OCBA rule.

    The OCBA proportions depend only on gaps and variances, and the data-size
    rule is linear in ``M``.  Writing ``M = B * m`` with ``sum(m) = 1`` turns the
    budget constraint into one linear equation in the simulation budget ``B``,
    so the fixed point is obtained directly instead of by alternating the rules
    (which diverges whenever data spend outweighs simulation spend).

    Returns:
        AllocationPlan holding real ``N``/``M`` and the residual of the data-size
        rule at the returned point.
    """
    H = np.asarray(H, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(sigma2, dtype=float), SIGMA2_FLOOR))
    c_D = np.atleast_1d(np.asarray(c_D, dtype=float))
    b = int(np.argmax(H))
    gaps = floor_gaps(H[b] - H, b, H)
    m = ocba_weights(sigma, gaps, b)
    m = m / m.sum()
    a = optimal_data_size(m, sigma, psi2, c_S, c_D)
    B = T / (c_S + float(np.dot(c_D, a)))
    if not np.isfinite(B) or B <= 0:
        raise NumericalError("allocation fixed point is not finite")
    M = m * B
    N = optimal_data_size(M, sigma, psi2, c_S, c_D)
    budget_gap = abs(float(np.dot(c_D, N)) + c_S * float(M.sum()) - T) / T
    residual = max(float(np.max(np.abs(N - a * B), initial=0.0)), budget_gap)
    return AllocationPlan(N=N, M=M, c_D=c_D, c_S=c_S, T=T, N_real=N, M_real=M, residual=residual)


def floor_gaps(gaps, best, H):
    """Replace non-positive gaps of inferior designs by ``1e-8 * max|H|``."""
    gaps = np.array(gaps, dtype=float)
    eps = GAP_FLOOR * max(float(np.max(np.abs(H))), 1e-300)
    mask = np.arange(gaps.shape[0]) != best
    gaps[mask] = np.maximum(gaps[mask], eps)
    return gaps


# ---------------------------------------------------------------------------
# Sequential OCBA


class _Supply:
    """Buffered i.i.d. outputs of one design drawn from its own stream."""

    def __init__(self, problem, design, theta, rng, chunk=256):
        self.problem, self.design, self.theta, self.rng = problem, design, theta, rng
        self.chunk = chunk
        self.buf = np.empty(0)

    def take(self, n):
        while self.buf.shape[0] < n:
            xi = self.problem.model.sample_xi(self.theta, self.chunk, self.rng)
            self.buf = np.concatenate([self.buf, self.problem.evaluate([self.design], xi)[0]])
        out, self.buf = self.buf[:n], self.buf[n:]
        return out


@dataclass
class OcbaResult:
    winner: int
    M: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    replications: int
    history: list = field(default_factory=list)


def run_ocba(problem: Problem, theta, budget, M0, delta, seed=0, replication=0, initial=None, stage=0):
    """Sequential OCBA under a fixed input parameter.

    Args:
        budget: total replications, including any ``initial`` outputs.
        M0: initial replications per design (topped up when ``initial`` is shorter).
        delta: replications added per iteration.
        initial: optional list of per-design output arrays reused as the first
            observations.
        stage: stream stage index, so OCBA runs inside OCBAIU use fresh streams.

    Returns:
        OcbaResult; ties in the final means go to the lowest design id.
    """
    K = problem.K
    theta = problem.model.check(theta)
    M0 = max(int(M0), 2)
    start = [np.asarray(initial[i], dtype=float) if initial is not None else np.empty(0) for i in range(K)]
    need = [max(M0 - s.shape[0], 0) for s in start]
    if sum(s.shape[0] for s in start) + sum(need) > budget:
        raise InfeasibleBudgetError(f"budget {budget} below the initial {K} x {M0} replications")
    supply = [_Supply(problem, i + 1, theta, stream(seed, replication, i + 1, stage, SIM)) for i in range(K)]
    s1 = np.zeros(K)
    s2 = np.zeros(K)
    M = np.zeros(K, dtype=np.int64)
    for i in range(K):
        x = np.concatenate([start[i], supply[i].take(need[i])])
        s1[i], s2[i], M[i] = x.sum(), (x * x).sum(), x.shape[0]
    used = int(M.sum())
    while used < budget:
        step = min(int(delta), budget - used)
        means = s1 / M
        var = np.maximum((s2 - M * means**2) / (M - 1), SIGMA2_FLOOR)
        b = int(np.argmax(means))
        gaps = floor_gaps(means[b] - means, b, means)
        w = ocba_weights(np.sqrt(var), gaps, b)
        target = w / w.sum() * (used + step)
        add = _fill_deficits(target - M, step)
        for i in np.nonzero(add)[0]:
            x = supply[i].take(int(add[i]))
            s1[i] += x.sum()
            s2[i] += (x * x).sum()
            M[i] += add[i]
        used += step
    means = s1 / M
    var = np.maximum((s2 - M * means**2) / np.maximum(M - 1, 1), 0.0)
    return OcbaResult(int(np.argmax(means)) + 1, M, means, var, used)


def _fill_deficits(deficit, step):
    """Share ``step`` replications among designs with positive deficit."""
    pos = np.maximum(deficit, 0.0)
    if pos.sum() <= 0:
        pos = np.ones_like(pos)
    share = pos / pos.sum() * step
    add = np.floor(share).astype(np.int64)
    rest = step - add.sum()
    order = np.argsort(-(share - add), kind="stable")
    add[order[:rest]] += 1
    return add


# ---------------------------------------------------------------------------
# OCBAIU


@dataclass
class OcbaiuResult:
    winner: int
    plan: AllocationPlan
    theta_hat: np.ndarray
    requested_N: np.ndarray
    ocba: OcbaResult | None = None
    capped: bool = False


def _pilot_stats(problem, theta_hat, n0, seed, replication):
    """CRN pilot: means, variances and LR gradients of every design under theta_hat."""
    model = problem.model
    xi = model.sample_xi(theta_hat, n0, stream(seed, replication, SHARED, 0, PILOT_SIM))
    out = problem.evaluate(range(1, problem.K + 1), xi)
    scores = model.score(xi, theta_hat)
    return out, out.mean(axis=1), out.var(axis=1, ddof=1), centered_lr_gradient(out, scores)


def sensitivity(grad, best, model, theta):
    """``(K, Q)`` matrix of ``psi^2`` between the best design and every design."""
    K = grad.shape[0]
    slices = model.theta_slices()
    psi2 = np.zeros((K, model.Q))
    for q, sl in enumerate(slices):
        cov = model.block_covariance(theta, q)
        for i in range(K):
            psi2[i, q] = psi_sq(grad[best, sl], grad[i, sl], cov)
    return psi2


def _collect(model, source, counts, seed, replication, start):
    """Draw ``counts[q]`` observations of each source from stream offset ``start``."""
    return [
        source.take(q, int(n), stream(seed, replication, SHARED, start + q, DATA)) if n > 0 else np.empty(0)
        for q, n in enumerate(counts)
    ]


def run_ocbaiu(
    problem: Problem,
    source,
    T,
    c_D,
    c_S=1.0,
    N0=None,
    rho0=None,
    M0=None,
    pi0=None,
    delta=20,
    oracle=None,
    seed=0,
    replication=0,
    reuse_pilot=True,
):
    """Two-stage OCBAIU run.

    Stage A collects ``N0`` observations per source, runs ``N0`` CRN pilot
    replications per design, estimates performances, variances and gradients,
    solves the data-size / OCBA fixed point for the whole budget and collects the
    extra data.  Stage B runs OCBA under the final input estimate with whatever
    budget remains, starting from the pilot outputs when ``reuse_pilot``.

    With ``oracle`` (an :class:`~rsiu.testbeds.OracleStats`), stage A uses the
    true statistics instead of pilot estimates and no pilot is run.

    Returns:
        OcbaiuResult with the selected design and the realized plan.
    """
    model = problem.model
    K, Q = problem.K, model.Q
    c_D = np.broadcast_to(np.asarray(c_D, dtype=float), (Q,)).copy()
    if N0 is None:
        N0 = int(math.floor(rho0 * T)) if rho0 is not None else 2
    N0 = int(N0) if oracle is None else 0
    if M0 is None:
        M0 = int(math.floor(pi0 * T)) if pi0 is not None else 2
    M0 = max(int(M0), 2)
    maps = family_mappings(model)
    pilot_out = None

    if oracle is None:
        if N0 < 2:
            raise InfeasibleBudgetError("the pilot needs at least two observations per source")
        data = _collect(model, source, [N0] * Q, seed, replication, 0)
        theta_hat = batch_data(data, [N0] * Q, maps).mean
        pilot_out, H, var, grad = _pilot_stats(problem, theta_hat, N0, seed, replication)
        theta_ref = theta_hat
    else:
        data = [np.empty(0)] * Q
        H, var, grad = oracle.H, oracle.var, oracle.grad
        theta_ref = oracle.theta

    b = int(np.argmax(H))
    psi2 = sensitivity(np.asarray(grad, dtype=float), b, model, theta_ref)
    plan = solve_allocation(H, var, psi2, c_D, c_S, T)
    requested = np.rint(plan.N_real).astype(np.int64)
    N = np.maximum(requested, max(N0, 1))

    # Simulation effort that must remain affordable after data collection.
    pilot_sims = K * N0
    reserved = K * max(M0, N0 if reuse_pilot else 0) + (0 if reuse_pilot else pilot_sims)
    affordable = T - c_S * reserved
    capped = False
    if float(np.dot(c_D, N)) > affordable:
        warnings.warn("requested data exceeds the budget; capping data collection", stacklevel=2)
        capped = True
        floor_n = max(N0, 1)
        spare = affordable - float(np.dot(c_D, np.full(Q, floor_n)))
        if spare < 0:
            raise InfeasibleBudgetError("budget cannot cover the minimum data and simulation effort")
        want = (N - floor_n) * c_D
        scale = spare / want.sum() if want.sum() > 0 else 0.0
        N = floor_n + np.floor((N - floor_n) * scale).astype(np.int64)

    extra = N - np.array([d.shape[0] for d in data])
    more = _collect(model, source, np.maximum(extra, 0), seed, replication, Q)
    data = [np.concatenate([d, x]) for d, x in zip(data, more)]
    theta_N = batch_data(data, [d.shape[0] for d in data], maps).mean

    budget = int(math.floor((T - float(np.dot(c_D, N))) / c_S))
    initial = None
    if pilot_out is not None:
        if reuse_pilot:
            initial = list(pilot_out)
        else:
            budget -= pilot_sims
    ocba = run_ocba(problem, theta_N, budget, M0, delta, seed, replication, initial=initial, stage=1)
    M = ocba.M + (0 if reuse_pilot or pilot_out is None else N0)
    realized = AllocationPlan(
        N=N, M=M, c_D=c_D, c_S=c_S, T=T, N_real=plan.N_real, M_real=plan.M_real, residual=plan.residual
    )
    return OcbaiuResult(ocba.winner, realized, theta_N, requested, ocba, capped)


def run_fixed_split(problem: Problem, source, T, c_D, c_S, N, sim_init_fraction=0.2, delta=20, seed=0, replication=0):
    """Spend ``c_D * N`` on data, then OCBA with the rest (grid-search baseline).

    ``sim_init_fraction`` of the simulation budget is split evenly across designs as
    OCBA's initial replications.
    """
    model = problem.model
    c_D = np.broadcast_to(np.asarray(c_D, dtype=float), (model.Q,)).copy()
    N = np.broadcast_to(np.asarray(N, dtype=np.int64), (model.Q,)).copy()
    budget = int(math.floor((T - float(np.dot(c_D, N))) / c_S))
    if np.any(N < 1) or budget < 2 * problem.K:
        raise InfeasibleBudgetError("data share leaves no room for simulation")
    data = _collect(model, source, N, seed, replication, model.Q)
    theta_N = batch_data(data, list(N), family_mappings(model)).mean
    M0 = max(int(math.floor(sim_init_fraction * budget / problem.K)), 2)
    ocba = run_ocba(problem, theta_N, budget, M0, delta, seed, replication, stage=1)
    plan = AllocationPlan(N=N, M=ocba.M, c_D=c_D, c_S=c_S, T=T)
    return OcbaiuResult(ocba.winner, plan, theta_N, N, ocba)
