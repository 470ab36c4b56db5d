"""Domain model: parametric input blocks, designs, simulators and RNG streams.

All randomness is routed through :class:`RngStream`, a counter-based address
``(seed, kind, replication, design, stage)`` that is turned into an independent
Philox generator.  Two calls with the same address produce the same draws, which
is what makes replications reproducible regardless of the order (or process) in
which they are executed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError, StreamExhaustedError

# Stream kinds; part of the counter address so data, pilot and simulation draws never collide.
DATA = 0
SIM = 1
PILOT_DATA = 2
PILOT_SIM = 3
ORACLE = 4

# Design index used for draws shared by every design (CRN and input data).
SHARED = 0


@dataclass(frozen=True)
class RngStream:
    seed: int
    replication: int = 0
    design: int = SHARED
    stage: int = 0
    kind: int = SIM

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            self.seed & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(self.kind, self.replication, self.design, self.stage),
        )
        return np.random.Generator(np.random.Philox(ss))


def stream(seed, replication=0, design=SHARED, stage=0, kind=SIM) -> np.random.Generator:
    """Shorthand for ``RngStream(...).generator()``."""
    return RngStream(seed, replication, design, stage, kind).generator()


# ---------------------------------------------------------------------------
# Parametric families.  Each family describes a scalar observation x ~ P_theta
# with a d_q-dimensional parameter.


class ExponentialMean:
    """Exponential distribution parametrized by its mean."""

    dim = 1
    name = "exponential"

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (1,) or not np.all(np.isfinite(theta)) or theta[0] <= 0:
            raise DomainError(f"exponential mean must be a positive scalar, got {theta!r}")
        return theta

    def sample(self, theta, size, rng):
        return rng.exponential(theta[0], size=size)

    def mapping(self, x):
        return np.asarray(x, dtype=float)[..., None]

    def score(self, x, theta):
        x = np.asarray(x, dtype=float)
        return ((x - theta[0]) / theta[0] ** 2)[..., None]

    def covariance(self, theta):
        return np.array([[theta[0] ** 2]])


@dataclass(frozen=True)
class NormalMean:
    """Normal distribution with unknown mean and known standard deviation."""

    sd: float = 1.0
    dim = 1
    name = "normal"

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (1,) or not np.all(np.isfinite(theta)):
            raise DomainError(f"normal mean must be a finite scalar, got {theta!r}")
        return theta

    def sample(self, theta, size, rng):
        return theta[0] + self.sd * rng.standard_normal(size)

    def mapping(self, x):
        return np.asarray(x, dtype=float)[..., None]

    def score(self, x, theta):
        return ((np.asarray(x, dtype=float) - theta[0]) / self.sd**2)[..., None]

    def covariance(self, theta):
        return np.array([[self.sd**2]])


@dataclass(frozen=True)
class Block:
    """One independent input source.

    Attributes:
        family: parametric family of a single observation.
        size: number of i.i.d. observations of this source inside one simulation
            input vector (``m_q``).
        name: label used in reports.
    """

    family: object
    size: int = 1
    name: str = ""


@dataclass(frozen=True)
class InputModel:
    """Product-form input model made of independent :class:`Block` s.

    The simulation input ``xi`` is the concatenation of ``block.size`` observations
    of every block, in block order, followed by ``noise`` standard normal
    coordinates that carry no unknown parameter.  The parameter vector ``theta``
    concatenates the block parameters in block order.
    """

    blocks: tuple
    noise: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ShapeError("input model needs at least one block")

    @property
    def Q(self):
        return len(self.blocks)

    @property
    def d(self):
        return sum(b.family.dim for b in self.blocks)

    @property
    def m(self):
        return sum(b.size for b in self.blocks) + self.noise

    def theta_slices(self):
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.family.dim))
            start += b.family.dim
        return out

    def xi_slices(self):
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.size))
            start += b.size
        return out

    def check(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.d,):
            raise ShapeError(f"theta must have length {self.d}, got {theta.shape}")
        for b, sl in zip(self.blocks, self.theta_slices()):
            b.family.check(theta[sl])
        return theta

    def sample_xi(self, theta, n, rng):
        """Draw ``n`` simulation input vectors; returns an ``(n, m)`` array."""
        theta = self.check(theta)
        parts = [
            b.family.sample(theta[sl], (n, b.size), rng)
            for b, sl in zip(self.blocks, self.theta_slices())
        ]
        if self.noise:
            parts.append(rng.standard_normal((n, self.noise)))
        return np.concatenate(parts, axis=1)

    def sample_data(self, theta, q, k, rng):
        """Draw ``k`` raw data observations from block ``q``."""
        theta = self.check(theta)
        sl = self.theta_slices()[q]
        return self.blocks[q].family.sample(theta[sl], k, rng)

    def score(self, xi, theta):
        """Likelihood-ratio score of each input vector; ``(n, d)`` array.

        Block ``q`` contributes the sum of per-observation scores over its
        ``size`` observations.
        """
        theta = self.check(theta)
        xi = np.asarray(xi, dtype=float)
        if xi.ndim != 2 or xi.shape[1] != self.m:
            raise ShapeError(f"xi must be (n, {self.m}), got {xi.shape}")
        parts = []
        for b, ts, xs in zip(self.blocks, self.theta_slices(), self.xi_slices()):
            parts.append(b.family.score(xi[:, xs], theta[ts]).sum(axis=1))
        return np.concatenate(parts, axis=1)

    def covariance(self, theta):
        """Block-diagonal asymptotic covariance of the per-observation estimator."""
        theta = self.check(theta)
        cov = np.zeros((self.d, self.d))
        for b, sl in zip(self.blocks, self.theta_slices()):
            cov[sl, sl] = b.family.covariance(theta[sl])
        return cov

    def block_covariance(self, theta, q):
        theta = self.check(theta)
        sl = self.theta_slices()[q]
        return self.blocks[q].family.covariance(theta[sl])


@dataclass(frozen=True)
class Design:
    """A candidate system; ``h`` maps an ``(n, m)`` input array to ``n`` outputs."""

    id: int
    h: Callable[[np.ndarray], np.ndarray]
    label: str = ""


@dataclass(frozen=True)
class Problem:
    """K designs sharing one input model.

    ``evaluate`` may be overridden with a vectorized evaluator taking
    ``(design_ids, xi)`` and returning a ``(len(design_ids), n)`` array.
    """

    model: InputModel
    designs: tuple
    name: str = ""
    evaluator: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "designs", tuple(self.designs))
        if len(self.designs) < 2:
            raise ShapeError("need at least two designs")
        ids = [d.id for d in self.designs]
        if ids != list(range(1, len(ids) + 1)):
            raise ShapeError("design ids must be 1..K in order")

    @property
    def K(self):
        return len(self.designs)

    def evaluate(self, ids, xi):
        ids = list(ids)
        if self.evaluator is not None:
            return np.asarray(self.evaluator(ids, xi), dtype=float)
        return np.stack([np.asarray(self.designs[i - 1].h(xi), dtype=float) for i in ids])


def simulate(problem: Problem, design: int, theta, R: int, rng) -> np.ndarray:
    """Run ``R`` independent replications of one design under ``P_theta``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    xi = problem.model.sample_xi(theta, R, rng)
    return problem.evaluate([design], xi)[0]


def simulate_crn(problem: Problem, designs, theta, R: int, rng):
    """Simulate several designs on the same ``R`` input draws.

    Returns:
        (xi, outputs) with ``xi`` of shape ``(R, m)`` and outputs ``(len(designs), R)``.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    xi = problem.model.sample_xi(theta, R, rng)
    return xi, problem.evaluate(designs, xi)


# ---------------------------------------------------------------------------
# Input data


@dataclass(frozen=True)
class DataBatch:
    """Raw samples of one stage together with their batched mean ``D_n``."""

    samples: tuple
    sizes: tuple
    mean: np.ndarray


def batch_data(samples: Sequence, sizes: Sequence[int], mappings=None) -> DataBatch:
    """Average ``k_q`` mapped samples per block into one d-dimensional observation.

    Args:
        samples: one 1-d array of raw observations per block.
        sizes: expected number of observations ``k_q`` per block.
        mappings: optional per-block functions ``G_q`` returning ``(k, d_q)``;
            identity by default.
    """
    if len(samples) != len(sizes):
        raise ShapeError("one sample list per block is required")
    means = []
    for q, (x, k) in enumerate(zip(samples, sizes)):
        x = np.asarray(x, dtype=float)
        if k < 1 or x.shape[0] != k:
            raise ShapeError(f"block {q}: expected {k} samples, got {x.shape[0]}")
        g = x[:, None] if mappings is None or mappings[q] is None else mappings[q](x)
        means.append(np.asarray(g, dtype=float).reshape(k, -1).mean(axis=0))
    return DataBatch(
        tuple(np.asarray(x, dtype=float) for x in samples),
        tuple(int(k) for k in sizes),
        np.concatenate(means),
    )


class ParametricSource:
    """Streams i.i.d. data from the true input distribution (testbed side)."""

    def __init__(self, model: InputModel, theta):
        self.model = model
        self.theta = model.check(theta)

    def take(self, q, k, rng):
        return self.model.sample_data(self.theta, q, k, rng)


class RecordedSource:
    """Serves pre-recorded observations per block, in order."""

    def __init__(self, data):
        self.data = [np.asarray(x, dtype=float) for x in data]
        self.pos = [0] * len(self.data)

    def remaining(self, q):
        return self.data[q].shape[0] - self.pos[q]

    def take(self, q, k, rng=None):
        if self.remaining(q) < k:
            raise StreamExhaustedError(f"block {q}: {k} samples requested, {self.remaining(q)} left")
        out = self.data[q][self.pos[q] : self.pos[q] + k]
        self.pos[q] += k
        return out


def family_mappings(model: InputModel):
    return [b.family.mapping for b in model.blocks]
