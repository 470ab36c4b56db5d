"""Replication engine for the selection experiments.

Every replication draws from its own counter-addressed streams, so results do not
depend on how replications are spread over worker processes.  Outputs are plain
CSV files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import fixed_budget as fb
from . import fixed_confidence as fc
from .core import ParametricSource
from .errors import ConfigError, InfeasibleBudgetError
from .testbeds import REGISTRY, get_testbed

PROCEDURES = fc.VARIANTS + ("OCBAIU",)


def _parse_list(text, cast):
    text = text.strip()
    if text.startswith("(") or text.startswith("["):
        text = text[1:-1]
    return tuple(cast(x) for x in text.split(",") if x.strip())


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of an experiment; serializes to flat ``key = value`` text.

    ``batch`` is the per-stage batch size used for both the data (per source)
    and the simulation replications (per design).  ``N0`` of ``None`` selects the
    budget-dependent pilot size ``20 + 0.002 (T - 2000)``.
    """

    testbed: str = "inv-single"
    procedure: str = "HEURISTIC"
    alpha: float = 0.05
    eta: float = 0.2
    n0: int = 1
    batch: int = 1000
    reps: int = 200
    stage_cap: int = 10_000
    seed: int = 20190101
    out: str = ""
    oracle: bool = False
    pilot_data: int = 1000
    pilot_sims: int = 10_000
    T: tuple = (4000,)
    cd: tuple = (2.0,)
    cs: float = 1.0
    N0: int | None = None
    rho0: float | None = None
    pi0: float | None = None
    m0: int | None = None
    delta: int = 20
    sim_init_fraction: float = 0.2
    fractions: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    batches: tuple = (100, 1000, 10_000)
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.testbed not in REGISTRY:
            raise ConfigError(f"unknown testbed {self.testbed!r}")
        if self.procedure not in PROCEDURES:
            raise ConfigError(f"unknown procedure {self.procedure!r}; expected one of {PROCEDURES}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.eta < 1:
            raise ConfigError("eta must lie in (0, 1)")
        if self.n0 < 1 or self.batch < 1 or self.stage_cap <= self.n0:
            raise ConfigError("need n0 >= 1, batch >= 1 and stage_cap > n0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(c <= 0 for c in self.cd) or self.cs <= 0:
            raise ConfigError("costs must be positive")

    # -- text round trip -------------------------------------------------

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text, **overrides):
        values = {}
        for num, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {num}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values):
        types = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            default = types[key].default
            try:
                kwargs[key] = _coerce(key, value, default)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path, **overrides):
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), **overrides)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FLOAT_KEYS = {"alpha", "eta", "cs", "rho0", "pi0", "sim_init_fraction"}
_INT_KEYS = {"n0", "batch", "reps", "stage_cap", "seed", "pilot_data", "pilot_sims", "N0", "m0", "delta", "workers"}


def _coerce(key, value, default):
    if not isinstance(value, str):
        return tuple(value) if isinstance(value, list) else value
    if key in ("T", "batches"):
        return _parse_list(value, int)
    if key in ("cd", "fractions"):
        return _parse_list(value, float)
    if key == "oracle":
        return _parse_bool(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _INT_KEYS:
        return int(value)
    return value


# ---------------------------------------------------------------------------
# Parallel map


def map_replications(fn, n, workers=1):
    """``[fn(0), ..., fn(n-1)]`` evaluated serially or in a process pool."""
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    chunk = max(1, n // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), chunksize=chunk))


# ---------------------------------------------------------------------------
# Summaries


@dataclass
class Summary:
    """Aggregate of one experiment cell."""

    label: dict
    n: int
    correct: int
    mean_stages: float = float("nan")
    se_stages: float = float("nan")
    geq: bool = False
    runtime: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def pcs(self):
        return self.correct / self.n

    @property
    def se(self):
        p = self.pcs
        return math.sqrt(p * (1 - p) / self.n)

    def row(self):
        out = dict(self.label)
        out.update(
            reps=self.n,
            pcs=self.pcs,
            pcs_se=self.se,
            mean_stages=self.mean_stages,
            stages_se=self.se_stages,
            geq=int(self.geq),
        )
        out.update(self.extra)
        return out


def summarize(records, label, runtime=0.0, **extra):
    correct = sum(int(r["correct"]) for r in records)
    s = Summary(label, len(records), correct, runtime=runtime, extra=extra)
    if records and "stages" in records[0]:
        st = np.array([r["stages"] for r in records], dtype=float)
        s.mean_stages = float(st.mean())
        s.se_stages = float(st.std(ddof=1) / math.sqrt(st.size)) if st.size > 1 else 0.0
        s.geq = any(not r["terminated"] for r in records)
    return s


def pcs_interval(correct, n):
    p = correct / n
    return p, math.sqrt(p * (1 - p) / n)


# ---------------------------------------------------------------------------
# Trials


def bound_params(config: ExperimentConfig, testbed, replication):
    """Plug-in (pilot-based) or oracle bound constants for one replication."""
    problem = testbed.problem
    if config.oracle:
        return fc.oracle_params(testbed.oracle(), problem, config.alpha, config.eta, config.n0, config.batch, config.batch)
    source = ParametricSource(problem.model, testbed.theta)
    pilot = fc.run_pilot(problem, source, config.pilot_data, config.pilot_sims, config.seed, replication)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fc.plug_in_params(pilot, problem, config.alpha, config.eta, config.n0, config.batch, config.batch)


def fixed_confidence_trial(config: ExperimentConfig, replication, record=None, params=None):
    tb = get_testbed(config.testbed)
    params = bound_params(config, tb, replication) if params is None else params
    source = ParametricSource(tb.problem.model, tb.theta)
    res = fc.run_fixed_confidence(
        tb.problem,
        config.procedure,
        params,
        source,
        k=config.batch,
        R=config.batch,
        stage_cap=config.stage_cap,
        seed=config.seed,
        replication=replication,
        record=record,
    )
    row = {
        "replication": replication,
        "winner": res.winner,
        "correct": int(res.winner == tb.best),
        "stages": res.stages,
        "terminated": int(res.terminated),
        "data": res.data_samples,
        "sims": res.replications,
    }
    if record is not None:
        row["trajectory"] = res.trajectory
    return row


def pilot_size(T):
    return int(round(20 + 0.002 * (T - 2000)))


def ocbaiu_trial(config: ExperimentConfig, T, replication, oracle=None):
    tb = get_testbed(config.testbed)
    source = ParametricSource(tb.problem.model, tb.theta)
    N0 = config.N0
    if N0 is None and config.rho0 is None:
        N0 = pilot_size(T)
    M0 = config.m0
    if M0 is None and config.pi0 is None:
        M0 = N0 if N0 is not None else 2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fb.run_ocbaiu(
            tb.problem,
            source,
            T,
            config.cd,
            config.cs,
            N0=N0,
            rho0=config.rho0,
            M0=M0,
            pi0=config.pi0,
            delta=config.delta,
            oracle=oracle,
            seed=config.seed,
            replication=replication,
        )
    return _budget_row(tb, T, replication, res)


def fixed_split_trial(config: ExperimentConfig, T, N, replication):
    tb = get_testbed(config.testbed)
    source = ParametricSource(tb.problem.model, tb.theta)
    res = fb.run_fixed_split(
        tb.problem, source, T, config.cd, config.cs, N, config.sim_init_fraction, config.delta, config.seed, replication
    )
    return _budget_row(tb, T, replication, res)


def _budget_row(tb, T, replication, res):
    plan = res.plan
    return {
        "replication": replication,
        "T": T,
        "N": ";".join(str(int(x)) for x in plan.N),
        "data_fraction": float(plan.data_spend / T),
        "sims": int(np.sum(plan.M)),
        "spend": float(plan.spend),
        "winner": res.winner,
        "correct": int(res.winner == tb.best),
    }


def _oracle_for(config):
    return get_testbed(config.testbed).oracle() if config.oracle else None


# ---------------------------------------------------------------------------
# Experiments


def run_fixed_confidence_experiment(config: ExperimentConfig):
    """Per-replication records and their summary for one fixed-confidence cell."""
    start = time.perf_counter()
    params = None
    if config.oracle:
        tb = get_testbed(config.testbed)
        params = bound_params(config, tb, 0)
    fn = partial(_fc_worker, config, params)
    records = map_replications(fn, config.reps, config.workers)
    label = {"testbed": config.testbed, "procedure": config.procedure, "batch": config.batch}
    return records, summarize(records, label, time.perf_counter() - start)


def _fc_worker(config, params, replication):
    return fixed_confidence_trial(config, replication, params=params)


def run_fixed_budget_experiment(config: ExperimentConfig):
    """OCBAIU records and one summary per budget in ``config.T``."""
    oracle = _oracle_for(config)
    records, summaries = [], []
    for T in config.T:
        start = time.perf_counter()
        rows = map_replications(partial(_ocbaiu_worker, config, T, oracle), config.reps, config.workers)
        records.extend(rows)
        frac = float(np.mean([r["data_fraction"] for r in rows]))
        summaries.append(
            summarize(rows, {"testbed": config.testbed, "procedure": "OCBAIU", "T": T}, time.perf_counter() - start,
                      data_fraction=frac)
        )
    return records, summaries


def _ocbaiu_worker(config, T, oracle, replication):
    return ocbaiu_trial(config, T, replication, oracle)


def _fs_worker(config, T, N, replication):
    return fixed_split_trial(config, T, N, replication)


def estimate_pcs(config: ExperimentConfig):
    """Summaries for the configured procedure (one per budget for OCBAIU)."""
    if config.procedure == "OCBAIU":
        return run_fixed_budget_experiment(config)[1]
    return [run_fixed_confidence_experiment(config)[1]]


def table_expected_stages(config: ExperimentConfig, batches=None, procedures=(fc.SEIU, fc.PAIRWISE, fc.HEURISTIC), caps=None):
    """Mean stages for every (batch size, procedure) cell.

    ``caps`` optionally maps procedure names to stage caps that override
    ``config.stage_cap``; capped cells carry ``geq = True``.
    """
    out = []
    for batch in batches or config.batches:
        for proc in procedures:
            cap = (caps or {}).get(proc, config.stage_cap)
            cell = config.replace(batch=batch, procedure=proc, stage_cap=cap)
            out.append(run_fixed_confidence_experiment(cell)[1])
    return out


def data_split(config: ExperimentConfig, T, fraction):
    """Per-source data counts that spend ``fraction * T`` on data in equal counts."""
    total = float(np.sum(config.cd))
    return int(math.floor(fraction * T / total))


def grid_fraction(config: ExperimentConfig, T=None):
    """PCS of the fixed data-fraction grid plus OCBAIU's computed fraction.

    The OCBAIU row (``marked = 1``) re-runs the grid baseline at the data size
    OCBAIU's plan picks (from oracle statistics when ``config.oracle``, else from
    the first replication's pilot), so both use identical second stages.
    """
    T = config.T[0] if T is None else T
    rows = []
    for f in config.fractions:
        N = data_split(config, T, f)
        start = time.perf_counter()
        try:
            recs = map_replications(partial(_fs_worker, config, T, N), config.reps, config.workers)
        except InfeasibleBudgetError:
            warnings.warn(f"fraction {f} leaves no simulation budget; skipped", stacklevel=2)
            continue
        rows.append(summarize(recs, {"T": T, "fraction": f, "marked": 0}, time.perf_counter() - start, N=N))
    plan_N = ocbaiu_data_size(config, T)
    start = time.perf_counter()
    recs = map_replications(partial(_fs_worker, config, T, plan_N), config.reps, config.workers)
    frac = float(np.dot(np.broadcast_to(config.cd, (len(plan_N),)), plan_N) / T)
    rows.append(summarize(recs, {"T": T, "fraction": round(frac, 6), "marked": 1}, time.perf_counter() - start,
                          N=";".join(str(int(x)) for x in plan_N)))
    return rows


def ocbaiu_data_size(config: ExperimentConfig, T):
    """Data counts OCBAIU's plan selects for budget ``T``."""
    oracle = _oracle_for(config)
    if oracle is not None:
        tb = get_testbed(config.testbed)
        b = int(np.argmax(oracle.H))
        psi2 = fb.sensitivity(np.asarray(oracle.grad), b, tb.problem.model, oracle.theta)
        plan = fb.solve_allocation(oracle.H, oracle.var, psi2, config.cd, config.cs, T)
        return np.maximum(np.rint(plan.N_real).astype(np.int64), 1)
    row = ocbaiu_trial(config, T, 0)
    return np.array([int(x) for x in row["N"].split(";")])


def budget_fractions(config: ExperimentConfig, T=None):
    """Data rates ``N_q / T`` of OCBAIU's oracle plan, before rounding."""
    T = config.T[0] if T is None else T
    tb = get_testbed(config.testbed)
    oracle = tb.oracle()
    b = int(np.argmax(oracle.H))
    psi2 = fb.sensitivity(np.asarray(oracle.grad), b, tb.problem.model, oracle.theta)
    plan = fb.solve_allocation(oracle.H, oracle.var, psi2, config.cd, config.cs, T)
    return np.asarray(plan.N_real) / T


def data_mix(config: ExperimentConfig, T=None):
    """Share of the collected observations that each data source receives."""
    rho = budget_fractions(config, T)
    return rho / rho.sum()


# ---------------------------------------------------------------------------
# Continuation regions


REGION_PAIRS = ((4, 5), (2, 3))


def region_trajectories(config: ExperimentConfig, pairs=REGION_PAIRS, variants=(fc.SEIU, fc.PAIRWISE, fc.HEURISTIC, fc.NOIU_BASELINE), replication=0):
    """Trajectory logs of every variant on one replication with shared data."""
    tb = get_testbed(config.testbed)
    params = bound_params(config, tb, replication)
    logs = {}
    for v in variants:
        row = fixed_confidence_trial(config.replace(procedure=v), replication, record=list(pairs), params=params)
        logs[v] = row["trajectory"]
    return logs


def emit_region_plot_data(logs, path=None):
    """Long-format rows ``(variant, pair, stage, series, value)``.

    ``series`` is ``estimate``, ``upper`` or ``lower``; bounds are ``+/- c``.
    Writes CSV to ``path`` when given and returns the text.
    """
    rows = []
    for variant, log in logs.items():
        for stage, i, j, est, bound in log:
            pair = f"{i}-{j}"
            rows.append((variant, pair, stage, "estimate", est))
            rows.append((variant, pair, stage, "upper", bound))
            rows.append((variant, pair, stage, "lower", -bound))
    if not rows:
        raise ValueError("no trajectory rows to emit")
    text = to_csv(rows, ("variant", "pair", "stage", "series", "value"))
    if path:
        write_text(path, text)
    return text


# ---------------------------------------------------------------------------
# CSV


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def to_csv(rows, header=None):
    """Serialize dict rows (header from the first row) or tuples with ``header``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if rows and isinstance(rows[0], dict):
        header = header or list(rows[0].keys())
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in header])
    else:
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def summary_csv(summaries):
    return to_csv([s.row() for s in summaries])


def records_csv(records):
    clean = [{k: v for k, v in r.items() if k != "trajectory"} for r in records]
    return to_csv(clean)
