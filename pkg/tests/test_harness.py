import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from rsiu import harness
from rsiu.core import stream
from rsiu.errors import ConfigError
from rsiu.testbeds import gauss_toy


def test_config_round_trip_defaults():
    cfg = harness.ExperimentConfig()
    assert harness.ExperimentConfig.parse(cfg.to_text()) == cfg


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(sorted(harness.REGISTRY)),
    st.sampled_from(harness.PROCEDURES),
    st.floats(1e-4, 0.5),
    st.floats(0.01, 0.95),
    st.integers(1, 10**6),
    st.lists(st.integers(100, 10**5), min_size=1, max_size=4),
    st.lists(st.floats(0.01, 100.0), min_size=1, max_size=4),
    st.one_of(st.none(), st.floats(0.001, 0.2)),
    st.booleans(),
)
def test_config_round_trip(testbed, proc, alpha, eta, seed, T, cd, rho0, oracle):
    cfg = harness.ExperimentConfig(
        testbed=testbed, procedure=proc, alpha=alpha, eta=eta, seed=seed, T=tuple(T), cd=tuple(cd), rho0=rho0, oracle=oracle
    )
    assert harness.ExperimentConfig.parse(cfg.to_text()) == cfg


def test_config_parse_comments_and_overrides():
    text = "# table cell\ntestbed = inv-multi  # four sources\nbatch = 100\nT = 2000, 4000\n\n"
    cfg = harness.ExperimentConfig.parse(text, batch=1000)
    assert cfg.testbed == "inv-multi" and cfg.batch == 1000 and cfg.T == (2000, 4000)


@pytest.mark.parametrize(
    "text",
    ["testbed = nowhere", "procedure = KN", "reps = 0", "unknown = 1", "alpha = many", "just words", "oracle = maybe"],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        harness.ExperimentConfig.parse(text)


def test_summary_of_degenerate_winner():
    recs = [{"correct": 1} for _ in range(40)]
    s = harness.summarize(recs, {})
    assert s.pcs == 1.0 and s.se == 0.0 and s.n == 40


def test_deterministic_testbed_pcs_is_one():
    cfg = harness.ExperimentConfig(testbed="gauss-toy", procedure="HEURISTIC", reps=5, batch=1, pilot_data=50, pilot_sims=50)
    s = harness.estimate_pcs(cfg)[0]
    assert 0 <= s.pcs <= 1 and s.n == 5
    # A gap of 1000 noise units: every replication picks design 1.
    tb = gauss_toy(means=(0.0, -1000.0), sds=(1.0, 1.0))
    recs = [{"correct": int(np.argmax([tb.problem.evaluate([i], tb.problem.model.sample_xi([0.0], 3, stream(1, r)))[0].mean()
                                        for i in (1, 2)]) == 0)} for r in range(50)]
    s = harness.summarize(recs, {})
    assert (s.pcs, s.se) == (1.0, 0.0)


def _equal_allocation_trial(delta, M, r):
    tb = gauss_toy(means=(0.0, -delta))
    xi = [tb.problem.model.sample_xi([0.0], M, stream(42, r, i + 1)) for i in range(2)]
    means = [tb.problem.evaluate([i + 1], xi[i])[0].mean() for i in range(2)]
    return {"replication": r, "correct": int(means[0] > means[1])}


def test_two_design_pcs_matches_normal_cdf():
    from functools import partial

    delta, M, n = 0.3, 20, 2000
    recs = harness.map_replications(partial(_equal_allocation_trial, delta, M), n)
    s = harness.summarize(recs, {})
    exact = norm.cdf(delta / math.sqrt(2 / M))
    assert abs(s.pcs - exact) <= 3 * math.sqrt(exact * (1 - exact) / n)


def test_map_replications_is_worker_independent():
    from functools import partial

    fn = partial(_equal_allocation_trial, 0.3, 10)
    assert harness.map_replications(fn, 12, workers=1) == harness.map_replications(fn, 12, workers=3)


def test_fixed_confidence_records_reproducible():
    cfg = harness.ExperimentConfig(testbed="inv-single", procedure="HEURISTIC", reps=6, batch=1000, seed=99)
    a, sa = harness.run_fixed_confidence_experiment(cfg)
    b, sb = harness.run_fixed_confidence_experiment(cfg.replace(workers=2))
    assert harness.records_csv(a) == harness.records_csv(b)
    assert harness.summary_csv([sa]) == harness.summary_csv([sb])
    assert all(r["stages"] >= 1 and r["data"] == 1000 * r["stages"] for r in a)


def test_table_marks_capped_cells():
    cfg = harness.ExperimentConfig(testbed="inv-single", reps=2, seed=3)
    rows = harness.table_expected_stages(cfg, batches=(1000,), procedures=("SEIU", "HEURISTIC"), caps={"SEIU": 20})
    seiu, heur = rows
    assert seiu.geq and seiu.mean_stages == 20
    assert not heur.geq
    assert {r["geq"] for r in [seiu.row(), heur.row()]} == {0, 1}


def test_grid_conserves_budget():
    cfg = harness.ExperimentConfig(testbed="inv-single", procedure="OCBAIU", reps=4, T=(2000,), fractions=(0.1, 0.5, 0.9, 0.99))
    with pytest.warns(UserWarning, match="skipped"):
        rows = harness.grid_fraction(cfg)
    assert [r.label["fraction"] for r in rows[:-1]] == [0.1, 0.5, 0.9]
    assert rows[-1].label["marked"] == 1
    for f in (0.1, 0.5, 0.9):
        N = harness.data_split(cfg, 2000, f)
        rec = harness.fixed_split_trial(cfg, 2000, N, 0)
        assert rec["spend"] <= 2000


def test_grid_starved_simulation_is_not_best():
    cfg = harness.ExperimentConfig(testbed="inv-single", procedure="OCBAIU", reps=300, T=(2000,), seed=5)
    rows = harness.grid_fraction(cfg)
    grid = {r.label["fraction"]: r.pcs for r in rows if not r.label["marked"]}
    best = max(grid, key=grid.get)
    assert grid[0.9] < grid[best]
    assert best <= 0.5


def test_region_data():
    cfg = harness.ExperimentConfig(testbed="inv-single", stage_cap=40, seed=4)
    logs = harness.region_trajectories(cfg)
    text = harness.emit_region_plot_data(logs)
    rows = harness.read_csv(text)
    assert rows and set(rows[0]) == {"variant", "pair", "stage", "series", "value"}
    assert harness.to_csv([tuple(r.values()) for r in rows], tuple(rows[0])) == text
    bounds = {}
    for r in rows:
        bounds.setdefault((r["variant"], r["pair"], int(r["stage"])), {})[r["series"]] = float(r["value"])
    for key, v in bounds.items():
        assert v["upper"] == -v["lower"] and v["upper"] > 0
    # The input-aware pairwise region contains the one that ignores input noise.
    shared = [k for k in bounds if k[0] == "PAIRWISE" and ("NOIU_BASELINE",) + k[1:] in bounds]
    assert shared
    for k in shared:
        assert bounds[k]["upper"] > bounds[("NOIU_BASELINE",) + k[1:]]["upper"]
    with pytest.raises(ValueError):
        harness.emit_region_plot_data({"PAIRWISE": []})


def test_budget_fractions_shape():
    cfg = harness.ExperimentConfig(testbed="inv-multi", cd=(2.0, 2.0, 3.0, 3.0))
    f = harness.budget_fractions(cfg, 4000)
    assert f.shape == (4,) and 0 < f.sum() < 1


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.1 + 0.2, "c": "x"}, {"a": 2, "b": float("nan"), "c": "y"}]
    text = harness.to_csv(rows)
    path = tmp_path / "t.csv"
    harness.write_text(path, text)
    back = harness.read_csv(path.read_text())
    assert float(back[0]["b"]) == 0.1 + 0.2 and back[1]["c"] == "y"
