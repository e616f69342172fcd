import csv
import math

import numpy as np
import pytest

from dplcm.harness import (
    BenchmarkTable,
    CoverageReport,
    ExperimentPlan,
    coverage_experiment,
    default_generating_params,
    derived_seed,
    fit_counts,
    ingest_external_marginals,
    log_ratio_metric,
    parse_epsilon,
    read_full_table_comparison,
    runtime_benchmark,
    simulate_population,
    write_full_table_comparison,
    write_log_ratio_csv,
)
from dplcm.mechanism import NoisyRelease, PrivacyBudget, geometric_mechanism, write_release
from dplcm.model import full_table_probs
from dplcm.sampler import SamplerConfig
from dplcm.streams import stream
from dplcm.tables import Schema, SchemaError, all_two_way_queries, full_table_counts, marginal_counts

from oracles import brute_marginal


def tiny_plan(**overrides):
    base = dict(population_size=3000, n=500, epsilons=[1.0, None], replicates=2,
                sampler=SamplerConfig(k=3, iterations=150, burn_in=50), seed=1)
    base.update(overrides)
    return ExperimentPlan(**base)


def test_default_params_shape():
    params = default_generating_params()
    assert params.k == 3 and params.levels == (2,) * 5
    assert np.allclose(params.pi, [0.5, 0.3, 0.2])


def test_simulate_population_frequencies():
    params = default_generating_params()
    pop = simulate_population(params, 100_000, stream(0, "pop"))
    q = Schema.from_levels([2] * 5).query([0, 3])
    freq = marginal_counts(pop, q).counts / pop.n
    exact = brute_marginal(params.pi, params.psi, [0, 3])
    assert np.all(np.abs(freq - exact) < 4 * np.sqrt(exact * (1 - exact) / pop.n))


def test_simulate_population_from_seed():
    schema = Schema.from_levels([2, 3])
    a = simulate_population(5, 100, stream(0, "pop"), schema)
    b = simulate_population(5, 100, stream(0, "pop"), schema)
    assert np.array_equal(a.records, b.records)
    with pytest.raises(ValueError):
        simulate_population(5, 100, stream(0, "pop"))


@pytest.mark.parametrize("value,expected", [
    ("none", None), ("no-noise", None), ("inf", None), (float("inf"), None), (None, None),
    (0.25, 0.25), ("1.0", 1.0),
])
def test_parse_epsilon(value, expected):
    assert parse_epsilon(value) == expected


def test_parse_epsilon_rejects_nonpositive():
    with pytest.raises(ValueError):
        parse_epsilon(0)


def test_plan_validation_and_from_dict():
    with pytest.raises(ValueError):
        tiny_plan(replicates=0)
    with pytest.raises(ValueError):
        tiny_plan(n=5000)
    with pytest.raises(ValueError):
        tiny_plan(epsilons=[])
    plan = ExperimentPlan.from_dict({
        "seed": 3, "epsilons": [0.5, "no-noise"], "replicates": 2, "n": 100, "population_size": 200,
        "sampler": {"k": 2, "iterations": 20, "burn_in": 5}, "queries": [[0, 1], [2, 3]],
    })
    assert plan.epsilons == [0.5, None]
    assert [q.variables for q in plan.queries] == [(0, 1), (2, 3)]
    assert plan.sampler.k == 2


def test_derived_seed_is_stable_and_distinct():
    assert derived_seed(1, "fit") == derived_seed(1, "fit")
    assert derived_seed(1, "fit") != derived_seed(1, "fit", 0)
    assert derived_seed(1, "fit") >= 0


def test_fit_counts_noisy_and_exact():
    schema = Schema.from_levels([2] * 5)
    pop = simulate_population(default_generating_params(), 800, stream(0, "pop"))
    counts = [marginal_counts(pop, q) for q in all_two_way_queries(schema)]
    config = SamplerConfig(k=2, iterations=40, burn_in=10)
    exact = fit_counts(counts, schema, 800, None, config, seed=0)
    noisy = fit_counts(counts, schema, 800, 1.0, config, seed=0)
    assert exact.M is None and noisy.M is not None
    again = fit_counts(counts, schema, 800, 1.0, config, seed=0)
    assert np.array_equal(noisy.marginal_probs, again.marginal_probs)


def test_coverage_experiment_report(tmp_path):
    plan = tiny_plan()
    report = coverage_experiment(plan)
    assert report.coverage.shape == (2, 40)
    assert np.all((report.coverage >= 0) & (report.coverage <= 1))
    assert np.all(report.length >= 0)
    assert report.hits.shape == (2, 2, 40)
    assert np.allclose(report.coverage, report.hits.mean(axis=1))
    assert report.population_values.reshape(10, 4).sum(axis=1) == pytest.approx(np.ones(10))
    report.write_csv(tmp_path / "cov.csv")
    rows = list(csv.reader(open(tmp_path / "cov.csv")))
    assert rows[0] == ["Cell", "Pop. Value", "Cov. (1)", "Length (1)", "Cov. (no-noise)", "Length (no-noise)"]
    assert len(rows) == 42 and rows[-1][0] == "Average"
    again = coverage_experiment(plan)
    assert np.array_equal(report.hits, again.hits)


def test_log_ratio_metric():
    res = log_ratio_metric([0.2, 0.3, 0.5], [0.25, 0.25, 0.5])
    assert res.per_cell == pytest.approx([math.log(0.8), math.log(1.2), 0.0])
    assert res.average == pytest.approx((math.log(0.8) + math.log(1.2)) / 3)
    assert res.mean_abs == pytest.approx((abs(math.log(0.8)) + math.log(1.2)) / 3)
    assert res.order.tolist() == [0, 1, 2]
    with pytest.raises(ValueError):
        log_ratio_metric([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError):
        log_ratio_metric([0.5], [0.5, 0.5])
    assert log_ratio_metric([0.0, 1.0], [0.5, 0.5]).per_cell[0] == -math.inf


def test_write_log_ratio_csv(tmp_path):
    res = log_ratio_metric([0.2, 0.8], [0.3, 0.7], true_counts=[30, 70])
    write_log_ratio_csv(tmp_path / "lr.csv", ["a", "b"], res, [0.3, 0.7], [0.2, 0.8])
    rows = list(csv.reader(open(tmp_path / "lr.csv")))
    assert rows[0] == ["rank", "cell", "true", "estimated", "log_ratio"]
    assert rows[1][1] == "a" and rows[-1][1] == "average"


def test_ingest_external_marginals(tmp_path):
    schema = Schema.from_levels([2, 2, 2])
    pop = simulate_population(1, 300, stream(0, "p"), schema)
    queries = [schema.query([0, 2]), schema.query([1])]
    counts = [marginal_counts(pop, q) for q in queries]
    budget = PrivacyBudget(1.0, 2)
    release = NoisyRelease(schema, pop.n, budget, tuple(geometric_mechanism(counts, budget, 0)))
    write_release(tmp_path / "r.json", release)
    got = ingest_external_marginals(tmp_path / "r.json")
    assert [q.variables for q, _ in got] == [(0, 2), (1,)]
    assert np.array_equal(got[0][1].counts, release.tables[0].counts)


def test_full_table_comparison_round_trip(tmp_path):
    schema = Schema.from_levels([2, 2, 2])
    params = default_generating_params()
    truth = full_table_probs(params)[:8]
    truth = truth / truth.sum()
    methods = {"lcm": truth * 0.9 + 0.1 / 8, "other": np.full(8, 1 / 8)}
    write_full_table_comparison(tmp_path / "cmp.csv", schema, truth, methods)
    t2, m2 = read_full_table_comparison(tmp_path / "cmp.csv", schema)
    assert np.array_equal(t2, truth)
    assert list(m2) == ["lcm", "other"] and np.array_equal(m2["lcm"], methods["lcm"])
    with pytest.raises(SchemaError):
        write_full_table_comparison(tmp_path / "bad.csv", schema, truth, {"x": np.ones(3)})
    (tmp_path / "bad.csv").write_text("cell,truth\n000,1.0\n")
    with pytest.raises(SchemaError):
        read_full_table_comparison(tmp_path / "bad.csv", schema)


def test_runtime_benchmark_small_grid(tmp_path):
    table = runtime_benchmark(dims=[4, 5], ks=[2, 10], repeats=3, warmup=1, draws=20)
    assert {(r["p"], r["k"]) for r in table.rows} == {(4, 2), (4, 10), (5, 2), (5, 10)}
    assert all(r["median_ms"] > 0 for r in table.rows)
    table.write_csv(tmp_path / "b.csv")
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert len(rows) == 4 and rows[0]["p"] == "4"
    with pytest.raises(ValueError):
        runtime_benchmark(dims=[], ks=[2])
