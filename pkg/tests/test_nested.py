import math

import numpy as np
import pytest

from dplcm.model import ParameterError
from dplcm.nested import (
    EXAMPLE_COUNTS,
    EXAMPLE_N,
    HOUSEHOLD_COLUMNS,
    RACE_LABELS,
    RELATIONSHIP_LABELS,
    NestedChainConfig,
    NestedModelParams,
    NestedSummarySet,
    household_summaries,
    nested_cell_probability,
    nested_log_likelihood,
    protect_summaries,
    random_nested_params,
    read_summaries,
    run_nested_chain,
    simulate_households,
    summary_probabilities,
    summary_probability,
    write_summaries,
)
from dplcm.tables import SchemaError

from oracles import binom_logpmf, brute_household_prob, brute_summary_probs


def reduced_params(seed, G=2, M=2, races=2, relationships=3, concentration=1.0):
    return random_nested_params(G, M, races, relationships, np.random.default_rng(seed), concentration)


def degenerate_params(**overrides):
    base = dict(pi=[1.0], w=[[1.0]], own=[[0.5, 0.5]], hh_gender=[[0.5, 0.5]], hh_race=[[0.6, 0.4]],
                gender=[[[0.5, 0.5]]], race=[[[0.7, 0.3]]], relation=[[[0.2, 0.5, 0.3]]])
    base.update(overrides)
    return NestedModelParams(**base)


def test_label_sets():
    assert len(RACE_LABELS) == 9 and RACE_LABELS[0] == "white"
    assert len(RELATIONSHIP_LABELS) == 12 and RELATIONSHIP_LABELS[0] == "spouse"
    assert len(HOUSEHOLD_COLUMNS) == 9


def test_params_validation_and_round_trip():
    params = reduced_params(0)
    assert (params.G, params.M, params.races, params.relationships) == (2, 2, 2, 3)
    back = NestedModelParams.from_dict(params.to_dict())
    for name, value in params.to_dict().items():
        assert np.array_equal(getattr(back, name), value)
    bad = params.to_dict()
    bad["pi"] = [0.7, 0.7]
    with pytest.raises(ParameterError):
        NestedModelParams.from_dict(bad)
    bad = params.to_dict()
    bad["w"] = [[1.0]]
    with pytest.raises(ParameterError):
        NestedModelParams.from_dict(bad)


def test_cell_probability_matches_loop_oracle_and_normalizes():
    params = reduced_params(1)
    d = params.to_dict()
    total = 0.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = [rng.integers(0, k) for k in (2, 2, 2, 2, 2, 3, 2, 2, 3)]
        assert nested_cell_probability(params, x) == pytest.approx(brute_household_prob(d, x), rel=1e-12)
    _, total = brute_summary_probs(d)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_cell_probability_single_class_is_product():
    params = degenerate_params()
    x = (1, 0, 1, 1, 0, 2, 0, 1, 1)
    expected = 0.5 * 0.5 * 0.4 * (0.5 * 0.7 * 0.3) * (0.5 * 0.3 * 0.5)
    assert nested_cell_probability(params, x) == pytest.approx(expected, rel=1e-14)


def test_cell_probability_member_swap_symmetry():
    params = reduced_params(2)
    x = (0, 1, 1, 0, 1, 2, 1, 0, 0)
    swapped = x[:3] + x[6:] + x[3:6]
    assert nested_cell_probability(params, x) == pytest.approx(nested_cell_probability(params, swapped), rel=1e-14)


def test_cell_probability_errors():
    params = reduced_params(0)
    with pytest.raises(IndexError):
        nested_cell_probability(params, (0, 0, 2, 0, 0, 0, 0, 0, 0))
    with pytest.raises(SchemaError):
        nested_cell_probability(params, (0, 0, 0))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("G,M", [(1, 1), (2, 2), (3, 2)])
def test_closed_forms_match_event_enumeration(seed, G, M):
    params = reduced_params(seed, G=G, M=M)
    exact, _ = brute_summary_probs(params.to_dict())
    assert np.max(np.abs(summary_probabilities(params) - exact)) < 1e-10


def test_summary_degenerate_cases():
    all_spouse = degenerate_params(relation=[[[1.0, 0.0, 0.0]]])
    assert summary_probability(all_spouse, 4) == pytest.approx(1.0, abs=1e-15)
    never_owned = degenerate_params(own=[[1.0, 0.0]])
    assert summary_probability(never_owned, 2) == 0.0
    with pytest.raises(ValueError):
        summary_probability(all_spouse, 6)


def test_log_likelihood_hand_binomial():
    params = degenerate_params()
    probs = summary_probabilities(params)
    S = [3, 4, 5, 6, 2]
    summaries = NestedSummarySet(10, S)
    expected = sum(binom_logpmf(s, 10, p) for s, p in zip(S, probs))
    assert nested_log_likelihood(params, summaries, S) == pytest.approx(expected, rel=1e-12)


def test_log_likelihood_noise_terms_and_infinity():
    params = degenerate_params(own=[[1.0, 0.0]])
    exact = NestedSummarySet(10, (3, 0, 5, 6, 2))
    assert math.isinf(nested_log_likelihood(params, exact, (3, 1, 5, 6, 2)))
    noisy = NestedSummarySet(10, (3, 0, 5, 6, 2), epsilon_total=5.0)
    S = (3, 0, 4, 6, 2)
    alpha = math.exp(-1.0)
    extra = math.log((1 - alpha) / (1 + alpha)) * 5 + math.log(alpha)
    diff = nested_log_likelihood(params, noisy, S) - nested_log_likelihood(params, exact, S)
    assert diff == pytest.approx(extra, rel=1e-12)
    with pytest.raises(ValueError):
        nested_log_likelihood(params, exact, (11, 0, 0, 0, 0))


def test_example_fixture_likelihood_is_finite():
    summaries = NestedSummarySet(EXAMPLE_N, EXAMPLE_COUNTS)
    params = random_nested_params(2, 2, 9, 12, np.random.default_rng(0))
    assert np.isfinite(nested_log_likelihood(params, summaries, EXAMPLE_COUNTS))


def test_summary_set_budget_split_and_io(tmp_path):
    s = NestedSummarySet(602, EXAMPLE_COUNTS, epsilon_total=1.0)
    assert s.epsilons == pytest.approx((0.2,) * 5)
    assert np.allclose(s.alphas, math.exp(-0.2))
    with pytest.raises(SchemaError):
        NestedSummarySet(602, EXAMPLE_COUNTS, epsilon_total=1.0, epsilons=(0.5, 0.5, 0.5, 0.5, 0.5))
    with pytest.raises(SchemaError):
        NestedSummarySet(602, (1, 2, 3))
    with pytest.raises(SchemaError):
        NestedSummarySet(10, (1, 2, 3, 4, 11))
    write_summaries(tmp_path / "s.json", s)
    assert read_summaries(tmp_path / "s.json") == s
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(SchemaError):
        read_summaries(tmp_path / "bad.json")


def test_protect_summaries_reproducible():
    a = protect_summaries(EXAMPLE_COUNTS, EXAMPLE_N, 1.0, seed=4)
    b = protect_summaries(EXAMPLE_COUNTS, EXAMPLE_N, 1.0, seed=4)
    assert a == b and a.noisy
    assert a.counts != EXAMPLE_COUNTS


def test_simulated_households_match_closed_forms():
    params = reduced_params(3)
    N = 200_000
    counts = household_summaries(simulate_households(params, N, np.random.default_rng(1)))
    probs = summary_probabilities(params)
    se = np.sqrt(probs * (1 - probs) / N)
    assert np.all(np.abs(counts / N - probs) < 4 * se)


def test_nested_chain_reproducible_and_shapes():
    summaries = NestedSummarySet(500, (120, 260, 150, 230, 90), epsilon_total=1.0)
    config = NestedChainConfig(races=3, relationships=4, iterations=60, burn_in=20, thin=2, seed=3)
    a = run_nested_chain(config, summaries)
    b = run_nested_chain(config, summaries)
    assert len(a) == config.n_draws == 20
    assert a.probs.shape == (20, 5) and a.S.shape == (20, 5)
    assert np.array_equal(a.probs, b.probs) and np.array_equal(a.S, b.S)
    assert np.all((a.S >= 0) & (a.S <= 500))
    assert set(a.acceptance) >= {"S", "pi", "w", "race", "relation"}
    for i in range(3):
        assert np.allclose(summary_probabilities(a.params[i]), a.probs[i], rtol=1e-12)


def test_nested_chain_no_noise_recovers_summaries():
    truth = random_nested_params(2, 2, 3, 4, np.random.default_rng(8), concentration=2.0)
    N = 5000
    counts = household_summaries(simulate_households(truth, N, np.random.default_rng(9)))
    config = NestedChainConfig(races=3, relationships=4, iterations=4000, burn_in=2000, thin=2, seed=0)
    draws = run_nested_chain(config, NestedSummarySet(N, tuple(counts)))
    assert np.all(draws.S == counts)
    assert np.max(np.abs(draws.probs.mean(axis=0) - counts / N)) < 0.03


def test_config_validation():
    with pytest.raises(ValueError):
        NestedChainConfig(G=0)
    with pytest.raises(ValueError):
        NestedChainConfig(iterations=10, burn_in=10)
