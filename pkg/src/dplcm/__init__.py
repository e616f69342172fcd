"""Latent class post-processing of differentially private marginal counts.

Typical flow: tabulate marginals of categorical microdata, noise them with
the geometric mechanism, fit the latent class measurement-error model by
MCMC, then summarize the posterior or draw synthetic datasets.
"""

__version__ = "0.1.0"

from .tables import (
    CountKind,
    CountVector,
    MarginalQuery,
    RecordTable,
    Schema,
    SchemaError,
    Variable,
    all_two_way_queries,
    marginal_counts,
)
from .mechanism import (
    NoisyRelease,
    PrivacyBudget,
    geometric_mechanism,
    read_release,
    sample_two_sided_geom,
    two_sided_geom_pmf,
    write_release,
)
from .model import (
    LatentClassParams,
    PriorSpec,
    cell_probability,
    composite_log_likelihood,
    log_prior,
    marginal_prob_vector,
    sample_prior,
    stick_breaking_weights,
)
from .sampler import PosteriorDraws, Problem, SamplerConfig, run_chain
from .inference import (
    combine_estimates,
    credible_interval,
    full_table_estimate,
    generate_synthetic,
    synthesize,
)
from .nested import (
    NestedChainConfig,
    NestedModelParams,
    NestedSummarySet,
    run_nested_chain,
    summary_probability,
)
from .harness import ExperimentPlan, coverage_experiment, log_ratio_metric, runtime_benchmark
