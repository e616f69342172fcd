"""Simulation studies: coverage, log-ratio utility, external margins and timing."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .inference import credible_intervals, generate_synthetic
from .mechanism import NoisyRelease, PrivacyBudget, geometric_mechanism, read_release
from .model import LatentClassParams, PriorSpec, marginal_prob_batch, sample_prior
from .sampler import CellLayout, Problem, SamplerConfig, run_chain
from .streams import seed_sequence, stream
from .tables import (
    CountVector,
    MarginalQuery,
    RecordTable,
    Schema,
    SchemaError,
    all_two_way_queries,
    marginal_counts,
)

NO_NOISE = None


def default_generating_params() -> LatentClassParams:
    """A 3-class model over 5 binary variables with a mix of large and small cells."""
    pi = np.array([0.5, 0.3, 0.2])
    p1 = np.array([
        [0.85, 0.80, 0.90, 0.75, 0.85],
        [0.15, 0.25, 0.20, 0.10, 0.30],
        [0.60, 0.10, 0.50, 0.85, 0.15],
    ])
    psi = tuple(np.stack([1 - p1[:, j], p1[:, j]], axis=1) for j in range(5))
    return LatentClassParams(pi, psi)


def simulate_population(params: LatentClassParams | int, size: int, rng: np.random.Generator,
                        schema: Schema | None = None, k: int = 3) -> RecordTable:
    """Records drawn i.i.d. from a latent class model.

    ``params`` may be an integer seed, in which case a ``k``-class model over
    ``schema`` is drawn from the default prior first.
    """
    if not isinstance(params, LatentClassParams):
        if schema is None:
            raise ValueError("a schema is needed to draw parameters from a seed")
        params = sample_prior(PriorSpec(), schema, k, stream(int(params), "population-params"))
    return generate_synthetic(params, size, rng, schema)


def derived_seed(seed: int, name: str, *keys: int) -> int:
    return int(seed_sequence(seed, name, *keys).generate_state(1, np.uint64)[0] >> np.uint64(1))


def eps_label(eps: float | None) -> str:
    return "no-noise" if eps is None else f"{eps:g}"


def parse_epsilon(value) -> float | None:
    """Accept a positive number or one of ``none``/``inf``/``no-noise``."""
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() in ("none", "inf", "no-noise", "infinity"):
        return None
    eps = float(value)
    if math.isinf(eps):
        return None
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {value!r}")
    return eps


@dataclass
class ExperimentPlan:
    """Repeated-sampling study.

    ``epsilons`` entries are positive floats, or ``None`` for fitting the
    exact counts.
    """

    params: LatentClassParams | None = None
    params_seed: int = 0
    schema: Schema | None = None
    population_size: int = 100_000
    n: int = 10_000
    epsilons: list = field(default_factory=lambda: [0.25, 1.0, None])
    replicates: int = 50
    queries: list[MarginalQuery] | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sensitivity: int = 2
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        self.epsilons = [parse_epsilon(e) for e in self.epsilons]
        if not self.epsilons:
            raise ValueError("epsilon grid is empty")
        if self.params is None and self.schema is None:
            self.params = default_generating_params()
        if self.schema is None:
            self.schema = Schema.from_levels(self.params.levels)
        if self.params is not None and tuple(self.params.levels) != self.schema.levels:
            raise ValueError("generating params do not match the schema")
        if self.queries is None:
            self.queries = all_two_way_queries(self.schema)
        if not 1 <= self.n <= self.population_size:
            raise ValueError("need 1 <= n <= population_size")

    def generating_params(self, k: int = 3) -> LatentClassParams:
        if self.params is not None:
            return self.params
        return sample_prior(PriorSpec(), self.schema, k, stream(self.params_seed, "population-params"))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        data = dict(data)
        schema = Schema.from_dict(data.pop("schema")) if "schema" in data else None
        if "params" in data:
            raw = data.pop("params")
            params = LatentClassParams(np.asarray(raw["pi"], float),
                                       tuple(np.asarray(r, float) for r in raw["psi"]))
        else:
            params = None
        sampler = SamplerConfig(**data.pop("sampler", {}))
        queries = data.pop("queries", None)
        plan = cls(params=params, schema=schema, sampler=sampler, **data)
        if queries is not None and queries != "all_two_way":
            plan.queries = [plan.schema.query(q) for q in queries]
        return plan


@dataclass
class CoverageReport:
    labels: list[str]
    population_values: np.ndarray            # (cells,)
    epsilons: list
    coverage: np.ndarray                     # (len(epsilons), cells)
    length: np.ndarray                       # (len(epsilons), cells)
    replicates: int
    hits: np.ndarray = field(repr=False, default=None)   # (len(eps), R, cells) booleans

    def average_coverage(self) -> np.ndarray:
        return self.coverage.mean(axis=1)

    def average_length(self) -> np.ndarray:
        return self.length.mean(axis=1)

    def rows(self) -> list[list[str]]:
        header = ["Cell", "Pop. Value"]
        for e in self.epsilons:
            header += [f"Cov. ({eps_label(e)})", f"Length ({eps_label(e)})"]
        out = [header]
        for c, lab in enumerate(self.labels):
            row = [lab, f"{self.population_values[c]:.4f}"]
            for i in range(len(self.epsilons)):
                row += [f"{self.coverage[i, c]:.3f}", f"{self.length[i, c]:.4f}"]
            out.append(row)
        avg = ["Average", ""]
        for i in range(len(self.epsilons)):
            avg += [f"{self.average_coverage()[i]:.3f}", f"{self.average_length()[i]:.4f}"]
        out.append(avg)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())


def _replicate_counts(population: RecordTable, n: int, queries, rng) -> list[CountVector]:
    rows = rng.choice(population.n, size=n, replace=False)
    sample = RecordTable(population.schema, population.records[rows])
    return [marginal_counts(sample, q) for q in queries]


def fit_counts(counts: Sequence[CountVector], schema: Schema, n: int, eps: float | None,
               config: SamplerConfig, seed: int, sensitivity: int = 2):
    """Noise ``counts`` at ``eps`` (or not) and fit; returns the posterior draws."""
    if eps is None:
        problem = Problem.from_counts(schema, counts, n=n)
    else:
        budget = PrivacyBudget(eps, len(counts), sensitivity)
        noisy = geometric_mechanism(counts, budget, seed_sequence(seed, "noise"))
        problem = Problem.from_counts(schema, noisy, n=n, alphas=budget.alphas)
    cfg = dataclasses.replace(config, seed=derived_seed(seed, "fit"))
    return run_chain(cfg, problem)


def coverage_experiment(plan: ExperimentPlan, progress: Callable[[int, float | None], None] | None = None
                        ) -> CoverageReport:
    """Repeated sampling from a simulated population, one fit per replicate and epsilon."""
    params = plan.generating_params()
    population = simulate_population(params, plan.population_size, stream(plan.seed, "population"), plan.schema)
    pop_values = np.concatenate([
        marginal_counts(population, q).counts / population.n for q in plan.queries
    ])
    p = plan.schema.p
    labels = [q.cell_label(c, p) for q in plan.queries for c in range(q.r)]
    E, R, C = len(plan.epsilons), plan.replicates, len(labels)
    hits = np.zeros((E, R, C), dtype=bool)
    lengths = np.zeros((E, R, C))
    for r in range(R):
        counts = _replicate_counts(population, plan.n, plan.queries, stream(plan.seed, "sample", r))
        for i, eps in enumerate(plan.epsilons):
            draws = fit_counts(counts, plan.schema, plan.n, eps, plan.sampler,
                               derived_seed(plan.seed, "replicate", r, i), plan.sensitivity)
            ci = credible_intervals(draws.marginal_probs, plan.level)
            hits[i, r] = (ci[:, 0] <= pop_values) & (pop_values <= ci[:, 1])
            lengths[i, r] = ci[:, 1] - ci[:, 0]
            if progress is not None:
                progress(r, eps)
    return CoverageReport(labels, pop_values, list(plan.epsilons), hits.mean(axis=1),
                          lengths.mean(axis=1), R, hits)


# -- utility metrics ----------------------------------------------------------


@dataclass(frozen=True)
class LogRatioResult:
    per_cell: np.ndarray
    average: float
    mean_abs: float
    order: np.ndarray  # cell indices sorted by ascending true value


def log_ratio_metric(estimated, true, true_counts=None) -> LogRatioResult:
    """Per-cell ``log(est / true)`` with its mean and mean absolute value."""
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(true, dtype=float)
    if est.shape != tru.shape:
        raise ValueError("estimated and true vectors differ in shape")
    if np.any(tru <= 0):
        raise ValueError("true probabilities must be positive")
    with np.errstate(divide="ignore"):
        lr = np.log(est) - np.log(tru)
    key = tru if true_counts is None else np.asarray(true_counts)
    return LogRatioResult(lr, float(lr.mean()), float(np.abs(lr).mean()), np.argsort(key, kind="stable"))


def write_log_ratio_csv(path: str | Path, labels: Sequence[str], result: LogRatioResult,
                        true, estimated) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "cell", "true", "estimated", "log_ratio"])
        for rank, c in enumerate(result.order, start=1):
            w.writerow([rank, labels[c], repr(float(true[c])), repr(float(estimated[c])),
                        repr(float(result.per_cell[c]))])
        w.writerow(["", "average", "", "", repr(result.average)])


def ingest_external_marginals(path: str | Path, schema: Schema | None = None
                              ) -> list[tuple[MarginalQuery, CountVector]]:
    """Load an externally selected set of noisy margins in the release format."""
    release: NoisyRelease = read_release(path, schema)
    return [(cv.query, cv) for cv in release.tables]


def write_full_table_comparison(path: str | Path, schema: Schema, truth: np.ndarray,
                                methods: dict[str, np.ndarray]) -> None:
    """CSV of full-table probabilities: one row per cell, one column per method."""
    size = schema.check_full_table()
    for name, vec in methods.items():
        if np.asarray(vec).shape != (size,):
            raise SchemaError(f"method {name!r} has the wrong number of cells")
    full = schema.full_query()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "truth", *methods])
        for c in range(size):
            w.writerow([full.cell_label(c, schema.p), repr(float(truth[c])),
                        *(repr(float(v[c])) for v in methods.values())])


def read_full_table_comparison(path: str | Path, schema: Schema) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    size = schema.check_full_table()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["cell", "truth"]:
        raise SchemaError(f"{path}: expected a 'cell,truth,...' header")
    body = rows[1:]
    if len(body) != size:
        raise SchemaError(f"{path}: expected {size} cells, found {len(body)}")
    full = schema.full_query()
    for c, row in enumerate(body):
        if row[0] != full.cell_label(c, schema.p):
            raise SchemaError(f"{path}: row {c + 2} has cell {row[0]!r} out of order")
    values = np.array([[float(x) for x in row[1:]] for row in body])
    return values[:, 0], {name: values[:, i + 1] for i, name in enumerate(rows[0][2:])}


# -- runtime benchmark ----------------------------------------------------------


@dataclass
class BenchmarkTable:
    rows: list[dict]

    def median(self, p: int, k: int) -> float:
        return next(r["median_ms"] for r in self.rows if r["p"] == p and r["k"] == k)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["p", "k", "repeats", "mean_ms", "median_ms"],
                               lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "mean_ms": f"{r['mean_ms']:.6f}", "median_ms": f"{r['median_ms']:.6f}"})


def runtime_benchmark(dims: Sequence[int] = tuple(range(4, 17)), ks: Sequence[int] = (2, 10, 20),
                      repeats: int = 100, warmup: int = 3, seed: int = 0, draws: int = 500) -> BenchmarkTable:
    """Wall time of one two-way marginal-probability evaluation per (p, k).

    Each repeat evaluates every two-way margin of a binary ``p``-variable
    model for a stack of ``draws`` parameter draws (as when post-processing
    a chain) and records the time per margin per draw. The k values are
    interleaved within each repeat so slow drift in machine load affects
    them equally.
    """
    if not dims or not ks:
        raise ValueError("grids must be non-empty")
    if repeats < 1 or draws < 1:
        raise ValueError("repeats and draws must be positive")
    rows = []
    for p in dims:
        schema = Schema.from_levels([2] * p)
        queries = all_two_way_queries(schema)
        stacks = {}
        for k in ks:
            rng = stream(seed, "bench", p, k)
            pi = rng.dirichlet(np.ones(k), size=draws)
            psi = [rng.dirichlet(np.ones(2), size=(draws, k)) for _ in range(p)]
            stacks[k] = (pi, psi)
        times = {k: np.empty(repeats) for k in ks}
        for i in range(-warmup, repeats):
            for k in ks:
                pi, psi = stacks[k]
                t0 = time.perf_counter_ns()
                for q in queries:
                    marginal_prob_batch(pi, psi, q)
                elapsed = (time.perf_counter_ns() - t0) / (len(queries) * draws) / 1e6
                if i >= 0:
                    times[k][i] = elapsed
        for k in ks:
            rows.append({"p": p, "k": k, "repeats": repeats,
                         "mean_ms": float(times[k].mean()), "median_ms": float(np.median(times[k]))})
    return BenchmarkTable(rows)
