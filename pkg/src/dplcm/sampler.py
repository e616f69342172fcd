"""Metropolis-Hastings-within-Gibbs for the latent class measurement-error model.

One sweep updates, in order:

1. the latent true tables ``M_t`` (skipped when fitting true counts),
2. the class weights ``pi`` (Dirichlet proposal or Gamma reparameterization),
3. every row ``psi[j][h]`` for ``j = 1..p``, ``h = 1..k``.

All marginal tables are laid out on one flat cell axis so that the
likelihood of a block update touches only the cells it can change.
"""

from __future__ import annotations

import dataclasses
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from .mechanism import (
    NoisyRelease,
    sample_truncated_two_sided_geom,
    truncated_two_sided_geom_logpmf,
)
from .model import (
    LatentClassParams,
    PriorSpec,
    dirichlet_logpdf,
    full_table_probs,
    gamma_logpdf,
    sample_prior,
    stick_breaking_logpdf,
)
from .streams import stream
from .tables import CountKind, CountVector, MarginalQuery, Schema, SchemaError

PI_STRATEGIES = ("dirichlet-proposal", "gamma-reparam")


class NumericalError(RuntimeError):
    """The chain could not reach a state with finite posterior density."""


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 10
    iterations: int = 5000
    burn_in: int = 2000
    thin: int = 1
    pi_strategy: str = "gamma-reparam"
    c_pi: float = 100.0
    c_psi: float = 100.0
    proposal_floor: float = 0.01
    sigma_eta: float | None = None
    refresh_eta_scale: bool = True
    seed: int = 0
    prior: PriorSpec = field(default_factory=PriorSpec)
    monitor_full_table: bool = False
    check_invariants: bool = False
    max_init_tries: int = 20

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.iterations < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValueError("iterations and thin must be positive, burn_in nonnegative")
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.pi_strategy not in PI_STRATEGIES:
            raise ValueError(f"pi_strategy must be one of {PI_STRATEGIES}")
        if not (self.c_pi > 0 and self.c_psi > 0 and self.proposal_floor > 0):
            raise ValueError("proposal concentrations and floor must be positive")
        if self.sigma_eta is not None and not self.sigma_eta > 0:
            raise ValueError("sigma_eta must be positive")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def step_size(self, n: int) -> float:
        if self.sigma_eta is not None:
            return float(self.sigma_eta)
        return 0.05 * np.sqrt(max(n, 1) / self.k)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        prior = self.prior
        d["prior"] = {
            "alpha": prior.alpha,
            "dirichlet": None if prior.dirichlet is None else [a.tolist() for a in prior.dirichlet],
            "gamma_shape": prior.gamma_shape if np.isscalar(prior.gamma_shape) or prior.gamma_shape is None
            else list(prior.gamma_shape),
            "gamma_scale": prior.gamma_scale,
        }
        return d


class CellLayout:
    """Cells of several marginal tables concatenated on one axis."""

    def __init__(self, queries: Sequence[MarginalQuery], levels: Sequence[int]):
        self.queries = list(queries)
        self.p = len(levels)
        sizes = [q.r for q in self.queries]
        self.offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.intp)
        self.R = int(self.offsets[-1])
        self.table_of_cell = np.repeat(np.arange(len(sizes)), sizes)
        self.in_cell = np.zeros((self.p, self.R), dtype=bool)
        self.level = np.zeros((self.p, self.R), dtype=np.intp)
        for t, q in enumerate(self.queries):
            grid = q.level_grid()
            sl = slice(self.offsets[t], self.offsets[t + 1])
            for row, var in enumerate(q.variables):
                if var >= self.p or q.dims[row] != levels[var]:
                    raise SchemaError(f"query variable {var} does not match the schema")
                self.in_cell[var, sl] = True
                self.level[var, sl] = grid[row]
        # per variable: its cells and the other variables sharing those cells
        self.cells_of = []
        self.levels_of = []
        self.others_of = []
        for j in range(self.p):
            idx = np.flatnonzero(self.in_cell[j])
            others = []
            for v in range(self.p):
                if v == j:
                    continue
                pos = np.flatnonzero(self.in_cell[v, idx])
                if pos.size:
                    others.append((v, pos, self.level[v, idx[pos]]))
            self.cells_of.append(idx)
            self.levels_of.append(self.level[j, idx])
            self.others_of.append(others)

    def table(self, flat: np.ndarray, t: int) -> np.ndarray:
        return flat[..., self.offsets[t]: self.offsets[t + 1]]

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        return [self.table(flat, t) for t in range(len(self.queries))]

    def class_products(self, psi: Sequence[np.ndarray]) -> np.ndarray:
        k = psi[0].shape[0]
        comp = np.ones((k, self.R))
        for v in range(self.p):
            cells = self.in_cell[v]
            if cells.any():
                comp[:, cells] *= psi[v][:, self.level[v, cells]]
        return comp

    def probs(self, pi: np.ndarray, psi: Sequence[np.ndarray]) -> np.ndarray:
        return pi @ self.class_products(psi)

    def per_table_sum(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x, self.offsets[:-1], axis=-1)


@dataclass
class Problem:
    """Fixed inputs of a fit: queries, observed counts and noise metadata."""

    schema: Schema
    queries: list[MarginalQuery]
    observed: np.ndarray  # flat counts on the layout
    n: int
    alphas: np.ndarray | None  # per table; None means the counts are exact
    layout: CellLayout = field(init=False)

    def __post_init__(self):
        self.layout = CellLayout(self.queries, self.schema.levels)
        if self.alphas is not None:
            self.alphas = np.asarray(self.alphas, dtype=float)
            if self.alphas.shape != (len(self.queries),):
                raise ValueError("one noise scale per table is required")
            if np.any(self.alphas < 0) or np.any(self.alphas >= 1):
                raise ValueError("noise scales must lie in [0, 1)")

    @property
    def no_noise(self) -> bool:
        return self.alphas is None

    @classmethod
    def from_counts(
        cls,
        schema: Schema,
        counts: Sequence[CountVector],
        n: int | None = None,
        alphas: Sequence[float] | None = None,
    ) -> "Problem":
        if not counts:
            raise ValueError("at least one marginal table is required")
        queries = [cv.query for cv in counts]
        if len({q.variables for q in queries}) != len(queries):
            raise SchemaError("duplicate marginal query")
        noisy = any(cv.kind is CountKind.NOISY for cv in counts)
        if noisy and alphas is None:
            raise ValueError("noisy counts need per-table noise scales (alphas)")
        if n is None:
            if noisy:
                raise ValueError("n must be given when fitting noisy counts")
            n = counts[0].total
        if not noisy:
            for cv in counts:
                if cv.total != n:
                    raise ValueError("true-count tables must all sum to n")
        observed = np.concatenate([cv.counts for cv in counts]).astype(np.int64)
        return cls(schema, queries, observed, int(n), None if alphas is None else np.asarray(alphas, float))

    @classmethod
    def from_release(cls, release: NoisyRelease) -> "Problem":
        return cls.from_counts(release.schema, list(release.tables), release.n, release.alphas)


@dataclass
class ChainState:
    """Current values of every block plus acceptance counters."""

    M: np.ndarray  # flat latent counts
    pi: np.ndarray
    psi: list[np.ndarray]
    eta: np.ndarray | None
    probs: np.ndarray  # flat marginal probabilities under (pi, psi)
    iteration: int = 0
    accepted: Counter = field(default_factory=Counter)
    proposed: Counter = field(default_factory=Counter)

    @property
    def params(self) -> LatentClassParams:
        return LatentClassParams(self.pi, tuple(self.psi), self.eta, validate=False)

    def acceptance_rates(self) -> dict[str, float]:
        return {b: self.accepted[b] / self.proposed[b] for b in sorted(self.proposed) if self.proposed[b]}


# -- helpers -----------------------------------------------------------------


def project_counts(noisy: np.ndarray, n: int) -> np.ndarray:
    """Clip to ``[0, n]`` and rescale to sum ``n`` with largest-remainder rounding."""
    x = np.clip(np.asarray(noisy, dtype=float), 0, n)
    if x.sum() == 0:
        x = np.ones_like(x)
    scaled = x * n / x.sum()
    base = np.floor(scaled).astype(np.int64)
    short = n - int(base.sum())
    if short:
        order = np.argsort(-(scaled - base), kind="stable")
        base[order[:short]] += 1
    return base


def _dirichlet_rows(conc: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_gamma(conc)
    return g / g.sum(axis=-1, keepdims=True)


def _table_loglik(state_M: np.ndarray, probs: np.ndarray, layout: CellLayout) -> np.ndarray:
    """Per-table multinomial kernel ``sum M log P`` (coefficients excluded)."""
    terms = xlogy(state_M, probs)
    return layout.per_table_sum(terms)


def composite_kernel(M: np.ndarray, probs: np.ndarray) -> float:
    """``sum_c M_c log P_c`` over all cells; ``-inf`` if a positive count has zero probability."""
    if np.any((M > 0) & (probs <= 0)):
        return -np.inf
    return float(xlogy(M, probs).sum())


def _log_weight_prior(state: ChainState, config: SamplerConfig, n: int) -> float:
    prior = config.prior
    if state.eta is not None:
        return gamma_logpdf(state.eta, prior.shape_for(config.k), prior.scale_for(n, config.k))
    return stick_breaking_logpdf(state.pi, prior.alpha)


def log_posterior(state: ChainState, problem: Problem, config: SamplerConfig) -> float:
    """Unnormalized joint log density of the current state (for diagnostics and tests)."""
    layout = problem.layout
    total = 0.0
    probs = layout.probs(state.pi, state.psi)
    if np.any((state.M > 0) & (probs <= 0)):
        return -np.inf
    n = problem.n
    tables = len(problem.queries)
    total += tables * gammaln(n + 1) - gammaln(state.M + 1).sum() + xlogy(state.M, probs).sum()
    if not problem.no_noise:
        alphas = problem.alphas[layout.table_of_cell]
        with np.errstate(divide="ignore"):
            total += (np.abs(problem.observed - state.M) * np.log(alphas)).sum()
    total += _log_weight_prior(state, config, n)
    for rows, conc in zip(state.psi, config.prior.dirichlet_for(problem.schema.levels)):
        total += dirichlet_logpdf(rows, conc).sum()
    return float(total)


# -- block updates -------------------------------------------------------------


def step_M(state: ChainState, problem: Problem, rng: np.random.Generator) -> ChainState:
    """Independence MH update of every latent table.

    All but the last cell of each table are proposed from a truncated two-sided
    geometric centred at the noisy count; the last cell takes up the rest of
    ``n`` and a negative remainder is rejected outright.
    """
    if problem.no_noise:
        raise ValueError("step_M needs noise metadata; the problem was built from true counts")
    layout = problem.layout
    n = problem.n
    last = layout.offsets[1:] - 1
    free = np.ones(layout.R, dtype=bool)
    free[last] = False
    alphas = problem.alphas[layout.table_of_cell]

    proposal = state.M.copy()
    proposal[free] = sample_truncated_two_sided_geom(problem.observed[free], alphas[free], 0, n, rng)
    free_sum = layout.per_table_sum(np.where(free, proposal, 0))
    proposal[last] = n - free_sum
    valid = proposal[last] >= 0

    with np.errstate(divide="ignore"):
        log_alpha = np.log(alphas)

    def log_target(M):
        noise = np.where(np.isneginf(log_alpha) & (problem.observed == M), 0.0,
                         np.abs(problem.observed - M) * log_alpha)
        terms = noise - gammaln(np.maximum(M, 0) + 1) + xlogy(np.maximum(M, 0), state.probs)
        bad = (M > 0) & (state.probs <= 0)
        terms = np.where(bad, -np.inf, terms)
        return layout.per_table_sum(terms)

    def log_proposal(M):
        g = np.zeros(layout.R)
        g[free] = truncated_two_sided_geom_logpmf(
            np.clip(M[free], 0, n), problem.observed[free], alphas[free], 0, n)
        return layout.per_table_sum(g)

    with np.errstate(invalid="ignore", divide="ignore"):
        log_ratio = (log_target(proposal) - log_target(state.M)
                     + log_proposal(state.M) - log_proposal(proposal))
    u = rng.random(len(problem.queries))
    accept = valid & (np.log(u) < np.nan_to_num(log_ratio, nan=-np.inf))
    if accept.any():
        take = accept[layout.table_of_cell]
        state.M = np.where(take, proposal, state.M)
    state.accepted["M"] += int(accept.sum())
    state.proposed["M"] += len(problem.queries)
    return state


def step_pi_dirichlet(state: ChainState, problem: Problem, config: SamplerConfig,
                      rng: np.random.Generator) -> ChainState:
    """Strategy 1: Dirichlet proposal centred on the current weights."""
    c, delta = config.c_pi, config.proposal_floor
    conc_fwd = c * state.pi + delta
    proposal = _dirichlet_rows(conc_fwd, rng)
    state.proposed["pi"] += 1
    if not np.all(proposal > 0) or not np.all(np.isfinite(proposal)):
        return state
    comp = problem.layout.class_products(state.psi)
    new_probs = proposal @ comp
    ll_new = composite_kernel(state.M, new_probs)
    ll_old = composite_kernel(state.M, state.probs)
    log_ratio = (
        ll_new - ll_old
        + stick_breaking_logpdf(proposal, config.prior.alpha)
        - stick_breaking_logpdf(state.pi, config.prior.alpha)
        + dirichlet_logpdf(state.pi, c * proposal + delta)
        - dirichlet_logpdf(proposal, conc_fwd)
    )
    if np.log(rng.random()) < log_ratio:
        state.pi, state.probs = proposal, new_probs
        state.accepted["pi"] += 1
    return state


def step_pi_gamma(state: ChainState, problem: Problem, config: SamplerConfig,
                  rng: np.random.Generator) -> ChainState:
    """Strategy 2: normal random walk on unnormalized weights ``eta``.

    Components are updated one at a time; a negative proposal is rejected.
    Updating jointly would let any near-empty class veto every move. With
    ``config.refresh_eta_scale`` the total ``sum(eta)``, which the likelihood
    cannot see, is then redrawn from its exact Gamma conditional.
    """
    if state.eta is None:
        raise ValueError("gamma reparameterization needs eta in the chain state")
    k, n = config.k, problem.n
    shape, scale = config.prior.shape_for(k), config.prior.scale_for(n, k)
    steps = config.step_size(n) * rng.standard_normal(k)
    log_u = np.log(rng.random(k))
    comp = problem.layout.class_products(state.psi)
    ll = composite_kernel(state.M, state.probs)
    for i in range(k):
        state.proposed["pi"] += 1
        proposal = state.eta.copy()
        proposal[i] += steps[i]
        if proposal[i] < 0 or not proposal.sum() > 0:
            continue
        pi_new = proposal / proposal.sum()
        new_probs = pi_new @ comp
        ll_new = composite_kernel(state.M, new_probs)
        log_ratio = (ll_new - ll + gamma_logpdf(proposal[i], shape[i], scale)
                     - gamma_logpdf(state.eta[i], shape[i], scale))
        if log_u[i] < log_ratio:
            state.eta, state.pi, state.probs, ll = proposal, pi_new, new_probs, ll_new
            state.accepted["pi"] += 1
    if config.refresh_eta_scale:
        total = rng.gamma(shape.sum(), scale)
        state.eta = state.pi * total
    return state


def step_psi(state: ChainState, problem: Problem, config: SamplerConfig,
             rng: np.random.Generator) -> ChainState:
    """Dirichlet-proposal MH update of each row ``psi[j][h]``, ``j`` outer, ``h`` inner."""
    layout = problem.layout
    c, delta = config.c_psi, config.proposal_floor
    priors = config.prior.dirichlet_for(problem.schema.levels)
    k = config.k
    for j in range(layout.p):
        rows = state.psi[j]
        conc_fwd = c * rows + delta
        proposals = _dirichlet_rows(conc_fwd, rng)
        log_u = np.log(rng.random(k))
        # terms that depend only on the row itself
        with np.errstate(invalid="ignore"):
            side = (
                dirichlet_logpdf(proposals, priors[j]) - dirichlet_logpdf(rows, priors[j])
                + dirichlet_logpdf(rows, c * proposals + delta) - dirichlet_logpdf(proposals, conc_fwd)
            )
        cells = layout.cells_of[j]
        state.proposed["psi"] += k
        if cells.size == 0:
            # variable absent from every table: the likelihood is flat in psi[j]
            for h in range(k):
                if np.all(proposals[h] > 0) and log_u[h] < side[h]:
                    rows[h] = proposals[h]
                    state.accepted["psi"] += 1
            continue
        lev = layout.levels_of[j]
        other = np.ones((k, cells.size))
        for v, pos, lv in layout.others_of[j]:
            other[:, pos] *= state.psi[v][:, lv]
        M = state.M[cells]
        P = state.probs[cells]
        ll = float(xlogy(M, P).sum())
        for h in range(k):
            prop = proposals[h]
            if not np.all(prop > 0) or not np.isfinite(side[h]):
                continue
            diff = state.pi[h] * (prop[lev] - rows[h, lev]) * other[h]
            P_new = P + diff
            if np.any(P_new <= 0):
                trial = rows.copy()
                trial[h] = prop
                P_new = state.pi @ (trial[:, lev] * other)
            if np.any((M > 0) & (P_new <= 0)):
                continue
            ll_new = float(xlogy(M, P_new).sum())
            if log_u[h] < ll_new - ll + side[h]:
                rows[h] = prop
                P, ll = P_new, ll_new
                state.accepted["psi"] += 1
        # exact refresh of this variable's cells
        state.probs[cells] = state.pi @ (rows[:, lev] * other)
    return state


def check_state(state: ChainState, problem: Problem) -> None:
    """Raise ``AssertionError`` if any chain-state invariant is broken."""
    layout = problem.layout
    assert np.all(state.M >= 0) and np.all(state.M <= problem.n), "latent count outside [0, n]"
    assert np.all(layout.per_table_sum(state.M) == problem.n), "latent table does not sum to n"
    state.params.check()
    assert np.allclose(state.probs, layout.probs(state.pi, state.psi), rtol=1e-9, atol=1e-14)


# -- driver ------------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Retained draws after burn-in and thinning, plus the full monitoring trace."""

    schema: Schema
    queries: list[MarginalQuery]
    n: int
    iterations: np.ndarray
    pi: np.ndarray  # (draws, k)
    psi: list[np.ndarray]  # per variable (draws, k, d_j)
    eta: np.ndarray | None
    M: np.ndarray | None  # (draws, R) latent counts, None for exact-count fits
    marginal_probs: np.ndarray  # (draws, R) monitored marginal probabilities
    trace: np.ndarray  # (iterations, R) monitored probabilities at every sweep
    acceptance: dict[str, float]
    config: SamplerConfig
    full_table: np.ndarray | None = None  # (draws, D) when monitored

    @property
    def layout(self) -> CellLayout:
        return CellLayout(self.queries, self.schema.levels)

    def __len__(self) -> int:
        return int(self.iterations.shape[0])

    @property
    def k(self) -> int:
        return int(self.pi.shape[1])

    def params(self, i: int) -> LatentClassParams:
        return LatentClassParams(self.pi[i], tuple(p[i] for p in self.psi),
                                 None if self.eta is None else self.eta[i], validate=False)

    def all_params(self) -> list[LatentClassParams]:
        return [self.params(i) for i in range(len(self))]

    def query_draws(self, t: int) -> np.ndarray:
        """Draws of the cell probabilities of monitored query ``t``, shape (draws, r_t)."""
        offsets = self.layout.offsets
        return self.marginal_probs[:, offsets[t]: offsets[t + 1]]

    def param_rows(self) -> np.ndarray:
        blocks = [self.pi] + [p.reshape(len(self), -1) for p in self.psi]
        return np.concatenate(blocks, axis=1)


def initial_state(problem: Problem, config: SamplerConfig, rng: np.random.Generator) -> ChainState:
    weights = "gamma" if config.pi_strategy == "gamma-reparam" else "stick"
    if problem.no_noise:
        M = problem.observed.copy()
    else:
        M = np.concatenate([
            project_counts(block, problem.n) for block in problem.layout.split(problem.observed)
        ])
    for _ in range(config.max_init_tries):
        params = sample_prior(config.prior, problem.schema, config.k, rng, weights=weights, n=problem.n)
        psi = [np.array(rows) for rows in params.psi]
        if any(np.any(rows <= 0) for rows in psi) or np.any(params.pi <= 0):
            continue
        probs = problem.layout.probs(params.pi, psi)
        if np.isfinite(composite_kernel(M, probs)):
            eta = None if params.eta is None else np.array(params.eta)
            return ChainState(M=M, pi=np.array(params.pi), psi=psi, eta=eta, probs=probs)
    raise NumericalError("could not draw an initial state with finite likelihood")


def run_chain(
    config: SamplerConfig,
    problem: Problem,
    monitor: Sequence[MarginalQuery] | None = None,
    state: ChainState | None = None,
) -> PosteriorDraws:
    """Run the sampler and keep draws after burn-in, thinned.

    ``monitor`` lists the marginal queries whose probabilities are traced
    (default: the fitted queries).
    """
    rng = stream(config.seed, "chain")
    if state is None:
        state = initial_state(problem, config, rng)
    monitor = list(problem.queries if monitor is None else monitor)
    mlayout = CellLayout(monitor, problem.schema.levels)
    same_layout = [q.variables for q in monitor] == [q.variables for q in problem.queries]

    nd = config.n_draws
    k = config.k
    keep_iters = []
    pi_d = np.empty((nd, k))
    psi_d = [np.empty((nd, k, d)) for d in problem.schema.levels]
    eta_d = np.empty((nd, k)) if state.eta is not None else None
    M_d = None if problem.no_noise else np.empty((nd, problem.layout.R), dtype=np.int64)
    marg_d = np.empty((nd, mlayout.R))
    trace = np.empty((config.iterations, mlayout.R))
    full_d = None
    if config.monitor_full_table:
        problem.schema.check_full_table()
        full_d = np.empty((nd, problem.schema.full_table_size))

    step_pi = step_pi_gamma if config.pi_strategy == "gamma-reparam" else step_pi_dirichlet
    slot = 0
    for it in range(config.iterations):
        if not problem.no_noise:
            step_M(state, problem, rng)
        step_pi(state, problem, config, rng)
        step_psi(state, problem, config, rng)
        state.iteration = it + 1
        probs = state.probs if same_layout else mlayout.probs(state.pi, state.psi)
        trace[it] = probs
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0 and slot < nd:
            if config.check_invariants:
                check_state(state, problem)
            keep_iters.append(it + 1)
            pi_d[slot] = state.pi
            for j, rows in enumerate(state.psi):
                psi_d[j][slot] = rows
            if eta_d is not None:
                eta_d[slot] = state.eta
            if M_d is not None:
                M_d[slot] = state.M
            marg_d[slot] = probs
            if full_d is not None:
                full_d[slot] = full_table_probs(state.params)
            slot += 1

    return PosteriorDraws(
        schema=problem.schema, queries=monitor, n=problem.n, iterations=np.asarray(keep_iters),
        pi=pi_d, psi=psi_d, eta=eta_d, M=M_d, marginal_probs=marg_d, trace=trace,
        acceptance=state.acceptance_rates(), config=config, full_table=full_d,
    )


def tuning_warnings(acceptance: dict[str, float], low: float = 0.1, high: float = 0.7) -> list[str]:
    return [
        f"block {block!r} acceptance {rate:.3f} outside [{low}, {high}]"
        for block, rate in acceptance.items() if not low <= rate <= high
    ]


# -- output files --------------------------------------------------------------


def write_trace_csv(path: str | Path, draws: PosteriorDraws) -> None:
    layout = draws.layout
    p = draws.schema.p
    header = ["iteration"]
    for t, q in enumerate(layout.queries):
        header += [q.cell_label(c, p) for c in range(q.r)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for it, row in enumerate(draws.trace, start=1):
            fh.write(str(it) + "," + ",".join(repr(float(x)) for x in row) + "\n")


def write_latent_counts_csv(path: str | Path, draws: PosteriorDraws) -> None:
    if draws.M is None:
        raise ValueError("exact-count fits have no latent count draws")
    header = ["iteration"] + [
        f"M[{t}][{c}]" for t, q in enumerate(draws.queries) for c in range(q.r)
    ]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for it, row in zip(draws.iterations, draws.M):
            fh.write(str(int(it)) + "," + ",".join(str(int(x)) for x in row) + "\n")


def write_acceptance_json(path: str | Path, draws: PosteriorDraws) -> None:
    Path(path).write_text(json.dumps({
        "acceptance": draws.acceptance,
        "warnings": tuning_warnings(draws.acceptance),
    }, indent=2) + "\n")
