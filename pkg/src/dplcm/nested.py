"""Nested household/individual latent class model fitted to household summaries.

Households have a head plus two other members. Household-level variables
are ownership, head's gender and head's race; each other member has a
gender, a race and a relationship to the head. A household class ``g``
is drawn from ``pi``; each member then draws an individual class ``m`` from
``w[g]``.

Five household summaries are modelled, each as a binomial count over the
``N`` households:

1. all members white
2. dwelling owned
3. all members of the same race
4. a spouse is present
5. a spouse of the head's race is present
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from .mechanism import (
    noise_scale,
    sample_truncated_two_sided_geom,
    sample_two_sided_geom,
    truncated_two_sided_geom_logpmf,
    two_sided_geom_logpmf,
)
from .model import ParameterError, SIMPLEX_TOL
from .streams import stream
from .tables import SchemaError

NESTED_FORMAT_VERSION = 1
N_SUMMARIES = 5

RACE_LABELS = (
    "white", "black", "american indian or alaska native", "chinese", "japanese",
    "other asian/pacific islander", "other race", "two major races", "three or more major races",
)
RELATIONSHIP_LABELS = (
    "spouse", "biological child", "adopted child", "stepchild", "sibling", "parent",
    "grandchild", "parent-in-law", "child-in-law", "other relative",
    "boarder, roommate or partner", "other non-relative or foster child",
)
OWNERSHIP_LABELS = ("rented", "owned")
GENDER_LABELS = ("male", "female")

OWNED = 1
WHITE = 0
SPOUSE = 0

#: Column order of simulated household records.
HOUSEHOLD_COLUMNS = ("own", "hh_gender", "hh_race", "gender1", "race1", "rel1", "gender2", "race2", "rel2")

#: Summary counts of a 602-household ACS extract, usable as a likelihood fixture.
EXAMPLE_N = 602
EXAMPLE_COUNTS = (427, 440, 552, 401, 376)

_BLOCKS = ("own", "hh_gender", "hh_race", "gender", "race", "relation")


@dataclass(frozen=True)
class NestedModelParams:
    """Parameters of the nested model.

    Shapes: ``pi (G,)``, ``w (G, M)``, household rows ``own (G, 2)``,
    ``hh_gender (G, 2)``, ``hh_race (G, R)``; individual rows
    ``gender (G, M, 2)``, ``race (G, M, R)``, ``relation (G, M, L)``.
    """

    pi: np.ndarray
    w: np.ndarray
    own: np.ndarray
    hh_gender: np.ndarray
    hh_race: np.ndarray
    gender: np.ndarray
    race: np.ndarray
    relation: np.ndarray

    def __post_init__(self):
        for name in ("pi", "w") + _BLOCKS:
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.check()

    @property
    def G(self) -> int:
        return self.pi.shape[0]

    @property
    def M(self) -> int:
        return self.w.shape[1]

    @property
    def races(self) -> int:
        return self.hh_race.shape[1]

    @property
    def relationships(self) -> int:
        return self.relation.shape[2]

    def check(self) -> None:
        G = self.pi.shape[0]
        M = self.w.shape[-1]
        R = self.hh_race.shape[-1]
        shapes = {
            "pi": (G,), "w": (G, M), "own": (G, 2), "hh_gender": (G, 2), "hh_race": (G, R),
            "gender": (G, M, 2), "race": (G, M, R), "relation": (G, M, self.relation.shape[-1]),
        }
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ParameterError(f"{name} has shape {arr.shape}, expected {shape}")
            if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1) > SIMPLEX_TOL):
                raise ParameterError(f"{name} rows must be probability vectors")
        if R < 1 or self.relation.shape[-1] <= SPOUSE:
            raise ParameterError("need at least one race and one relationship level")

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in ("pi", "w") + _BLOCKS}

    @classmethod
    def from_dict(cls, data: dict) -> "NestedModelParams":
        return cls(**{name: np.asarray(data[name], dtype=float) for name in ("pi", "w") + _BLOCKS})


def random_nested_params(G: int, M: int, races: int, relationships: int, rng: np.random.Generator,
                         concentration: float = 1.0) -> NestedModelParams:
    """Draw every simplex vector from a symmetric Dirichlet."""
    def draw(*shape):
        return rng.dirichlet(np.full(shape[-1], concentration), size=shape[:-1])

    return NestedModelParams(
        pi=draw(G), w=draw(G, M), own=draw(G, 2), hh_gender=draw(G, 2), hh_race=draw(G, races),
        gender=draw(G, M, 2), race=draw(G, M, races), relation=draw(G, M, relationships),
    )


def nested_cell_probability(params: NestedModelParams, x: Sequence[int]) -> float:
    """Probability of one household ``x = (x0, x1, x2, x11, x12, x13, x21, x22, x23)``."""
    if len(x) != 9:
        raise SchemaError("a household has nine values")
    x = [int(v) for v in x]
    dims = (2, 2, params.races, 2, params.races, params.relationships, 2, params.races, params.relationships)
    for v, d in zip(x, dims):
        if not 0 <= v < d:
            raise IndexError(f"level {v} out of range for dimension {d}")
    head = params.own[:, x[0]] * params.hh_gender[:, x[1]] * params.hh_race[:, x[2]]
    ind1 = (params.w * params.gender[:, :, x[3]] * params.race[:, :, x[4]] * params.relation[:, :, x[5]]).sum(1)
    ind2 = (params.w * params.gender[:, :, x[6]] * params.race[:, :, x[7]] * params.relation[:, :, x[8]]).sum(1)
    return float(np.dot(params.pi, head * ind1 * ind2))


def _summary_vector(pi, w, own, hh_race, race, relation) -> np.ndarray:
    a = (w * relation[:, :, SPOUSE]).sum(axis=1)                        # (G,)
    c = np.einsum("gm,gmr->gr", w, race)                                # (G, R)
    b = np.einsum("gm,gmr->gr", w * relation[:, :, SPOUSE], race)       # (G, R)
    # clip guards rounding just past 1 when a factor is exactly one
    return np.clip([
        pi @ (hh_race[:, WHITE] * c[:, WHITE] ** 2),
        pi @ own[:, OWNED],
        pi @ (hh_race * c ** 2).sum(axis=1),
        pi @ (2 * a - a ** 2),
        pi @ (hh_race * (2 * b - b ** 2)).sum(axis=1),
    ], 0.0, 1.0)


def summary_probabilities(params: NestedModelParams) -> np.ndarray:
    """Model probabilities of the five household summaries."""
    return _summary_vector(params.pi, params.w, params.own, params.hh_race, params.race, params.relation)


def summary_probability(params: NestedModelParams, which: int) -> float:
    """Probability of summary ``which`` (1..5)."""
    if which not in range(1, N_SUMMARIES + 1):
        raise ValueError("summary index must be in 1..5")
    return float(summary_probabilities(params)[which - 1])


def binomial_loglik(S, N: int, probs) -> np.ndarray:
    """Per-summary binomial log-pmf; ``-inf`` for impossible counts."""
    S = np.asarray(S, dtype=float)
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, 1.0)
    return (gammaln(N + 1) - gammaln(S + 1) - gammaln(N - S + 1)
            + xlogy(S, probs) + xlogy(N - S, 1 - probs))


# -- summary counts -----------------------------------------------------------


@dataclass(frozen=True)
class NestedSummarySet:
    """Five household summary counts, exact or noised.

    ``epsilons`` and ``alphas`` are per-count; both are ``None`` for exact counts.
    """

    N: int
    counts: tuple[int, ...]
    epsilon_total: float | None = None
    epsilons: tuple[float, ...] | None = None
    sensitivity: float = 1.0

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != N_SUMMARIES:
            raise SchemaError("need exactly five summary counts")
        if self.N < 1:
            raise SchemaError("N must be positive")
        object.__setattr__(self, "counts", counts)
        if self.epsilon_total is None:
            if any(not 0 <= c <= self.N for c in counts):
                raise SchemaError("exact summary counts must lie in [0, N]")
            object.__setattr__(self, "epsilons", None)
            return
        eps = self.epsilons
        if eps is None:
            eps = (self.epsilon_total / N_SUMMARIES,) * N_SUMMARIES
        eps = tuple(float(e) for e in eps)
        if len(eps) != N_SUMMARIES or any(not e > 0 for e in eps):
            raise SchemaError("need five positive per-count epsilons")
        if abs(sum(eps) - self.epsilon_total) > 1e-9 * max(1.0, self.epsilon_total):
            raise SchemaError("per-count epsilons must sum to epsilon_total")
        object.__setattr__(self, "epsilons", eps)

    @property
    def noisy(self) -> bool:
        return self.epsilon_total is not None

    @property
    def alphas(self) -> np.ndarray | None:
        if not self.noisy:
            return None
        return np.array([noise_scale(e, self.sensitivity) for e in self.epsilons])

    def to_dict(self) -> dict:
        alphas = self.alphas
        return {
            "format_version": NESTED_FORMAT_VERSION,
            "kind": "nested-summaries",
            "N": self.N,
            "counts": list(self.counts),
            "epsilon_total": self.epsilon_total,
            "epsilons": None if self.epsilons is None else list(self.epsilons),
            "sensitivity": self.sensitivity,
            "alphas": None if alphas is None else alphas.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NestedSummarySet":
        if data.get("format_version") != NESTED_FORMAT_VERSION:
            raise SchemaError(f"unsupported summary format version {data.get('format_version')!r}")
        try:
            out = cls(int(data["N"]), tuple(data["counts"]), data.get("epsilon_total"),
                      None if data.get("epsilons") is None else tuple(data["epsilons"]),
                      float(data.get("sensitivity", 1.0)))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed summary file: {exc}") from None
        return out


def write_summaries(path: str | Path, summaries: NestedSummarySet) -> None:
    Path(path).write_text(json.dumps(summaries.to_dict(), indent=2) + "\n")


def read_summaries(path: str | Path) -> NestedSummarySet:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return NestedSummarySet.from_dict(data)


def simulate_households(params: NestedModelParams, N: int, rng: np.random.Generator) -> np.ndarray:
    """``N`` household records with columns :data:`HOUSEHOLD_COLUMNS`."""
    def pick(rows):
        cdf = np.cumsum(rows, axis=-1)
        cdf[:, -1] = 1.0
        idx = (rng.random(rows.shape[0])[:, None] >= cdf).sum(axis=1)
        return np.minimum(idx, rows.shape[1] - 1)

    g = rng.choice(params.G, size=N, p=params.pi)
    cols = [pick(params.own[g]), pick(params.hh_gender[g]), pick(params.hh_race[g])]
    for _ in range(2):
        m = pick(params.w[g])
        cols += [pick(params.gender[g, m]), pick(params.race[g, m]), pick(params.relation[g, m])]
    return np.stack(cols, axis=1).astype(np.int64).reshape(N, 9)


def household_summaries(records: np.ndarray) -> np.ndarray:
    """Counts of the five summary events over household records."""
    r = np.asarray(records).reshape(-1, 9)
    hh_race, race1, race2 = r[:, 2], r[:, 4], r[:, 7]
    sp1, sp2 = r[:, 5] == SPOUSE, r[:, 8] == SPOUSE
    events = [
        (hh_race == WHITE) & (race1 == WHITE) & (race2 == WHITE),
        r[:, 0] == OWNED,
        (hh_race == race1) & (hh_race == race2),
        sp1 | sp2,
        (sp1 & (race1 == hh_race)) | (sp2 & (race2 == hh_race)),
    ]
    return np.array([int(e.sum()) for e in events], dtype=np.int64)


def protect_summaries(counts: Sequence[int], N: int, epsilon_total: float, seed: int,
                      sensitivity: float = 1.0, epsilons: Sequence[float] | None = None) -> NestedSummarySet:
    """Add two-sided geometric noise to each summary count (budget split evenly by default)."""
    if not epsilon_total > 0:
        raise ValueError("epsilon_total must be positive")
    template = NestedSummarySet(N, tuple(counts), epsilon_total,
                                None if epsilons is None else tuple(epsilons), sensitivity)
    noise = np.array([
        int(sample_two_sided_geom(a, stream(seed, "nested-geometric", t)))
        for t, a in enumerate(template.alphas)
    ])
    noisy = np.asarray(template.counts) + noise
    return NestedSummarySet(N, tuple(int(c) for c in noisy), epsilon_total, template.epsilons, sensitivity)


def nested_log_likelihood(params: NestedModelParams, summaries: NestedSummarySet, S: Sequence[int]) -> float:
    """Binomial log-likelihood of latent counts ``S`` plus noise terms for noisy summaries."""
    S = np.asarray(S, dtype=np.int64)
    if S.shape != (N_SUMMARIES,):
        raise ValueError("need five latent counts")
    if np.any(S < 0) or np.any(S > summaries.N):
        raise ValueError("latent counts must lie in [0, N]")
    ll = float(binomial_loglik(S, summaries.N, summary_probabilities(params)).sum())
    if summaries.noisy:
        ll += float(two_sided_geom_logpmf(np.asarray(summaries.counts) - S, summaries.alphas).sum())
    return ll


# -- sampler ------------------------------------------------------------------


@dataclass(frozen=True)
class NestedChainConfig:
    G: int = 2
    M: int = 2
    races: int = len(RACE_LABELS)
    relationships: int = len(RELATIONSHIP_LABELS)
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 5
    concentration: float = 100.0
    proposal_floor: float = 0.01
    seed: int = 0
    max_init_tries: int = 50

    def __post_init__(self):
        if min(self.G, self.M, self.races) < 1 or self.relationships < 1:
            raise ValueError("class counts and level counts must be positive")
        if self.iterations < 1 or self.thin < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations and thin >= 1")
        if not (self.concentration > 0 and self.proposal_floor > 0):
            raise ValueError("proposal concentration and floor must be positive")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)


@dataclass
class NestedDraws:
    probs: np.ndarray        # (draws, 5) summary probabilities
    S: np.ndarray            # (draws, 5) latent counts
    iterations: np.ndarray
    trace: np.ndarray        # (iterations, 5)
    params: list[NestedModelParams]
    acceptance: dict[str, float]
    config: NestedChainConfig

    def __len__(self) -> int:
        return int(self.iterations.shape[0])


def _dir_logpdf(x: np.ndarray, conc: np.ndarray) -> float:
    return float(gammaln(conc.sum()) - gammaln(conc).sum() + xlogy(conc - 1, x).sum())


def run_nested_chain(config: NestedChainConfig, summaries: NestedSummarySet) -> NestedDraws:
    """MH-within-Gibbs over the latent summary counts and every simplex parameter.

    All simplex vectors have uniform priors. Head and member gender do not
    enter any summary, so their rows are redrawn exactly from the prior.
    """
    rng = stream(config.seed, "nested-chain")
    N = summaries.N
    G, Mc, R, L = config.G, config.M, config.races, config.relationships
    c, floor = config.concentration, config.proposal_floor
    observed = np.asarray(summaries.counts, dtype=np.int64)
    alphas = summaries.alphas

    if summaries.noisy:
        S = np.clip(observed, 0, N)
    else:
        S = observed.copy()

    for _ in range(config.max_init_tries):
        init = random_nested_params(G, Mc, R, L, rng)
        blocks = {name: np.array(getattr(init, name)) for name in ("pi", "w") + _BLOCKS}
        if all(np.all(v > 0) for v in blocks.values()):
            probs = _summary_vector(blocks["pi"], blocks["w"], blocks["own"], blocks["hh_race"],
                                    blocks["race"], blocks["relation"])
            ll = binomial_loglik(S, N, probs)
            if np.all(np.isfinite(ll)):
                break
    else:
        from .sampler import NumericalError
        raise NumericalError("could not draw an initial nested state with finite likelihood")

    # (block name, index) pairs for the MH simplex updates
    sites = [("pi", ())]
    for g in range(G):
        sites += [("w", (g,)), ("own", (g,)), ("hh_race", (g,))]
        for m in range(Mc):
            sites += [("race", (g, m)), ("relation", (g, m))]

    accepted, proposed = Counter(), Counter()
    nd = config.n_draws
    probs_d = np.empty((nd, N_SUMMARIES))
    S_d = np.empty((nd, N_SUMMARIES), dtype=np.int64)
    trace = np.empty((config.iterations, N_SUMMARIES))
    kept_params, kept_iters = [], []

    def current_probs():
        return _summary_vector(blocks["pi"], blocks["w"], blocks["own"], blocks["hh_race"],
                               blocks["race"], blocks["relation"])

    for it in range(config.iterations):
        if summaries.noisy:
            # independence proposals centred on the noisy counts
            prop = sample_truncated_two_sided_geom(observed, alphas, 0, N, rng)
            lq_new = truncated_two_sided_geom_logpmf(prop, observed, alphas, 0, N)
            lq_old = truncated_two_sided_geom_logpmf(S, observed, alphas, 0, N)
            new_ll = binomial_loglik(prop, N, probs)
            log_r = (new_ll - ll
                     + two_sided_geom_logpmf(observed - prop, alphas)
                     - two_sided_geom_logpmf(observed - S, alphas)
                     + lq_old - lq_new)
            take = np.log(rng.random(N_SUMMARIES)) < log_r
            S = np.where(take, prop, S)
            ll = np.where(take, new_ll, ll)
            accepted["S"] += int(take.sum())
            proposed["S"] += N_SUMMARIES

        for name, idx in sites:
            arr = blocks[name]
            cur = arr[idx].copy()
            conc_fwd = c * cur + floor
            new = rng.dirichlet(conc_fwd)
            proposed[name] += 1
            if np.any(new <= 0):
                continue
            arr[idx] = new
            new_probs = current_probs()
            new_ll = binomial_loglik(S, N, new_probs)
            log_r = (new_ll.sum() - ll.sum()
                     + _dir_logpdf(cur, c * new + floor) - _dir_logpdf(new, conc_fwd))
            if np.log(rng.random()) < log_r:
                probs, ll = new_probs, new_ll
                accepted[name] += 1
            else:
                arr[idx] = cur

        blocks["hh_gender"] = rng.dirichlet(np.ones(2), size=G)
        blocks["gender"] = rng.dirichlet(np.ones(2), size=(G, Mc))

        trace[it] = probs
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0 and len(kept_iters) < nd:
            slot = len(kept_iters)
            probs_d[slot] = probs
            S_d[slot] = S
            kept_iters.append(it + 1)
            kept_params.append(NestedModelParams(**{k: v.copy() for k, v in blocks.items()}))

    acceptance = {name: accepted[name] / proposed[name] for name in proposed if proposed[name]}
    return NestedDraws(probs_d, S_d, np.asarray(kept_iters), trace, kept_params, acceptance, config)
