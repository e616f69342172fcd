"""Two-sided geometric noise and the Geometric mechanism for marginal counts.

Noise with scale ``alpha`` has pmf ``(1 - alpha) / (1 + alpha) * alpha**|k|``.
Releasing ``T`` tables under a total budget ``epsilon`` spends ``epsilon / T``
on each table (sequential composition), so every count in table ``t`` gets
noise with ``alpha_t = exp(-epsilon_t / sensitivity)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .streams import stream
from .tables import CountKind, CountVector, MarginalQuery, Schema, SchemaError

RELEASE_FORMAT_VERSION = 1


def _check_alpha(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0) or np.any(a >= 1):
        raise ValueError(f"noise scale alpha must lie in [0, 1), got {alpha}")
    return a


def noise_scale(epsilon: float, sensitivity: float = 2) -> float:
    """``exp(-epsilon / sensitivity)``; ``epsilon = inf`` gives 0 (no noise)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return math.exp(-epsilon / sensitivity)


def two_sided_geom_logpmf(k, alpha):
    a = _check_alpha(alpha)
    k = np.abs(np.asarray(k))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_norm = np.log1p(-a) - np.log1p(a)
        out = log_norm + np.where(k == 0, 0.0, k * np.log(a))
    return out


def two_sided_geom_pmf(k, alpha):
    return np.exp(two_sided_geom_logpmf(k, alpha))


def sample_two_sided_geom(alpha, rng: np.random.Generator, size=None):
    """Draw two-sided geometric noise as a difference of two geometric variables."""
    a = _check_alpha(alpha)
    p = 1.0 - a
    return rng.geometric(p, size=size) - rng.geometric(p, size=size)


# -- truncated two-sided geometric -------------------------------------------


def _log_mass(log_a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """log of sum_{j=0}^{m-1} a**j for m >= 1 (a in [0, 1))."""
    # callers evaluate both branches of np.where; keep unused entries harmless
    m = np.maximum(m, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # 1 - a**m computed as -expm1(m log a)
        out = np.log(-np.expm1(m * log_a)) - np.log(-np.expm1(log_a))
    return np.where(np.isneginf(log_a), 0.0, out)


def _log_norm_truncated(center, log_a, lower, upper):
    inside = (center >= lower) & (center <= upper)
    below = center < lower
    # center inside: left run (center-lower+1 terms) plus right run starting at a**1
    left = _log_mass(log_a, center - lower + 1)
    right_terms = upper - center
    with np.errstate(invalid="ignore"):
        right = np.where(right_terms > 0, log_a + _log_mass(log_a, np.maximum(right_terms, 1)), -np.inf)
    z_inside = np.logaddexp(left, right)
    width = upper - lower + 1
    with np.errstate(invalid="ignore"):
        z_below = (lower - center) * log_a + _log_mass(log_a, width)
        z_above = (center - upper) * log_a + _log_mass(log_a, width)
    return np.where(inside, z_inside, np.where(below, z_below, z_above))


def truncated_two_sided_geom_logpmf(k, center, alpha, lower, upper):
    """log pmf proportional to ``alpha**|k - center|`` on ``[lower, upper]``."""
    a = _check_alpha(alpha)
    k, center, lower, upper = np.broadcast_arrays(
        np.asarray(k, dtype=np.int64), np.asarray(center, dtype=np.int64),
        np.asarray(lower, dtype=np.int64), np.asarray(upper, dtype=np.int64),
    )
    if np.any(lower > upper):
        raise ValueError("empty support: lower > upper")
    with np.errstate(divide="ignore"):
        log_a = np.broadcast_to(np.log(a), k.shape)
    dist = np.abs(k - center)
    zero_noise = np.isneginf(log_a)
    if np.any(zero_noise):
        # all mass at the support point nearest the center
        nearest = np.clip(center, lower, upper)
        point = np.where(k == nearest, 0.0, -np.inf)
    else:
        point = None
    with np.errstate(invalid="ignore"):
        out = dist * log_a - _log_norm_truncated(center, log_a, lower, upper)
    out = np.where((k < lower) | (k > upper), -np.inf, out)
    if point is not None:
        out = np.where(zero_noise, point, out)
    return out


def truncated_two_sided_geom_pmf(k, center, alpha, lower, upper):
    return np.exp(truncated_two_sided_geom_logpmf(k, center, alpha, lower, upper))


def _truncated_geometric_offset(u, log_a, m):
    """Inverse-cdf draw of j in {0..m-1} with P(j) proportional to a**j."""
    with np.errstate(divide="ignore", invalid="ignore"):
        total = -np.expm1(m * log_a)  # 1 - a**m
        j = np.floor(np.log1p(-u * total) / log_a)
    j = np.where(np.isfinite(j), j, 0)
    return np.clip(j, 0, m - 1).astype(np.int64)


def sample_truncated_two_sided_geom(center, alpha, lower, upper, rng: np.random.Generator):
    """Draw from the two-sided geometric centred at ``center`` restricted to ``[lower, upper]``.

    Vectorized over ``center``; sampling is exact (no rejection).
    """
    a = _check_alpha(alpha)
    center, lower, upper = np.broadcast_arrays(
        np.asarray(center, dtype=np.int64), np.asarray(lower, dtype=np.int64),
        np.asarray(upper, dtype=np.int64),
    )
    if np.any(lower > upper):
        raise ValueError("empty support: lower > upper")
    shape = center.shape
    with np.errstate(divide="ignore"):
        log_a = np.broadcast_to(np.log(a), shape).astype(float)
    u_side = rng.random(shape)
    u = rng.random(shape)

    below = center < lower
    above = center > upper
    inside = ~(below | above)

    out = np.empty(shape, dtype=np.int64)
    width = upper - lower + 1
    out = np.where(below, lower + _truncated_geometric_offset(u, log_a, width), out)
    out = np.where(above, upper - _truncated_geometric_offset(u, log_a, width), out)

    left_terms = center - lower + 1
    right_terms = upper - center
    log_left = _log_mass(log_a, np.maximum(left_terms, 1))
    with np.errstate(invalid="ignore"):
        log_right = np.where(right_terms > 0, log_a + _log_mass(log_a, np.maximum(right_terms, 1)), -np.inf)
    p_left = np.exp(log_left - np.logaddexp(log_left, log_right))
    go_left = u_side < p_left
    left_draw = center - _truncated_geometric_offset(u, log_a, np.maximum(left_terms, 1))
    right_draw = center + 1 + _truncated_geometric_offset(u, log_a, np.maximum(right_terms, 1))
    out = np.where(inside & go_left, left_draw, out)
    out = np.where(inside & ~go_left, right_draw, out)

    zero_noise = np.isneginf(log_a)
    out = np.where(zero_noise, np.clip(center, lower, upper), out)
    return out if shape else int(out)


# -- budget and mechanism ----------------------------------------------------


@dataclass(frozen=True)
class PrivacyBudget:
    """Total epsilon split across ``n_tables`` tables (uniformly unless weighted)."""

    epsilon_total: float
    n_tables: int
    sensitivity: int = 2
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.epsilon_total > 0:
            raise ValueError("epsilon_total must be positive")
        if not self.sensitivity > 0:
            raise ValueError("sensitivity must be positive")
        if self.n_tables < 1:
            raise ValueError("at least one table is required")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != self.n_tables or any(x <= 0 for x in w):
                raise ValueError("weights must be positive, one per table")
            object.__setattr__(self, "weights", w)

    @property
    def per_table_epsilon(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_tables, self.epsilon_total / self.n_tables)
        w = np.asarray(self.weights)
        return self.epsilon_total * w / w.sum()

    @property
    def alphas(self) -> np.ndarray:
        return np.array([noise_scale(e, self.sensitivity) for e in self.per_table_epsilon])


def geometric_mechanism(
    counts: Sequence[CountVector], budget: PrivacyBudget, seed: int | np.random.SeedSequence
) -> list[CountVector]:
    """Add independent two-sided geometric noise to every count.

    Table ``t`` draws from the stream ``("geometric", t)`` of ``seed`` so each
    table's noise is reproducible on its own.
    """
    if len(counts) != budget.n_tables:
        raise ValueError(f"budget is for {budget.n_tables} tables, got {len(counts)}")
    out = []
    for t, (cv, alpha) in enumerate(zip(counts, budget.alphas)):
        if cv.kind is not CountKind.TRUE:
            raise ValueError("the mechanism takes true counts")
        noise = sample_two_sided_geom(alpha, stream(seed, "geometric", t), size=cv.query.r)
        out.append(CountVector(cv.query, cv.counts + noise, CountKind.NOISY))
    return out


# -- release file ------------------------------------------------------------


@dataclass(frozen=True)
class NoisyRelease:
    """Everything that crosses the privacy barrier."""

    schema: Schema
    n: int
    budget: PrivacyBudget
    tables: tuple[CountVector, ...]

    @property
    def queries(self) -> list[MarginalQuery]:
        return [t.query for t in self.tables]

    @property
    def alphas(self) -> np.ndarray:
        return self.budget.alphas


def release_to_dict(release: NoisyRelease) -> dict:
    schema = release.schema
    blocks = []
    for cv, eps, alpha in zip(release.tables, release.budget.per_table_epsilon, release.alphas):
        blocks.append({
            "variables": [schema.names[v] for v in cv.query.variables],
            "epsilon": float(eps),
            "sensitivity": release.budget.sensitivity,
            "alpha": float(alpha),
            "counts": [int(c) for c in cv.counts],
        })
    return {
        "format_version": RELEASE_FORMAT_VERSION,
        "kind": "noisy-marginal-release",
        "schema": schema.to_dict(),
        "n": int(release.n),
        "epsilon_total": float(release.budget.epsilon_total),
        "sensitivity": release.budget.sensitivity,
        "weights": list(release.budget.weights) if release.budget.weights else None,
        "tables": blocks,
    }


def release_from_dict(data: dict, schema: Schema | None = None) -> NoisyRelease:
    if not isinstance(data, dict):
        raise SchemaError("release must be a JSON object")
    try:
        return _release_from_dict(data, schema)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed release: missing or invalid field {exc}") from None


def _release_from_dict(data: dict, schema: Schema | None) -> NoisyRelease:
    if data.get("format_version") != RELEASE_FORMAT_VERSION:
        raise SchemaError(f"unsupported release format version {data.get('format_version')!r}")
    file_schema = Schema.from_dict(data["schema"])
    if schema is not None and schema != file_schema:
        raise SchemaError("release schema does not match the configured schema")
    tables = []
    seen = set()
    for block in data["tables"]:
        query = file_schema.query(block["variables"])
        if query.variables in seen:
            raise SchemaError(f"duplicate query {block['variables']} in release")
        seen.add(query.variables)
        tables.append(CountVector(query, block["counts"], CountKind.NOISY))
    budget = PrivacyBudget(
        epsilon_total=float(data["epsilon_total"]),
        n_tables=len(tables),
        sensitivity=int(data.get("sensitivity", 2)),
        weights=tuple(data["weights"]) if data.get("weights") else None,
    )
    for block, alpha in zip(data["tables"], budget.alphas):
        if "alpha" in block and not math.isclose(block["alpha"], alpha, rel_tol=1e-12, abs_tol=1e-15):
            raise SchemaError("recorded alpha disagrees with epsilon and sensitivity")
    return NoisyRelease(file_schema, int(data["n"]), budget, tuple(tables))


def write_release(path: str | Path, release: NoisyRelease) -> None:
    Path(path).write_text(json.dumps(release_to_dict(release), indent=2) + "\n")


def read_release(path: str | Path, schema: Schema | None = None) -> NoisyRelease:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed release file ({exc})") from None
    return release_from_dict(data, schema)
