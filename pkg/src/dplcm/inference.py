"""Posterior summaries, synthetic microdata and combining rules."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .model import LatentClassParams, full_table_probs
from .sampler import PosteriorDraws
from .streams import stream
from .tables import MarginalQuery, RecordTable, Schema, marginal_counts, write_records_csv

SUMMARY_FORMAT_VERSION = 1


def credible_interval(draws, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed interval from linearly interpolated order statistics."""
    x = np.asarray(draws, dtype=float).reshape(-1)
    if x.size < 2:
        raise ValueError("need at least two draws")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    tail = (1 - level) / 2
    lo, hi = np.quantile(x, [tail, 1 - tail], method="linear")
    return float(lo), float(hi)


def credible_intervals(draws: np.ndarray, level: float = 0.95) -> np.ndarray:
    """Column-wise intervals for a ``(draws, cells)`` array, shape ``(cells, 2)``."""
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a 2-d array with at least two draws")
    tail = (1 - level) / 2
    return np.quantile(x, [tail, 1 - tail], axis=0, method="linear").T


@dataclass(frozen=True)
class ProbabilitySummary:
    target: str
    mean: float
    lo: float
    hi: float
    level: float = 0.95

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("interval bounds out of order")


def summarize_draws(draws: PosteriorDraws, level: float = 0.95) -> list[ProbabilitySummary]:
    """Mean and credible interval of every monitored marginal cell."""
    ci = credible_intervals(draws.marginal_probs, level)
    means = draws.marginal_probs.mean(axis=0)
    p = draws.schema.p
    labels = [q.cell_label(c, p) for q in draws.queries for c in range(q.r)]
    return [
        ProbabilitySummary(lab, float(m), float(lo), float(hi), level)
        for lab, m, (lo, hi) in zip(labels, means, ci)
    ]


def summaries_to_dict(summaries: Sequence[ProbabilitySummary], **extra) -> dict:
    return {
        "format_version": SUMMARY_FORMAT_VERSION,
        "kind": "posterior-summary",
        **extra,
        "targets": [
            {"target": s.target, "mean": s.mean, "lo": s.lo, "hi": s.hi, "level": s.level}
            for s in summaries
        ],
    }


def full_table_estimate(draws: PosteriorDraws | Sequence[LatentClassParams]) -> np.ndarray:
    """Posterior mean of the full-table probability vector (one pass)."""
    if isinstance(draws, PosteriorDraws):
        if draws.full_table is not None:
            return draws.full_table.mean(axis=0)
        draws.schema.check_full_table()
        items = draws.all_params()
    else:
        items = list(draws)
    if not items:
        raise ValueError("no draws")
    mean = None
    for i, params in enumerate(items, start=1):
        vec = full_table_probs(params)
        if mean is None:
            mean = vec.copy()
        else:
            mean += (vec - mean) / i
    return mean


# -- synthesis ----------------------------------------------------------------


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse CDF; ``cdf`` has one row per record."""
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def generate_synthetic(params: LatentClassParams, n_syn: int, rng: np.random.Generator,
                       schema: Schema | None = None) -> RecordTable:
    """Draw ``n_syn`` records: a class from ``pi``, then each variable from its class row."""
    if schema is None:
        schema = Schema.from_levels(params.levels)
    if tuple(schema.levels) != tuple(params.levels):
        raise ValueError("schema levels do not match the parameters")
    n_syn = int(n_syn)
    z = rng.choice(params.k, size=n_syn, p=params.pi / params.pi.sum())
    out = np.empty((n_syn, params.p), dtype=np.int64)
    for j, rows in enumerate(params.psi):
        cdf = np.cumsum(rows, axis=1)
        cdf[:, -1] = 1.0
        out[:, j] = _inverse_cdf(cdf[z], rng.random(n_syn))
    return RecordTable(schema, out)


@dataclass
class SyntheticRelease:
    tables: list[RecordTable]
    draw_indices: np.ndarray
    seed: int
    n_syn: int
    iterations: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        if len(self.tables) < 2:
            raise ValueError("need at least two synthetic datasets")

    @property
    def m(self) -> int:
        return len(self.tables)


def synthesize(draws: PosteriorDraws, m: int = 20, n_syn: int | None = None, seed: int = 0) -> SyntheticRelease:
    """``m`` synthetic datasets from posterior draws picked without replacement."""
    if m < 2:
        raise ValueError("m must be at least 2")
    if m > len(draws):
        raise ValueError(f"m={m} exceeds the {len(draws)} retained draws")
    n_syn = draws.n if n_syn is None else int(n_syn)
    picks = np.sort(stream(seed, "synthesis-draws").choice(len(draws), size=m, replace=False))
    tables = [
        generate_synthetic(draws.params(int(i)), n_syn, stream(seed, "synthesis", l), draws.schema)
        for l, i in enumerate(picks)
    ]
    return SyntheticRelease(tables, picks, seed, n_syn, draws.iterations[picks])


def write_synthetic(out_dir: str | Path, release: SyntheticRelease, extra: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for l, table in enumerate(release.tables, start=1):
        path = out_dir / f"synthetic_{l:03d}.csv"
        write_records_csv(path, table)
        paths.append(path)
    manifest = {
        "format_version": SUMMARY_FORMAT_VERSION,
        "kind": "synthetic-release",
        "m": release.m,
        "n_syn": release.n_syn,
        "seed": release.seed,
        "draw_indices": [int(i) for i in release.draw_indices],
        "iterations": [int(i) for i in release.iterations],
        "files": [p.name for p in paths],
        **(extra or {}),
    }
    (out_dir / "synthetic_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return paths


# -- combining rules ----------------------------------------------------------


@dataclass(frozen=True)
class CombinedEstimate:
    qbar: float
    b: float
    ubar: float
    total_variance: float
    df: float
    lo: float
    hi: float


def combine_estimates(q, u, level: float = 0.95) -> CombinedEstimate:
    """Pool point estimates ``q`` and within-dataset variances ``u`` over m datasets.

    Total variance is ``b/m + ubar`` with ``b`` the between-dataset sample
    variance; the interval uses a t reference with
    ``(m-1)(1 + m*ubar/b)**2`` degrees of freedom, or a normal one when b = 0.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    m = q.size
    if m < 2:
        raise ValueError("need at least two estimates")
    if u.size != m:
        raise ValueError("q and u differ in length")
    if np.any(u < 0):
        raise ValueError("within variances must be nonnegative")
    qbar = float(q.mean())
    b = float(q.var(ddof=1))
    ubar = float(u.mean())
    tv = b / m + ubar
    tail = 1 - (1 - level) / 2
    with np.errstate(over="ignore", divide="ignore"):
        df = float((m - 1) * (1 + m * np.float64(ubar) / b) ** 2) if b > 0 else np.inf
    # a vanishing between-dataset variance sends df to infinity: normal reference
    crit = stats.t.ppf(tail, df) if np.isfinite(df) else stats.norm.ppf(tail)
    half = crit * np.sqrt(tv)
    return CombinedEstimate(qbar, b, ubar, tv, float(df), qbar - half, qbar + half)


def synthetic_marginal_estimates(release: SyntheticRelease, queries: Sequence[MarginalQuery]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dataset cell proportions and their variances ``q(1-q)/n_syn``.

    Returns two ``(m, cells)`` arrays over the concatenated cells of ``queries``.
    """
    q = np.array([
        np.concatenate([marginal_counts(t, query).counts for query in queries]) / t.n
        for t in release.tables
    ])
    return q, q * (1 - q) / release.n_syn


def combine_marginals(release: SyntheticRelease, queries: Sequence[MarginalQuery],
                      level: float = 0.95) -> list[CombinedEstimate]:
    q, u = synthetic_marginal_estimates(release, queries)
    return [combine_estimates(q[:, c], u[:, c], level) for c in range(q.shape[1])]


def combined_to_dict(estimates: Sequence[CombinedEstimate], labels: Sequence[str], **extra) -> dict:
    return {
        "format_version": SUMMARY_FORMAT_VERSION,
        "kind": "synthetic-summary",
        **extra,
        "targets": [
            {"target": lab, "mean": e.qbar, "lo": e.lo, "hi": e.hi, "qbar": e.qbar,
             "b": e.b, "ubar": e.ubar, "total_variance": e.total_variance,
             "df": None if not np.isfinite(e.df) else e.df}
            for lab, e in zip(labels, estimates)
        ],
    }
