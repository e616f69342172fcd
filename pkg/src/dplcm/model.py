"""Truncated latent class model for multivariate categorical data.

A record falls in class ``h`` with probability ``pi[h]``; given the class,
variable ``j`` takes level ``c`` with probability ``psi[j][h, c]``
independently of the other variables. Any marginal cell probability is

    sum_h pi[h] * prod_{j in S} psi[j][h, c_j]

because the rows of the omitted variables each sum to one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from .tables import CountVector, MarginalQuery, Schema, SchemaError

SIMPLEX_TOL = 1e-12


class ParameterError(ValueError):
    """Parameters violating simplex invariants."""


def _check_simplex(x: np.ndarray, what: str, axis: int = -1) -> None:
    if np.any(~np.isfinite(x)) or np.any(x < 0):
        raise ParameterError(f"{what} has negative or non-finite entries")
    if np.any(np.abs(x.sum(axis=axis) - 1.0) > SIMPLEX_TOL):
        raise ParameterError(f"{what} does not sum to one")


@dataclass(frozen=True)
class LatentClassParams:
    """Mixture weights ``pi`` (k,) and per-variable level probabilities ``psi[j]`` (k, d_j).

    ``eta`` optionally holds the unnormalized weights with ``pi = eta / eta.sum()``.
    """

    pi: np.ndarray
    psi: tuple[np.ndarray, ...]
    eta: np.ndarray | None = None
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        psi = tuple(np.array(row, dtype=float) for row in self.psi)
        eta = None if self.eta is None else np.array(self.eta, dtype=float)
        for arr in (pi, *psi) + (() if eta is None else (eta,)):
            arr.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "eta", eta)
        if self.validate:
            self.check()

    @property
    def k(self) -> int:
        return int(self.pi.shape[0])

    @property
    def p(self) -> int:
        return len(self.psi)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(int(row.shape[1]) for row in self.psi)

    def check(self) -> None:
        if self.pi.ndim != 1:
            raise ParameterError("pi must be a vector")
        _check_simplex(self.pi, "pi")
        for j, rows in enumerate(self.psi):
            if rows.ndim != 2 or rows.shape[0] != self.k:
                raise ParameterError(f"psi[{j}] must have shape (k, d_j)")
            _check_simplex(rows, f"psi[{j}]", axis=1)
        if self.eta is not None:
            if self.eta.shape != self.pi.shape or np.any(self.eta < 0) or not self.eta.sum() > 0:
                raise ParameterError("eta must be a nonnegative vector matching pi")
            if np.any(np.abs(self.eta / self.eta.sum() - self.pi) > SIMPLEX_TOL):
                raise ParameterError("pi is inconsistent with eta")

    def permute(self, order: Sequence[int]) -> "LatentClassParams":
        """Relabel the classes; every cell probability is unchanged."""
        order = np.asarray(order)
        return LatentClassParams(
            self.pi[order], tuple(rows[order] for rows in self.psi),
            None if self.eta is None else self.eta[order],
        )


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the truncated latent class model.

    ``alpha`` is the stick-breaking concentration (``V_h ~ Beta(1, alpha)``).
    ``dirichlet`` holds one concentration vector per variable (``None`` means
    all ones). ``gamma_shape`` is the shape of the Gamma prior on the
    unnormalized weights ``eta`` (scalar or per class; ``None`` means
    ``alpha / k``) and ``gamma_scale`` its scale (``None`` lets the sampler
    pick ``n / k``).
    """

    alpha: float = 1.0
    dirichlet: tuple[np.ndarray, ...] | None = None
    gamma_shape: float | tuple[float, ...] | None = None
    gamma_scale: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("stick-breaking alpha must be positive")
        if self.dirichlet is not None:
            conc = tuple(np.asarray(a, dtype=float) for a in self.dirichlet)
            if any(np.any(a <= 0) for a in conc):
                raise ValueError("Dirichlet concentrations must be positive")
            object.__setattr__(self, "dirichlet", conc)
        if self.gamma_shape is not None and np.any(np.asarray(self.gamma_shape) <= 0):
            raise ValueError("Gamma shape must be positive")
        if self.gamma_scale is not None and not self.gamma_scale > 0:
            raise ValueError("Gamma scale must be positive")

    def dirichlet_for(self, levels: Sequence[int]) -> tuple[np.ndarray, ...]:
        if self.dirichlet is None:
            return tuple(np.ones(d) for d in levels)
        if len(self.dirichlet) != len(levels) or any(
            a.shape != (d,) for a, d in zip(self.dirichlet, levels)
        ):
            raise ValueError("Dirichlet concentrations do not match the schema")
        return self.dirichlet

    def shape_for(self, k: int) -> np.ndarray:
        if self.gamma_shape is None:
            return np.full(k, self.alpha / k)
        return np.broadcast_to(np.asarray(self.gamma_shape, dtype=float), (k,)).copy()

    def scale_for(self, n: int, k: int) -> float:
        return float(self.gamma_scale) if self.gamma_scale is not None else max(n, 1) / k


# -- stick breaking ----------------------------------------------------------


def stick_breaking_weights(v: Sequence[float]) -> np.ndarray:
    """``pi_h = V_h prod_{l<h} (1 - V_l)`` with the last fraction forced to one."""
    v = np.array(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("V must be a non-empty vector")
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("stick-breaking fractions must lie in [0, 1]")
    v[-1] = 1.0
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    return v * remaining


def stick_breaking_fractions(pi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`stick_breaking_weights` (last entry is 1)."""
    pi = np.asarray(pi, dtype=float)
    remaining = 1.0 - np.concatenate(([0.0], np.cumsum(pi[:-1])))
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(remaining > 0, pi / remaining, 1.0)
    v[-1] = 1.0
    return np.clip(v, 0.0, 1.0)


# -- probabilities -----------------------------------------------------------


def _sum_over_classes(terms: np.ndarray) -> np.ndarray:
    """Sum along axis 0 in sorted order so relabelling classes cannot change a bit."""
    return np.sort(terms, axis=0).sum(axis=0)


def class_cell_products(psi: Sequence[np.ndarray], query: MarginalQuery) -> np.ndarray:
    """Per-class product of level probabilities for every cell, shape (k, r)."""
    grid = query.level_grid()
    out = None
    for row, var in enumerate(query.variables):
        if var >= len(psi) or psi[var].shape[1] != query.dims[row]:
            raise SchemaError(f"query variable {var} does not match the parameters")
        factor = psi[var][:, grid[row]]
        out = factor if out is None else out * factor
    return out


def marginal_prob_vector(params: LatentClassParams, query: MarginalQuery) -> np.ndarray:
    """Probabilities of the ``r`` cells of ``query`` under the model."""
    return _sum_over_classes(params.pi[:, None] * class_cell_products(params.psi, query))


def marginal_prob_batch(pi: np.ndarray, psi: Sequence[np.ndarray], query: MarginalQuery) -> np.ndarray:
    """Marginal probabilities for a stack of draws.

    ``pi`` has shape ``(B, k)`` and ``psi[j]`` shape ``(B, k, d_j)``; returns ``(B, r)``.
    """
    grid = query.level_grid()
    prod = None
    for row, var in enumerate(query.variables):
        factor = psi[var][:, :, grid[row]]
        prod = factor if prod is None else prod * factor
    return np.einsum("bk,bkr->br", pi, prod)


def cell_probability(params: LatentClassParams, cell: Sequence[int]) -> float:
    if len(cell) != params.p:
        raise SchemaError(f"cell must give a level for all {params.p} variables")
    prod = params.pi.copy()
    for j, c in enumerate(cell):
        if not 0 <= int(c) < params.levels[j]:
            raise IndexError(f"level {c} out of range for variable {j}")
        prod = prod * params.psi[j][:, int(c)]
    return float(_sum_over_classes(prod))


def full_table_probs(params: LatentClassParams, schema: Schema | None = None) -> np.ndarray:
    """Probabilities of all ``prod d_j`` cells in lexicographic order."""
    if schema is not None:
        schema.check_full_table()
    elif int(np.prod(params.levels, dtype=object)) > 2**31:
        raise SchemaError("full table too large")
    acc = params.pi[:, None]
    for rows in params.psi:
        acc = (acc[:, :, None] * rows[:, None, :]).reshape(params.k, -1)
    return _sum_over_classes(acc)


# -- likelihood and prior ----------------------------------------------------


def multinomial_loglik(counts: np.ndarray, probs: np.ndarray, n: int | None = None) -> float:
    counts = np.asarray(counts)
    n = int(counts.sum()) if n is None else n
    if np.any((counts > 0) & (probs <= 0)):
        return -np.inf
    return float(gammaln(n + 1) - gammaln(counts + 1).sum() + xlogy(counts, probs).sum())


def composite_log_likelihood(
    params: LatentClassParams, counts: Sequence[CountVector | tuple[MarginalQuery, np.ndarray]], n: int
) -> float:
    """Sum over tables of the multinomial log-likelihood of each marginal table."""
    total = 0.0
    for item in counts:
        if isinstance(item, CountVector):
            query, m = item.query, item.counts
        else:
            query, m = item
            m = np.asarray(m)
        if np.any(m < 0):
            raise ValueError("counts must be nonnegative")
        if int(m.sum()) != n:
            raise ValueError(f"counts for query {query.variables} sum to {int(m.sum())}, not n={n}")
        total += multinomial_loglik(m, marginal_prob_vector(params, query), n)
    return total


def dirichlet_logpdf(x: np.ndarray, conc: np.ndarray) -> np.ndarray:
    """Dirichlet log density over the last axis (no simplex check)."""
    x = np.asarray(x, dtype=float)
    conc = np.asarray(conc, dtype=float)
    return gammaln(conc.sum(axis=-1)) - gammaln(conc).sum(axis=-1) + xlogy(conc - 1.0, x).sum(axis=-1)


def stick_breaking_logpdf(pi: np.ndarray, alpha: float) -> float:
    """Density of ``pi`` (first k-1 coordinates) under truncated stick breaking."""
    pi = np.asarray(pi, dtype=float)
    k = pi.shape[0]
    if k == 1:
        return 0.0
    remaining = 1.0 - np.concatenate(([0.0], np.cumsum(pi[:-1])))
    rem = remaining[: k - 1]
    if np.any(rem <= 0):
        return -np.inf
    v = pi[: k - 1] / rem
    with np.errstate(divide="ignore"):
        out = (k - 1) * np.log(alpha) + xlogy(alpha - 1.0, 1.0 - v).sum() - np.log(rem).sum()
    return float(out) if np.isfinite(out) else -np.inf


def gamma_logpdf(eta: np.ndarray, shape: np.ndarray, scale: float) -> float:
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        return -np.inf
    out = xlogy(shape - 1.0, eta) - eta / scale - gammaln(shape) - shape * np.log(scale)
    return float(out.sum())


def log_prior(params: LatentClassParams, prior: PriorSpec, n: int | None = None) -> float:
    """Log prior density of ``params``.

    The weights use the Gamma prior on ``eta`` when ``params.eta`` is set and
    the stick-breaking density on ``pi`` otherwise.
    """
    params.check()
    if params.eta is not None:
        total = gamma_logpdf(params.eta, prior.shape_for(params.k), prior.scale_for(n or 0, params.k))
    else:
        total = stick_breaking_logpdf(params.pi, prior.alpha)
    for rows, conc in zip(params.psi, prior.dirichlet_for(params.levels)):
        total += float(dirichlet_logpdf(rows, conc).sum())
    return total


def sample_prior(
    prior: PriorSpec,
    schema: Schema,
    k: int,
    rng: np.random.Generator,
    weights: str = "stick",
    n: int | None = None,
) -> LatentClassParams:
    """Draw parameters from the prior.

    ``weights="stick"`` draws ``V_h ~ Beta(1, alpha)``; ``weights="gamma"``
    draws ``eta_h`` from the Gamma prior and normalizes.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if weights == "stick":
        v = rng.beta(1.0, prior.alpha, size=k)
        pi, eta = stick_breaking_weights(v), None
    elif weights == "gamma":
        eta = rng.gamma(prior.shape_for(k), prior.scale_for(n or 0, k))
        while not eta.sum() > 0:
            eta = rng.gamma(prior.shape_for(k), prior.scale_for(n or 0, k))
        pi = eta / eta.sum()
    else:
        raise ValueError(f"unknown weight prior {weights!r}")
    psi = tuple(rng.dirichlet(conc, size=k) for conc in prior.dirichlet_for(schema.levels))
    return LatentClassParams(pi, psi, eta)


# -- flat record serialization ----------------------------------------------


def param_columns(schema: Schema, k: int) -> list[str]:
    cols = [f"pi[{h}]" for h in range(k)]
    for var in schema.variables:
        for h in range(k):
            cols += [f"psi[{var.name}][{h}][{lab}]" for lab in var.labels]
    return cols


def params_to_row(params: LatentClassParams) -> np.ndarray:
    return np.concatenate([params.pi] + [rows.reshape(-1) for rows in params.psi])


def params_from_row(row: np.ndarray, levels: Sequence[int], k: int) -> LatentClassParams:
    row = np.asarray(row, dtype=float)
    if row.shape != (k * (1 + sum(levels)),):
        raise ParameterError("row length does not match the schema")
    pi = row[:k]
    psi, pos = [], k
    for d in levels:
        psi.append(row[pos: pos + k * d].reshape(k, d))
        pos += k * d
    # renormalize away text round-off
    pi = pi / pi.sum()
    psi = [rows / rows.sum(axis=1, keepdims=True) for rows in psi]
    return LatentClassParams(pi, tuple(psi))


def write_params_csv(path: str | Path, schema: Schema, iterations: Sequence[int], rows: np.ndarray) -> None:
    rows = np.atleast_2d(rows)
    k = _infer_k(rows.shape[1], schema.levels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration"] + param_columns(schema, k))
        for it, row in zip(iterations, rows):
            writer.writerow([int(it)] + [repr(float(x)) for x in row])


def read_params_csv(path: str | Path, schema: Schema) -> tuple[np.ndarray, list[LatentClassParams]]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    iterations = data[:, 0].astype(np.int64)
    k = _infer_k(data.shape[1] - 1, schema.levels)
    return iterations, [params_from_row(r, schema.levels, k) for r in data[:, 1:]]


def _infer_k(width: int, levels: Sequence[int]) -> int:
    per_class = 1 + sum(levels)
    if width % per_class:
        raise ParameterError("parameter row width does not match the schema")
    return width // per_class


__all__ = [
    "LatentClassParams", "ParameterError", "PriorSpec", "cell_probability",
    "class_cell_products", "composite_log_likelihood", "dirichlet_logpdf", "full_table_probs",
    "gamma_logpdf", "log_prior", "marginal_prob_batch", "marginal_prob_vector", "multinomial_loglik", "param_columns",
    "params_from_row", "params_to_row", "read_params_csv", "sample_prior",
    "stick_breaking_fractions", "stick_breaking_logpdf", "stick_breaking_weights",
    "write_params_csv",
]
