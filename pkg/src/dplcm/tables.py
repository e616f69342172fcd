"""Categorical microdata: schemas, record tables and marginal counting.

Levels are stored 0-based. Cells of a marginal table are enumerated
lexicographically with the last variable varying fastest, so for two binary
variables the cell order is ``00, 01, 10, 11``.
"""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

#: Largest full-table size accepted by operations that enumerate every cell.
MAX_FULL_TABLE_CELLS = 2**31


class SchemaError(ValueError):
    """Raised for malformed schemas, queries or records."""


@dataclass(frozen=True)
class Variable:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(lab) for lab in self.labels))
        if len(self.labels) < 2:
            raise SchemaError(f"variable {self.name!r} needs at least 2 levels")
        if len(set(self.labels)) != len(self.labels):
            raise SchemaError(f"variable {self.name!r} has duplicate level labels")

    @property
    def levels(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Schema:
    """Ordered collection of categorical variables."""

    variables: tuple[Variable, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        if not names:
            raise SchemaError("schema has no variables")
        if len(set(names)) != len(names):
            raise SchemaError("variable names must be unique")

    @classmethod
    def from_levels(cls, levels: Sequence[int], names: Sequence[str] | None = None) -> "Schema":
        """Build a schema with labels ``"0", ..., "d-1"`` for each variable."""
        if names is None:
            names = [f"X{j + 1}" for j in range(len(levels))]
        if len(names) != len(levels):
            raise SchemaError("names and levels differ in length")
        variables = []
        for name, d in zip(names, levels):
            if int(d) < 2:
                raise SchemaError(f"variable {name!r} needs at least 2 levels")
            variables.append(Variable(name, tuple(str(i) for i in range(int(d)))))
        return cls(tuple(variables))

    @property
    def p(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(v.levels for v in self.variables)

    @property
    def full_table_size(self) -> int:
        # python ints: exact for any p
        return int(np.prod([int(d) for d in self.levels], dtype=object))

    def check_full_table(self) -> int:
        size = self.full_table_size
        if size > MAX_FULL_TABLE_CELLS:
            raise SchemaError(
                f"full table has {size} cells, above the cap of {MAX_FULL_TABLE_CELLS}"
            )
        return size

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown variable {name!r}") from None

    def query(self, variables: Iterable[int | str]) -> "MarginalQuery":
        """Marginal query over the given variable names or 0-based indices."""
        idx = [self.index(v) if isinstance(v, str) else int(v) for v in variables]
        for i in idx:
            if not 0 <= i < self.p:
                raise SchemaError(f"variable index {i} outside schema of {self.p} variables")
        if len(set(idx)) != len(idx):
            raise SchemaError("duplicate variable in query")
        idx = sorted(idx)
        return MarginalQuery(tuple(idx), tuple(self.levels[i] for i in idx))

    def full_query(self) -> "MarginalQuery":
        return self.query(range(self.p))

    def to_dict(self) -> dict:
        return {"variables": [{"name": v.name, "levels": list(v.labels)} for v in self.variables]}

    @classmethod
    def from_dict(cls, data: dict) -> "Schema":
        try:
            entries = data["variables"]
        except (KeyError, TypeError):
            raise SchemaError("schema must define 'variables'") from None
        variables = []
        for entry in entries:
            levels = entry["levels"]
            if isinstance(levels, int):
                levels = [str(i) for i in range(levels)]
            variables.append(Variable(str(entry["name"]), tuple(levels)))
        return cls(tuple(variables))


@dataclass(frozen=True)
class MarginalQuery:
    """A sorted subset of variables and the shape of its contingency table."""

    variables: tuple[int, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if not self.variables:
            raise SchemaError("query must contain at least one variable")
        if len(self.variables) != len(self.dims):
            raise SchemaError("variables and dims differ in length")
        if list(self.variables) != sorted(set(self.variables)):
            raise SchemaError("query variables must be sorted and unique")

    @property
    def r(self) -> int:
        return int(np.prod(self.dims))

    def cell_index(self, levels: Sequence[int]) -> int:
        if len(levels) != len(self.dims):
            raise SchemaError("wrong number of levels for query")
        for lev, d in zip(levels, self.dims):
            if not 0 <= int(lev) < d:
                raise IndexError(f"level {lev} out of range for dimension {d}")
        return int(np.ravel_multi_index(tuple(int(v) for v in levels), self.dims))

    def cell_levels(self, c: int) -> tuple[int, ...]:
        if not 0 <= int(c) < self.r:
            raise IndexError(f"cell {c} out of range for table of {self.r} cells")
        return tuple(int(v) for v in np.unravel_index(int(c), self.dims))

    def level_grid(self) -> np.ndarray:
        """Levels of every cell, shape ``(len(variables), r)``."""
        return np.array(np.unravel_index(np.arange(self.r), self.dims), dtype=np.intp)

    def cell_label(self, c: int, p: int) -> str:
        """Dotted label over all ``p`` variables, e.g. ``'0.1..'``."""
        chars = ["."] * p
        for var, lev in zip(self.variables, self.cell_levels(c)):
            chars[var] = str(lev)
        return "".join(chars)


def all_two_way_queries(schema: Schema) -> list[MarginalQuery]:
    if schema.p < 2:
        raise SchemaError("two-way margins need at least two variables")
    return [schema.query(pair) for pair in itertools.combinations(range(schema.p), 2)]


class CountKind(str, enum.Enum):
    TRUE = "true-count"
    NOISY = "noisy-count"


@dataclass(frozen=True)
class CountVector:
    query: MarginalQuery
    counts: np.ndarray
    kind: CountKind = CountKind.TRUE

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64).reshape(-1)
        if counts.shape[0] != self.query.r:
            raise SchemaError(
                f"expected {self.query.r} counts for query {self.query.variables}, got {counts.shape[0]}"
            )
        kind = CountKind(self.kind)
        if kind is CountKind.TRUE and np.any(counts < 0):
            raise SchemaError("true counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "kind", kind)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class RecordTable:
    """``n`` records of ``p`` categorical variables, stored as level indices."""

    schema: Schema
    records: np.ndarray = field(repr=False)

    def __post_init__(self):
        recs = np.array(self.records, dtype=np.int64)
        if recs.size == 0:
            recs = recs.reshape(0, self.schema.p)
        if recs.ndim != 2 or recs.shape[1] != self.schema.p:
            raise SchemaError(f"records must have shape (n, {self.schema.p})")
        bad = (recs < 0) | (recs >= np.asarray(self.schema.levels))
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise SchemaError(
                f"record {row} has level {recs[row, col]} outside variable {self.schema.names[col]!r}"
            )
        recs.setflags(write=False)
        object.__setattr__(self, "records", recs)

    @property
    def n(self) -> int:
        return int(self.records.shape[0])


def marginal_counts(table: RecordTable, query: MarginalQuery) -> CountVector:
    """Tabulate the records over the cells of ``query``."""
    for var, d in zip(query.variables, query.dims):
        if var >= table.schema.p or table.schema.levels[var] != d:
            raise SchemaError(f"query variable {var} does not match the table schema")
    if table.n == 0:
        return CountVector(query, np.zeros(query.r, dtype=np.int64))
    cols = table.records[:, list(query.variables)]
    flat = np.ravel_multi_index(tuple(cols.T), query.dims)
    return CountVector(query, np.bincount(flat, minlength=query.r))


def full_table_counts(table: RecordTable) -> CountVector:
    table.schema.check_full_table()
    return marginal_counts(table, table.schema.full_query())


def collapse_counts(counts: np.ndarray, query: MarginalQuery, sub: MarginalQuery) -> np.ndarray:
    """Sum a table over ``query`` down to the variables of ``sub``."""
    if not set(sub.variables) <= set(query.variables):
        raise SchemaError("sub-query variables must be contained in the query")
    arr = np.asarray(counts).reshape(query.dims)
    drop = tuple(i for i, v in enumerate(query.variables) if v not in sub.variables)
    return arr.sum(axis=drop).reshape(-1)


def read_records_csv(path: str | Path, schema: Schema) -> RecordTable:
    """Read a headered CSV whose columns are the schema variables (any order)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        cols = [header.index(n) for n in schema.names]
        lookup = [{lab: i for i, lab in enumerate(v.labels)} for v in schema.variables]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([lookup[j][row[c].strip()] for j, c in enumerate(cols)])
            except (KeyError, IndexError):
                raise SchemaError(f"{path}:{lineno}: value not among declared level labels") from None
    return RecordTable(schema, np.array(rows, dtype=np.int64).reshape(-1, schema.p))


def write_records_csv(path: str | Path, table: RecordTable) -> None:
    labels = [v.labels for v in table.schema.variables]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.schema.names)
        for rec in table.records:
            writer.writerow([labels[j][lev] for j, lev in enumerate(rec)])
