"""Discrete attribute domains, datasets, and marginal queries.

A marginal table for an attribute subset is laid out in mixed-radix order:
attributes sorted ascending by index, with the last attribute varying
fastest (C order).  Every module in the package relies on this single cell
ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Domain:
    """Ordered attribute names with per-attribute cardinalities."""

    attributes: tuple[str, ...]
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        if len(self.attributes) != len(self.cardinalities):
            raise ValueError("attributes and cardinalities must align")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("attribute names must be unique")
        if any(c < 1 for c in self.cardinalities):
            raise ValueError("every cardinality must be >= 1")
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))

    @classmethod
    def make(cls, attributes: Iterable[str], cardinalities: Iterable[int]) -> "Domain":
        return cls(tuple(attributes), tuple(cardinalities))

    def __len__(self) -> int:
        return len(self.attributes)

    def index_of(self, name: str) -> int:
        try:
            return self.attributes.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute {name!r}") from None

    def shape(self, attrs: Sequence[int]) -> tuple[int, ...]:
        return tuple(self.cardinalities[i] for i in attrs)

    def size(self, attrs: Sequence[int] | None = None) -> int:
        if attrs is None:
            attrs = range(len(self))
        return math.prod(self.cardinalities[i] for i in attrs)


@dataclass(frozen=True)
class MarginalQuery:
    """A sorted, duplicate-free attribute subset together with its cell count."""

    attrs: tuple[int, ...]
    cardinality: int

    def __post_init__(self):
        if not self.attrs:
            raise ValueError("marginal query must name at least one attribute")
        if tuple(sorted(set(self.attrs))) != tuple(self.attrs):
            raise ValueError("query attributes must be sorted and duplicate-free")

    @classmethod
    def make(cls, domain: Domain, attrs: Iterable[int]) -> "MarginalQuery":
        attrs = tuple(sorted(set(int(a) for a in attrs)))
        for a in attrs:
            if not 0 <= a < len(domain):
                raise IndexError(f"attribute index {a} out of range for domain of size {len(domain)}")
        return cls(attrs, domain.size(attrs))

    def __len__(self) -> int:
        return len(self.attrs)


@dataclass(frozen=True)
class MarginalTable:
    """Counts over the cells of one marginal query."""

    query: MarginalQuery
    counts: np.ndarray = field(compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.shape != (self.query.cardinality,):
            raise ValueError(
                f"counts length {counts.shape} does not match query cardinality {self.query.cardinality}"
            )
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


class DiscreteDataset:
    """Integer-encoded rows over a :class:`Domain`."""

    def __init__(self, domain: Domain, rows: np.ndarray, validate: bool = True):
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            rows = rows.reshape(0, len(domain))
        if rows.ndim != 2 or rows.shape[1] != len(domain):
            raise ValueError(f"rows must have shape (N, {len(domain)})")
        if validate and rows.shape[0] > 0:
            upper = np.asarray(domain.cardinalities, dtype=np.int64)
            if rows.min() < 0 or np.any(rows.max(axis=0) >= upper):
                raise ValueError("row entries must lie in [0, cardinality) per attribute")
        rows = rows.copy()
        rows.flags.writeable = False
        self.domain = domain
        self.rows = rows

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def n_records(self) -> int:
        return self.rows.shape[0]

    def subset(self, indices: np.ndarray) -> "DiscreteDataset":
        return DiscreteDataset(self.domain, self.rows[np.asarray(indices)], validate=False)

    def marginal_counts(self, query: MarginalQuery) -> np.ndarray:
        return evaluate_marginal(self, query).counts


def evaluate_marginal(data: DiscreteDataset, query: MarginalQuery) -> MarginalTable:
    """Exact counts of ``data`` over the cells of ``query``.

    Cell ``j`` counts rows whose projection onto the query attributes equals
    the ``j``-th value combination in mixed-radix order (ascending attribute
    index, last attribute fastest).
    """
    for a in query.attrs:
        if not 0 <= a < len(data.domain):
            raise IndexError(f"attribute index {a} out of range")
    shape = data.domain.shape(query.attrs)
    if data.n_records == 0:
        return MarginalTable(query, np.zeros(query.cardinality))
    flat = np.ravel_multi_index(tuple(data.rows[:, a] for a in query.attrs), dims=shape)
    counts = np.bincount(flat, minlength=query.cardinality).astype(np.float64)
    return MarginalTable(query, counts)


def normalized_counts(counts: np.ndarray) -> np.ndarray:
    """Per-record frequencies; the zero vector when there is no mass."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return np.zeros_like(counts)
    return counts / total


def project_counts(
    domain: Domain, query: MarginalQuery, counts: np.ndarray, sub: MarginalQuery
) -> np.ndarray:
    """Sum a marginal table down onto a subset of its attributes."""
    if not set(sub.attrs) <= set(query.attrs):
        raise ValueError("sub query must use a subset of the table's attributes")
    shape = domain.shape(query.attrs)
    table = np.asarray(counts, dtype=np.float64).reshape(shape)
    drop = tuple(i for i, a in enumerate(query.attrs) if a not in set(sub.attrs))
    return table.sum(axis=drop).reshape(-1)
