"""Hierarchical loglinear models: J-set combinatorics, baseline parametrization,
cumulant function and sufficient statistics.

Variables are addressed by position ``0..p-1``; ``labels`` carries the
user-facing vertex ids (1-based for lattices and JSON model files) so that
sub-models built on a vertex subset can be mapped back into their parent.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Iterator, Sequence

import networkx as nx
import numpy as np
from scipy.special import logsumexp

DEFAULT_CELL_BUDGET = 2**20
DEFAULT_MAX_CLIQUE = 8


class ModelError(ValueError):
    """Invalid model definition."""


class BudgetExceeded(RuntimeError):
    """Raised when an operation would need to enumerate too many cells."""


class DataError(ValueError):
    """Malformed samples or probability tables."""


def downward_closure(sets: Iterable[Iterable[int]]) -> frozenset[frozenset[int]]:
    out = set()
    for s in sets:
        s = tuple(sorted(set(s)))
        for r in range(1, len(s) + 1):
            for sub in itertools.combinations(s, r):
                out.add(frozenset(sub))
    return frozenset(out)


def _support_key(s: frozenset[int]) -> tuple:
    return (len(s), tuple(sorted(s)))


@dataclass(frozen=True, eq=False)
class Model:
    """A hierarchical loglinear model on a product of finite level sets.

    ``generating_class`` must be downward closed; level 0 of every variable is
    the baseline level.  The J-set is enumerated in the canonical order
    (support size, sorted support, level tuple).
    """

    levels: tuple[int, ...]
    generating_class: frozenset[frozenset[int]]
    edges: tuple[tuple[int, int], ...] | None = None
    labels: tuple[Hashable, ...] | None = None
    cell_budget: int = DEFAULT_CELL_BUDGET
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        p = len(self.levels)
        if p == 0:
            raise ModelError("model needs at least one variable")
        if any(int(k) < 2 for k in self.levels):
            raise ModelError(f"every variable needs at least 2 levels, got {self.levels}")
        for d in self.generating_class:
            if not d:
                raise ModelError("empty set in generating class")
            if any(v < 0 or v >= p for v in d):
                raise ModelError(f"generating set {sorted(d)} references unknown variable")
        closure = downward_closure(self.generating_class)
        if closure != self.generating_class:
            missing = sorted((_support_key(s) for s in closure - self.generating_class))
            raise ModelError(f"generating class is not downward closed; missing {missing[:5]}")
        covered = set().union(*self.generating_class) if self.generating_class else set()
        if covered != set(range(p)):
            warnings.warn(
                f"variables {sorted(set(range(p)) - covered)} are not covered by the generating class",
                stacklevel=2,
            )
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(p)))
        elif len(self.labels) != p:
            raise ModelError("labels must have one entry per variable")

    # ------------------------------------------------------------------ basics
    @property
    def p(self) -> int:
        return len(self.levels)

    @cached_property
    def position(self) -> dict:
        return {lab: k for k, lab in enumerate(self.labels)}

    @cached_property
    def n_cells(self) -> int:
        return int(np.prod(self.levels, dtype=object))

    @cached_property
    def supports(self) -> tuple[frozenset[int], ...]:
        """Generating class in canonical order."""
        return tuple(sorted(self.generating_class, key=_support_key))

    @cached_property
    def j_list(self) -> tuple[tuple[int, ...], ...]:
        out = []
        for s in self.supports:
            vs = sorted(s)
            for lv in itertools.product(*(range(1, self.levels[v]) for v in vs)):
                cell = [0] * self.p
                for v, l in zip(vs, lv):
                    cell[v] = l
                out.append(tuple(cell))
        return tuple(out)

    @cached_property
    def j_index(self) -> dict[tuple[int, ...], int]:
        return {j: k for k, j in enumerate(self.j_list)}

    @property
    def n_params(self) -> int:
        return len(self.j_list)

    @cached_property
    def j_supports(self) -> tuple[tuple[int, ...], ...]:
        return tuple(support(j) for j in self.j_list)

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.p))
        if self.edges is not None:
            g.add_edges_from(self.edges)
        else:
            g.add_edges_from(tuple(sorted(d)) for d in self.generating_class if len(d) == 2)
        return g

    def neighbors(self, v: int) -> frozenset[int]:
        return frozenset(self.graph.neighbors(v))

    def check_budget(self, what: str = "exact evaluation") -> None:
        if self.n_cells > self.cell_budget:
            raise BudgetExceeded(
                f"model too large for {what}: {self.n_cells} cells exceeds budget {self.cell_budget}"
            )

    def describe(self) -> dict:
        return {
            "variables": self.p,
            "levels": list(self.levels),
            "cells": self.n_cells,
            "parameters": self.n_params,
            "generating_class": [[self.labels[v] for v in sorted(s)] for s in self.supports],
        }

    # --------------------------------------------------------------- the table
    @cached_property
    def cells(self) -> np.ndarray:
        """All cells, row-major (last variable fastest), shape (|I|, p)."""
        self.check_budget("full-table enumeration")
        grids = np.indices(self.levels, dtype=np.int16).reshape(self.p, -1).T
        return np.ascontiguousarray(grids)

    def cell_index(self, cells: np.ndarray) -> np.ndarray:
        cells = np.atleast_2d(np.asarray(cells))
        return np.ravel_multi_index(tuple(cells.T), self.levels)

    @cached_property
    def features(self) -> np.ndarray:
        """0/1 matrix with rows f_i, shape (|I|, |J|)."""
        return self.feature_rows(self.cells)

    def feature_rows(self, cells: np.ndarray, cols: Sequence[int] | None = None) -> np.ndarray:
        """Rows f_i for the given cells, optionally restricted to some J positions."""
        cells = np.atleast_2d(np.asarray(cells))
        cols = range(self.n_params) if cols is None else cols
        out = np.ones((cells.shape[0], len(cols)), dtype=np.int8)
        for k, c in enumerate(cols):
            j = self.j_list[c]
            for v in self.j_supports[c]:
                out[:, k] &= cells[:, v] == j[v]
        return out

    def iter_design_rows(self, chunk: int = 4096) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(cells, lifted rows)`` chunks without materialising the full table."""
        total = self.n_cells
        for start in range(0, total, chunk):
            idx = np.arange(start, min(start + chunk, total))
            cells = np.stack(np.unravel_index(idx, self.levels), axis=1)
            rows = np.hstack([np.ones((len(idx), 1), dtype=np.int8), self.feature_rows(cells)])
            yield cells, rows


# ---------------------------------------------------------------------- build
def support(cell: Sequence[int]) -> tuple[int, ...]:
    return tuple(v for v, x in enumerate(cell) if x != 0)


def build_model(
    levels: Sequence[int],
    *,
    edges: Iterable[tuple[int, int]] | None = None,
    generating_class: Iterable[Iterable[int]] | None = None,
    labels: Sequence[Hashable] | None = None,
    names: Sequence[str] | None = None,
    cell_budget: int = DEFAULT_CELL_BUDGET,
    max_clique: int = DEFAULT_MAX_CLIQUE,
) -> Model:
    """Build a model from a graph (all cliques) or an explicit generating class.

    Both ``edges`` and ``generating_class`` use 0-based variable positions.
    An explicit generating class must already be downward closed.
    """
    levels = tuple(int(k) for k in levels)
    p = len(levels)
    if (edges is None) == (generating_class is None):
        raise ModelError("give exactly one of edges or generating_class")
    if edges is not None:
        es = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ModelError(f"self loop at {a}")
            if not (0 <= a < p and 0 <= b < p):
                raise ModelError(f"edge ({a},{b}) references unknown variable")
            es.add((min(a, b), max(a, b)))
        g = nx.Graph()
        g.add_nodes_from(range(p))
        g.add_edges_from(es)
        gc = set()
        for clique in nx.enumerate_all_cliques(g):
            if len(clique) > max_clique:
                break
            gc.add(frozenset(clique))
        return Model(levels, frozenset(gc), tuple(sorted(es)), _labels(labels, p), cell_budget, _names(names))
    gc = frozenset(frozenset(int(v) for v in d) for d in generating_class)
    return Model(levels, gc, None, _labels(labels, p), cell_budget, _names(names))


def _labels(labels, p):
    return tuple(labels) if labels is not None else None


def _names(names):
    return tuple(names) if names is not None else None


def lattice_model(rows: int, cols: int, levels: int = 2, **kw) -> Model:
    """Four-neighbour lattice, vertices labelled 1..rows*cols row-major."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    kw.setdefault("labels", tuple(range(1, rows * cols + 1)))
    return build_model([levels] * (rows * cols), edges=edges, **kw)


def saturated_model(levels: Sequence[int], **kw) -> Model:
    p = len(levels)
    return build_model(levels, generating_class=downward_closure([range(p)]), **kw)


# -------------------------------------------------------------- the relation
def precedes(j: Sequence[int], i: Sequence[int]) -> bool:
    """``j ⊴ i``: the support of j is inside that of i and they agree on it."""
    return all(x == 0 or x == y for x, y in zip(j, i))


def f_vector(cell: Sequence[int], model: Model) -> np.ndarray:
    return model.feature_rows(np.asarray(cell)[None, :])[0]


# ----------------------------------------------------------- parametrization
@dataclass(frozen=True)
class ThetaVector:
    theta: np.ndarray
    theta0: float | None = None

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if not np.all(np.isfinite(th)):
            raise ValueError("theta entries must be finite")
        object.__setattr__(self, "theta", th)


def log_partition(theta: np.ndarray, model: Model) -> float:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, model has {model.n_params} parameters")
    model.check_budget()
    return float(logsumexp(model.features @ theta))


def theta_to_probabilities(theta, model: Model, theta0: float | None = None) -> np.ndarray:
    """Cell probabilities in table order; normalised when ``theta0`` is None."""
    if isinstance(theta, ThetaVector):
        theta0 = theta.theta0 if theta0 is None else theta0
        theta = theta.theta
    model.check_budget()
    eta = model.features @ np.asarray(theta, dtype=float)
    if theta0 is None:
        theta0 = -logsumexp(eta)
    return np.exp(eta + theta0)


def baseline_parameters(log_table: np.ndarray) -> np.ndarray:
    """Alternating-sum transform of a log-probability table (any shape).

    Entry ``i`` of the result is sum over F ⊆ S(i) of ±log p(i_F, 0); entry 0
    is log p(0).
    """
    out = np.array(log_table, dtype=float, copy=True)
    for ax in range(out.ndim):
        base = np.take(out, [0], axis=ax)
        sl = [slice(None)] * out.ndim
        sl[ax] = slice(1, None)
        out[tuple(sl)] -= base
    return out


def inverse_baseline(theta_table: np.ndarray) -> np.ndarray:
    out = np.array(theta_table, dtype=float, copy=True)
    for ax in range(out.ndim):
        base = np.take(out, [0], axis=ax)
        sl = [slice(None)] * out.ndim
        sl[ax] = slice(1, None)
        out[tuple(sl)] += base
    return out


def probabilities_to_theta(p_table: np.ndarray, model: Model) -> ThetaVector:
    p = np.asarray(p_table, dtype=float).reshape(model.levels)
    if np.any(p <= 0):
        bad = np.argwhere(p <= 0)[0]
        raise DataError(f"zero probability at cell {tuple(int(x) for x in bad)}")
    full = baseline_parameters(np.log(p))
    theta = np.array([full[j] for j in model.j_list])
    return ThetaVector(theta, float(full.flat[0]))


def full_theta_table(theta: np.ndarray, model: Model) -> np.ndarray:
    """Place J-indexed parameters into a table over I (zeros off J)."""
    out = np.zeros(model.levels)
    for k, j in enumerate(model.j_list):
        out[j] = theta[k]
    return out


# -------------------------------------------------------------- statistics
@dataclass(frozen=True)
class SuffStat:
    N: int
    t: np.ndarray


def validate_samples(samples, model: Model) -> np.ndarray:
    x = np.asarray(samples)
    if x.size == 0:
        return np.zeros((0, model.p), dtype=np.int16)
    x = np.atleast_2d(x)
    if x.shape[1] != model.p:
        raise DataError(f"samples have {x.shape[1]} columns, model has {model.p} variables")
    lev = np.asarray(model.levels)
    bad = np.nonzero(((x < 0) | (x >= lev)).any(axis=1))[0]
    if bad.size:
        r = int(bad[0])
        raise DataError(f"row {r + 1}: level out of range in {x[r].tolist()}")
    return x.astype(np.int16)


def sufficient_statistics(samples, model: Model) -> SuffStat:
    x = validate_samples(samples, model)
    if x.shape[0] == 0:
        return SuffStat(0, np.zeros(model.n_params, dtype=np.int64))
    return SuffStat(int(x.shape[0]), model.feature_rows(x).sum(axis=0, dtype=np.int64))


def cell_counts(samples, model: Model) -> np.ndarray:
    """Full contingency table, flattened in table order."""
    x = validate_samples(samples, model)
    model.check_budget("full-table counts")
    if x.shape[0] == 0:
        return np.zeros(model.n_cells, dtype=np.int64)
    return np.bincount(model.cell_index(x), minlength=model.n_cells).astype(np.int64)


def statistic_from_counts(counts: np.ndarray, model: Model) -> SuffStat:
    counts = np.asarray(counts, dtype=np.int64)
    return SuffStat(int(counts.sum()), model.features.T.astype(np.int64) @ counts)


def design_matrix(model: Model) -> np.ndarray:
    """Lifted design matrix with rows (1, f_i), shape (|I|, 1+|J|)."""
    model.check_budget("dense design matrix")
    return np.hstack([np.ones((model.n_cells, 1), dtype=np.int8), model.features])


def expected_features(theta: np.ndarray, model: Model) -> np.ndarray:
    """Gradient of the cumulant function: sum_i p(i) f_i."""
    return model.features.T @ theta_to_probabilities(theta, model)


# ----------------------------------------------------------------- sub-models
def submodel(model: Model, vertices: Iterable[int], generating_class: Iterable[Iterable[int]] | None = None) -> Model:
    """Model on a vertex subset (positions in ``model``), keeping labels.

    Without ``generating_class`` this is the induced marginal model whose
    generating class is every member of the parent's class inside the subset.
    ``generating_class`` is given in parent positions.
    """
    vs = sorted(set(int(v) for v in vertices))
    if not vs:
        raise ModelError("vertex subset must be non-empty")
    local = {v: k for k, v in enumerate(vs)}
    if generating_class is None:
        gc = [d for d in model.generating_class if d <= set(vs)]
        edges = None
        if model.edges is not None:
            edges = tuple((local[a], local[b]) for a, b in model.edges if a in local and b in local)
    else:
        gc = [d for d in downward_closure(generating_class)]
        edges = None
    gc = frozenset(frozenset(local[v] for v in d) for d in gc)
    names = tuple(model.names[v] for v in vs) if model.names else None
    return Model(
        tuple(model.levels[v] for v in vs), gc, edges,
        tuple(model.labels[v] for v in vs), model.cell_budget, names,
    )


def embed_cell(cell: Sequence[int], sub: Model, parent: Model) -> tuple[int, ...]:
    out = [0] * parent.p
    for k, x in enumerate(cell):
        out[parent.position[sub.labels[k]]] = x
    return tuple(out)


def coordinate_map(sub: Model, parent: Model) -> np.ndarray:
    """Index into ``parent.j_list`` of every sub-model parameter, -1 if absent."""
    return np.array(
        [parent.j_index.get(embed_cell(j, sub, parent), -1) for j in sub.j_list], dtype=np.int64
    )


def marginal_samples(samples: np.ndarray, sub: Model, parent: Model) -> np.ndarray:
    cols = [parent.position[lab] for lab in sub.labels]
    return np.asarray(samples)[:, cols]
