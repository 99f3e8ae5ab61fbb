"""Per-vertex local structures: neighbourhoods, buffer sets, conditional index
sets and the relaxed marginal models built on one- or two-hop neighbourhoods."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import (
    BudgetExceeded,
    Model,
    baseline_parameters,
    coordinate_map,
    submodel,
    theta_to_probabilities,
)

MAX_BUFFER = 12
KINDS = ("PS", "PS2", "M1", "M2")


@dataclass(frozen=True)
class Neighborhood:
    """Positions (not labels) of the sets around vertex ``v``."""

    v: int
    hop: int
    M: frozenset[int]
    N: frozenset[int]
    N2: frozenset[int]
    B: frozenset[int]

    @property
    def block(self) -> frozenset[int]:
        """Variables modelled by the conditional likelihood."""
        return frozenset({self.v}) if self.hop == 1 else frozenset({self.v}) | self.N

    @property
    def conditioning(self) -> frozenset[int]:
        return self.N if self.hop == 1 else self.N2

    @property
    def theorem_applies(self) -> bool:
        """Whether the buffer is the whole outer ring of the neighbourhood."""
        return self.B == (self.N if self.hop == 1 else self.N2)


def neighborhood(model: Model, v, hop: int = 1, *, by_label: bool = True) -> Neighborhood:
    if hop not in (1, 2):
        raise ValueError("hop must be 1 or 2")
    if by_label:
        if v not in model.position:
            raise KeyError(f"unknown vertex {v!r}")
        v = model.position[v]
    elif not 0 <= v < model.p:
        raise KeyError(f"unknown vertex {v!r}")
    g = model.graph
    nb = frozenset(g.neighbors(v))
    M = {v} | nb
    if hop == 2:
        for u in nb:
            M |= set(g.neighbors(u))
    M = frozenset(M)
    n2 = M - nb - {v} if hop == 2 else frozenset()
    B = frozenset(w for w in M if any(u not in M for u in g.neighbors(w)))
    return Neighborhood(v, hop, M, nb, frozenset(n2), B)


@dataclass(frozen=True, eq=False)
class LocalModel:
    kind: str
    nbhd: Neighborhood
    j_indices: np.ndarray  # global J positions of the conditional block
    model: Model | None = None  # relaxed marginal model (M kinds)
    coord: np.ndarray | None = None  # local J -> global J, -1 for pure buffer terms

    @property
    def d(self) -> int:
        return len(self.j_indices)

    def ps_local_positions(self) -> np.ndarray:
        """Positions inside the relaxed model of the conditional-block parameters."""
        where = {int(g): k for k, g in enumerate(self.coord) if g >= 0}
        return np.array([where[int(g)] for g in self.j_indices], dtype=np.int64)


def _in_block(model: Model, nb: Neighborhood) -> np.ndarray:
    if nb.hop == 1:
        keep = [k for k, s in enumerate(model.j_supports) if nb.v in s]
    else:
        keep = [k for k, s in enumerate(model.j_supports) if set(s) <= nb.M and not set(s) <= nb.N2]
    return np.array(keep, dtype=np.int64)


def conditional_index_set(model: Model, v, hop: int = 1, **kw) -> LocalModel:
    nb = neighborhood(model, v, hop, **kw)
    return LocalModel("PS" if hop == 1 else "PS2", nb, _in_block(model, nb))


def relaxed_generating_class(model: Model, nb: Neighborhood) -> list[frozenset[int]]:
    """Interactions inside M not contained in the buffer, plus every subset of the buffer."""
    if len(nb.B) > MAX_BUFFER:
        raise BudgetExceeded(f"buffer of {len(nb.B)} vertices exceeds the cap {MAX_BUFFER}")
    gc = {d for d in model.generating_class if d <= nb.M and not d <= nb.B}
    bs = sorted(nb.B)
    for r in range(1, len(bs) + 1):
        gc.update(frozenset(c) for c in itertools.combinations(bs, r))
    return sorted(gc, key=lambda d: (len(d), sorted(d)))


def relaxed_marginal_model(model: Model, v, hop: int = 1, **kw) -> LocalModel:
    nb = neighborhood(model, v, hop, **kw)
    sub = submodel(model, nb.M, relaxed_generating_class(model, nb))
    sub.check_budget("relaxed marginal model")
    return LocalModel("M1" if hop == 1 else "M2", nb, _in_block(model, nb), sub, coordinate_map(sub, model))


def local_model(model: Model, v, kind: str, **kw) -> LocalModel:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    hop = 2 if kind.endswith("2") else 1
    if kind.startswith("PS"):
        return conditional_index_set(model, v, hop, **kw)
    return relaxed_marginal_model(model, v, hop, **kw)


def marginalize_theta(theta: np.ndarray, nb: Neighborhood, model: Model) -> np.ndarray:
    """Baseline parameters of the exact M-marginal of the model at ``theta``.

    Returned as a table over the M-cells, axes in increasing position order.
    Exponential in |V \\ M|; meant as a numerical reference.
    """
    p = theta_to_probabilities(theta, model).reshape(model.levels)
    drop = tuple(a for a in range(model.p) if a not in nb.M)
    marg = p.sum(axis=drop) if drop else p
    return baseline_parameters(np.log(marg))
