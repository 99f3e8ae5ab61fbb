"""Faces of the marginal cone: smallest face containing the data, extension of
faces found on induced sub-models, and their intersection.

Two cones are supported.  The lifted cone is generated by the design rows
(1, f_i) and takes the cell counts (or (N, t)) as data point; it is the
default whenever counts are available.  The bare cone is generated by the f_i
alone with apex f_0 = 0; it needs only t, which is all that is available when
a statistic is given without its sample size.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .model import Model, DataError, cell_counts, coordinate_map, submodel
from .rational import LPError, int_matvec, integer_vector, exact_rank, rref, simplex

DEFAULT_LP_BUDGET = 2**16
_FULL_LP_ROWS = 600
_CUT_BATCH = 200


class CertificateError(RuntimeError):
    """A face certificate failed its exact check."""


def fraction_strings(v: Sequence[Fraction]) -> list[str]:
    return [f"{Fraction(x).numerator}/{Fraction(x).denominator}" for x in v]


@dataclass(eq=False)
class Face:
    model: Model
    g: tuple[Fraction, ...]
    facial: np.ndarray  # bool over cells in table order
    dimension: int
    lifted: bool = True
    rounds: int = 0

    @property
    def proper(self) -> bool:
        return not bool(self.facial.all())

    @property
    def facial_set(self) -> np.ndarray:
        return np.flatnonzero(self.facial)

    @property
    def is_zero(self) -> bool:
        return all(x == 0 for x in self.g)

    def to_json(self) -> dict:
        return {
            "g": fraction_strings(self.g),
            "facial_set_size": int(self.facial.sum()),
            "dimension": int(self.dimension),
            "proper": self.proper,
            "lifted": self.lifted,
        }


def generator_rows(model: Model, lifted: bool = True) -> np.ndarray:
    f = model.features.astype(np.int64)
    if lifted:
        return np.hstack([np.ones((f.shape[0], 1), dtype=np.int64), f])
    return f


def partition_rows(counts) -> tuple[np.ndarray, np.ndarray]:
    """Cells with positive counts and cells with zero counts."""
    n = np.asarray(counts)
    if np.any(n < 0):
        raise DataError("negative cell count")
    if not n.any():
        raise DataError("all cell counts are zero")
    return np.flatnonzero(n > 0), np.flatnonzero(n == 0)


def face_dimension(face_or_rows, lifted: bool | None = None) -> int:
    if isinstance(face_or_rows, Face):
        face = face_or_rows
        rows = generator_rows(face.model, face.lifted)[face.facial]
        return exact_rank(rows)
    return exact_rank(np.asarray(face_or_rows))


# ------------------------------------------------------------------ the LP
def _max_certificate(eq_basis, rows: np.ndarray, objective: np.ndarray):
    """Maximise ``objective @ g`` over valid certificates in the box [-1, 1].

    Valid means ``eq_basis @ g == 0`` and ``rows @ g >= 0``.  Solved through
    its dual with the exact simplex; rows are added lazily when there are many.
    Returns the rational optimiser ``g`` and the optimal value.
    """
    n = rows.shape[1]
    if rows.shape[0] <= _FULL_LP_ROWS:
        active = list(range(rows.shape[0]))
    else:
        order = np.argsort(-(rows @ objective.clip(min=0)), kind="stable")
        active = sorted(set(np.linspace(0, rows.shape[0] - 1, _FULL_LP_ROWS // 2, dtype=int).tolist())
                        | set(order[: _FULL_LP_ROWS // 2].tolist()))
    while True:
        cols = []
        for i in active:
            cols.append([-int(x) for x in rows[i]])
        for e in eq_basis:
            cols.append(list(e))
            cols.append([-x for x in e])
        for d in range(n):
            unit = [0] * n
            unit[d] = 1
            cols.append(unit)
            cols.append([-x for x in unit])
        A = [list(r) for r in zip(*cols)]
        cost = [0] * (len(cols) - 2 * n) + [1] * (2 * n)
        res = simplex(cost, A, [int(x) for x in objective])
        if res.status != "optimal":
            raise LPError(f"certificate LP ended as {res.status}; the zero vector is always feasible")
        g = res.duals
        gi = integer_vector(g)
        vals = int_matvec(rows, gi)
        bad = np.flatnonzero(vals < 0)
        if bad.size == 0:
            return g, res.objective
        worst = bad[np.argsort(vals[bad], kind="stable")][:_CUT_BATCH]
        active = sorted(set(active) | set(worst.tolist()))


def _smallest_face(rows: np.ndarray, eq_rows: np.ndarray, candidates: np.ndarray):
    """Certificate g and mask of candidate rows forced into the face.

    Rounds maximise the total slack of the still-undecided candidates; any row
    a valid certificate makes positive leaves the face, and the loop stops when
    the optimum is zero, which proves the remaining rows lie on the face.
    """
    n = rows.shape[1]
    eq_basis = rref(eq_rows.tolist())[0] if len(eq_rows) else []
    undecided = candidates.copy()
    total = [Fraction(0)] * n
    rounds = 0
    while undecided.any():
        objective = rows[undecided].sum(axis=0)
        g, opt = _max_certificate(eq_basis, rows, objective)
        rounds += 1
        if opt == 0:
            break
        vals = int_matvec(rows, integer_vector(g))
        gained = undecided & (vals > 0)
        if not gained.any():
            raise LPError("positive optimum without a strictly positive row")
        undecided &= ~gained
        total = [a + b for a, b in zip(total, g)]
    return total, undecided, rounds


def _verify(rows: np.ndarray, g: Sequence[Fraction], facial: np.ndarray, point=None) -> None:
    vals = int_matvec(rows, integer_vector(g))
    if np.any(vals[facial] != 0) or np.any(vals[~facial] <= 0):
        raise CertificateError("certificate does not separate the facial set")
    if point is not None:
        den = integer_vector(g)
        if sum(int(a) * int(b) for a, b in zip(point, den)) != 0:
            raise CertificateError("data point is not on the face")


def _check_lp_budget(model: Model, budget: int) -> None:
    if model.n_cells > budget:
        from .model import BudgetExceeded

        raise BudgetExceeded(f"{model.n_cells} cells exceed the LP budget {budget}")


def smallest_face(counts, model: Model, lp_budget: int = DEFAULT_LP_BUDGET) -> Face:
    """Smallest face of the lifted cone containing the count vector's statistic."""
    _check_lp_budget(model, lp_budget)
    counts = np.asarray(counts, dtype=np.int64).reshape(-1)
    if counts.size != model.n_cells:
        raise DataError(f"expected {model.n_cells} cell counts, got {counts.size}")
    plus, _ = partition_rows(counts)
    rows = generator_rows(model, lifted=True)
    cand = counts == 0
    g, undecided, rounds = _smallest_face(rows, rows[plus], cand)
    facial = (counts > 0) | undecided
    _verify(rows, g, facial, point=rows.T @ counts)
    return Face(model, tuple(g), facial, exact_rank(rows[facial]), True, rounds)


def smallest_face_of_statistic(t, model: Model, N: int | None = None,
                               lp_budget: int = DEFAULT_LP_BUDGET) -> Face:
    """Smallest face containing a sufficient statistic.

    With ``N`` the lifted cone and data point (N, t) are used; without it the
    bare cone generated by the f_i.
    """
    _check_lp_budget(model, lp_budget)
    t = np.asarray(t, dtype=np.int64)
    lifted = N is not None
    point = np.concatenate([[N], t]) if lifted else t
    rows = generator_rows(model, lifted)
    g, undecided, rounds = _smallest_face(rows, point[None, :], np.ones(len(rows), dtype=bool))
    _verify(rows, g, undecided, point=point)
    return Face(model, tuple(g), undecided, exact_rank(rows[undecided]), lifted, rounds)


def mle_exists(counts, model: Model, lp_budget: int = DEFAULT_LP_BUDGET) -> tuple[bool, Face]:
    face = smallest_face(counts, model, lp_budget)
    return not face.proper, face


# --------------------------------------------------------- local procedure
def induced_marginal_model(model: Model, vertices: Iterable) -> Model:
    """Induced model on a set of vertex labels."""
    vs = list(vertices)
    if not vs:
        raise ValueError("vertex subset must be non-empty")
    return submodel(model, [model.position[v] for v in vs])


def marginal_statistic(t, sub: Model, model: Model) -> np.ndarray:
    idx = coordinate_map(sub, model)
    if np.any(idx < 0):
        raise ValueError("sub-model parameter missing from the parent J-set")
    return np.asarray(t)[idx]


def extend_face(face: Face, model: Model) -> Face:
    """Pad a sub-model certificate with zeros; the facial set becomes every
    cell whose restriction lies in the local facial set."""
    sub = face.model
    idx = coordinate_map(sub, model)
    if np.any(idx < 0):
        raise ValueError("coordinate map mismatch: sub-model parameter not in parent J-set")
    off = 1 if face.lifted else 0
    g = [Fraction(0)] * (model.n_params + off)
    if face.lifted:
        g[0] = face.g[0]
    for k, gk in enumerate(idx):
        g[gk + off] = face.g[k + off]
    cols = [model.position[lab] for lab in sub.labels]
    local_idx = sub.cell_index(model.cells[:, cols])
    facial = face.facial[local_idx]
    rows = generator_rows(model, face.lifted)
    _verify(rows, g, facial)
    return Face(model, tuple(g), facial, exact_rank(rows[facial]), face.lifted)


def intersect_faces(faces: Sequence[Face], point=None) -> Face:
    """Face governed by the sum of the certificates: the intersection."""
    if not faces:
        raise ValueError("need at least one face")
    model, lifted = faces[0].model, faces[0].lifted
    if any(f.model is not model or f.lifted != lifted for f in faces):
        raise ValueError("faces must share a model and a cone")
    g = [sum(col, Fraction(0)) for col in zip(*(f.g for f in faces))]
    facial = np.logical_and.reduce([f.facial for f in faces])
    rows = generator_rows(model, lifted)
    try:
        _verify(rows, g, facial, point=point)
    except CertificateError as exc:
        raise CertificateError(f"intersection certificate invalid, upstream bug: {exc}") from exc
    return Face(model, tuple(g), facial, exact_rank(rows[facial]), lifted)


@dataclass
class LocalFaceReport:
    subsets: list[list]
    local_dimensions: list[int]
    extended_dimensions: list[int]
    free_dimensions: list[int]
    face: Face
    status: str  # "proper" | "interior" | "uninformative"
    local_faces: list[Face] = field(default_factory=list, repr=False)

    @property
    def proper(self) -> bool:
        return self.status == "proper"

    def to_json(self) -> dict:
        out = self.face.to_json()
        out.update(
            subsets=self.subsets,
            local_dimensions=self.local_dimensions,
            extended_dimensions=self.extended_dimensions,
            free_dimensions=self.free_dimensions,
            status=self.status,
        )
        return out


def local_face_analysis(model: Model, subsets: Sequence[Sequence], *, samples=None, t=None,
                        N: int | None = None, lp_budget: int = DEFAULT_LP_BUDGET) -> LocalFaceReport:
    """Split, extend and intersect.

    Data are either ``samples`` (lifted cones on marginal tables) or a
    statistic ``t`` (lifted if ``N`` is given, bare otherwise).
    """
    if (samples is None) == (t is None):
        raise ValueError("give samples or t")
    subs = [induced_marginal_model(model, A) for A in subsets]
    covered = set()
    for sub in subs:
        covered |= {frozenset(model.position[sub.labels[v]] for v in d) for d in sub.generating_class}
    if covered != set(model.generating_class):
        warnings.warn("subsets do not cover the generating class; some interactions are never examined",
                      stacklevel=2)
    local, extended, free = [], [], []
    for sub in subs:
        if samples is not None:
            cols = [model.position[lab] for lab in sub.labels]
            f = smallest_face(cell_counts(np.asarray(samples)[:, cols], sub), sub, lp_budget)
        else:
            f = smallest_face_of_statistic(marginal_statistic(t, sub, model), sub, N, lp_budget)
        local.append(f)
        extended.append(extend_face(f, model))
        free.append(model.n_params - sub.n_params)
    if samples is not None:
        point = generator_rows(model, True).T @ cell_counts(samples, model)
    else:
        point = np.concatenate([[N], t]) if N is not None else np.asarray(t)
    face = intersect_faces(extended, point=point)
    if face.proper:
        status = "proper"
    elif samples is not None and cell_counts(samples, model).all():
        status = "interior"
    else:
        status = "uninformative"
    return LocalFaceReport(
        [list(A) for A in subsets], [f.dimension for f in local], [f.dimension for f in extended],
        free, face, status, local,
    )


def lattice_row_windows(rows: int, cols: int, width: int = 2) -> list[list[int]]:
    """Consecutive row bands of a lattice labelled 1..rows*cols row-major."""
    return [
        [r * cols + c + 1 for r in range(start, start + width) for c in range(cols)]
        for start in range(rows - width + 1)
    ]
