"""Exact rational linear algebra: a two-phase simplex with Bland's rule,
row reduction, nullspaces and certified ranks of integer matrices."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Sequence

import numpy as np
import scipy.linalg


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: list[Fraction] | None = None
    objective: Fraction | None = None
    duals: list[Fraction] | None = None
    pivots: int = 0


def _frac_matrix(a) -> list[list[Fraction]]:
    return [[Fraction(v) for v in row] for row in a]


def _pivot(tab: list[list[Fraction]], r: int, c: int) -> None:
    prow = tab[r]
    pv = prow[c]
    if pv != 1:
        inv = 1 / pv
        prow[:] = [v * inv for v in prow]
    nz = [k for k, v in enumerate(prow) if v != 0]
    for i, row in enumerate(tab):
        if i == r:
            continue
        f = row[c]
        if f != 0:
            for k in nz:
                row[k] -= f * prow[k]


def simplex(c: Sequence, A: Sequence[Sequence], b: Sequence, max_pivots: int = 100_000) -> LPResult:
    """Minimise ``c @ x`` subject to ``A x = b``, ``x >= 0`` over the rationals.

    Phase one uses one artificial per row.  Bland's rule (smallest eligible
    index for both entering and leaving variables) guarantees termination.
    The returned ``duals`` solve ``B^T y = c_B`` for the final basis, so they
    are an optimal solution of ``max b @ y  s.t.  A^T y <= c``.
    """
    A = _frac_matrix(A)
    m = len(A)
    n = len(A[0]) if m else len(c)
    b = [Fraction(v) for v in b]
    c = [Fraction(v) for v in c]
    sign = [1] * m
    for i in range(m):
        if b[i] < 0:
            sign[i] = -1
            A[i] = [-v for v in A[i]]
            b[i] = -b[i]
    # tableau: [A | I | b]; artificial columns n..n+m-1 double as B^{-1}
    tab = [A[i] + [Fraction(int(k == i)) for k in range(m)] + [b[i]] for i in range(m)]
    basis = list(range(n, n + m))
    pivots = 0

    def run(cost: list[Fraction], allowed: int) -> str:
        nonlocal pivots
        # reduced costs r_k = cost_k - cost_B . column_k, maintained across pivots
        obj = list(cost) + [Fraction(0)]
        for i, j in enumerate(basis):
            cj = cost[j]
            if cj != 0:
                row = tab[i]
                for k, a in enumerate(row):
                    if a != 0:
                        obj[k] -= cj * a
        while True:
            enter = next((k for k in range(allowed) if obj[k] < 0 and k not in basis_set), -1)
            if enter < 0:
                return "optimal"
            best = None
            leave = -1
            for i in range(m):
                a = tab[i][enter]
                if a > 0:
                    ratio = tab[i][-1] / a
                    if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                        best, leave = ratio, i
            if leave < 0:
                return "unbounded"
            basis_set.discard(basis[leave])
            basis[leave] = enter
            basis_set.add(enter)
            _pivot(tab, leave, enter)
            f = obj[enter]
            prow = tab[leave]
            for k, a in enumerate(prow):
                if a != 0:
                    obj[k] -= f * a
            pivots += 1
            if pivots > max_pivots:
                raise LPError("pivot limit exceeded")

    basis_set = set(basis)
    phase1 = [Fraction(0)] * n + [Fraction(1)] * m
    run(phase1, n + m)
    if sum(tab[i][-1] for i in range(m) if basis[i] >= n) != 0:
        return LPResult("infeasible", pivots=pivots)
    # drive degenerate artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= n:
            for k in range(n):
                if tab[i][k] != 0 and k not in basis_set:
                    basis_set.discard(basis[i])
                    basis[i] = k
                    basis_set.add(k)
                    _pivot(tab, i, k)
                    pivots += 1
                    break
    cost = c + [Fraction(0)] * m
    status = run(cost, n)
    if status != "optimal":
        return LPResult(status, pivots=pivots)
    x = [Fraction(0)] * n
    for i, j in enumerate(basis):
        if j < n:
            x[j] = tab[i][-1]
    cb = [cost[j] for j in basis]
    # y^T = c_B^T B^{-1}; B^{-1} sits in the artificial columns
    y = [sum((cb[i] * tab[i][n + k] for i in range(m) if cb[i] != 0), Fraction(0)) * sign[k] for k in range(m)]
    obj = sum((ci * xi for ci, xi in zip(c, x) if xi != 0), Fraction(0))
    return LPResult("optimal", x, obj, y, pivots)


# ------------------------------------------------------------ linear algebra
def rref(a) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row echelon form over Q; returns (matrix, pivot columns)."""
    m = _frac_matrix(a)
    rows = len(m)
    cols = len(m[0]) if rows else 0
    piv = []
    r = 0
    for c in range(cols):
        sel = next((i for i in range(r, rows) if m[i][c] != 0), None)
        if sel is None:
            continue
        m[r], m[sel] = m[sel], m[r]
        _pivot(m, r, c)
        piv.append(c)
        r += 1
        if r == rows:
            break
    return m[:r], piv


def nullspace(a, ncols: int | None = None) -> list[list[Fraction]]:
    """Basis of {x : a x = 0} over Q."""
    a = list(a)
    if not a:
        return [[Fraction(int(i == k)) for i in range(ncols)] for k in range(ncols)]
    red, piv = rref(a)
    n = len(red[0]) if red else ncols
    free = [k for k in range(n) if k not in piv]
    basis = []
    for f in free:
        v = [Fraction(0)] * n
        v[f] = Fraction(1)
        for r, pc in enumerate(piv):
            v[pc] = -red[r][f]
        basis.append(v)
    return basis


def integer_vector(v: Sequence[Fraction]) -> list[int]:
    """Scale a rational vector by the lcm of its denominators."""
    den = 1
    for x in v:
        den = lcm(den, Fraction(x).denominator)
    return [int(Fraction(x) * den) for x in v]


def int_matvec(rows: np.ndarray, v: Sequence[int]) -> np.ndarray:
    """Exact product of a small-integer matrix with an integer vector."""
    v = list(v)
    bound = max((abs(x) for x in v), default=0)
    if bound * max(rows.shape[1], 1) * max(int(np.abs(rows).max(initial=0)), 1) < 2**62:
        return rows.astype(np.int64) @ np.asarray(v, dtype=np.int64)
    return rows.astype(object) @ np.asarray(v, dtype=object)


def exact_rank(rows: np.ndarray) -> int:
    """Rank over Q of a small-integer matrix, certified exactly.

    A floating pivoted QR proposes independent rows; their exact rank and an
    integer basis of the orthogonal complement are computed with fractions,
    and every row is checked against that basis in integer arithmetic.
    """
    rows = np.asarray(rows)
    if rows.size == 0:
        return 0
    rows = np.unique(rows.astype(np.int64), axis=0)
    n = rows.shape[1]
    if rows.shape[0] <= 2 * n:
        red, _ = rref(rows.tolist())
        return len(red)
    _, _, perm = scipy.linalg.qr(rows.T.astype(float), mode="economic", pivoting=True)
    chosen = list(perm[: n])
    while True:
        red, _ = rref(rows[chosen].tolist())
        r = len(red)
        kern = [integer_vector(v) for v in nullspace(red, n)] if r < n else []
        if not kern:
            return r
        kmax = max(abs(x) for v in kern for x in v)
        if kmax * n < 2**62:
            prod = rows @ np.array(kern, dtype=np.int64).T
        else:
            prod = rows.astype(object) @ np.array(kern, dtype=object).T
        bad = np.nonzero((prod != 0).any(axis=1))[0]
        if bad.size == 0:
            return r
        chosen = sorted(set(chosen) | set(bad[: n].tolist()))
