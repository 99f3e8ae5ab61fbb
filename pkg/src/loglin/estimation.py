"""Global, conditional and relaxed-marginal likelihood fits, consensus
averaging, the conditional/marginal equality check and assumption diagnostics."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp, softmax

from .local import LocalModel, Neighborhood, local_model, neighborhood
from .model import Model, cell_counts, marginal_samples, validate_samples

GTOL = 1e-8
MAX_ITER = 200
DIVERGENCE = 30.0
STEP_TOL = 1e-4
RIDGE = 1e-10

Objective = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    theta_hat: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    nonexistence_flag: bool
    reason: str
    loglik: float
    scaling: str = "raw"

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_gradient_norm": float(self.final_gradient_norm),
            "nonexistence_flag": self.nonexistence_flag,
            "reason": self.reason,
            "loglik": float(self.loglik),
            "scaling": self.scaling,
            "max_abs_theta": float(np.max(np.abs(self.theta_hat), initial=0.0)),
        }


def _newton_direction(g: np.ndarray, H: np.ndarray) -> np.ndarray:
    A = -H
    try:
        c = scipy.linalg.cho_factor(A, check_finite=False)
        return scipy.linalg.cho_solve(c, g, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(np.diag(A)), initial=0.0)))
    try:
        c = scipy.linalg.cho_factor(A + RIDGE * scale * np.eye(len(g)), check_finite=False)
        return scipy.linalg.cho_solve(c, g, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FitError("Hessian solve failed after ridge fallback") from exc


def newton_maximize(fun: Objective, x0, *, gtol: float = GTOL, max_iter: int = MAX_ITER,
                    divergence: float = DIVERGENCE, step_tol: float = STEP_TOL,
                    scaling: str = "raw") -> FitResult:
    """Damped Newton ascent for a concave objective.

    Converged means a small gradient *and* a small Newton step.  When the
    supremum is not attained the Newton step stays of order one along the
    escape direction while the gradient vanishes, so ascent continues until
    the parameters cross ``divergence`` and the fit is flagged.
    """
    x = np.array(x0, dtype=float)
    val, g, H = fun(x)
    if not np.isfinite(val) or not np.all(np.isfinite(g)):
        raise FitError("objective is not finite at the initial point")
    it = 0
    gnorm = float(np.max(np.abs(g), initial=0.0))
    while it < max_iter:
        d = _newton_direction(g, H)
        if gnorm < gtol and float(np.max(np.abs(d), initial=0.0)) < step_tol:
            return FitResult(x, True, it, gnorm, False, "converged", val, scaling)
        s = 1.0
        accepted = False
        while s > 1e-12:
            xn = x + s * d
            vn, gn, Hn = fun(xn)
            if np.isfinite(vn) and vn >= val - 1e-13 * (1.0 + abs(val)):
                accepted = True
                break
            s *= 0.5
        it += 1
        if not accepted:
            return FitResult(x, False, it, gnorm, False, "line search failed", val, scaling)
        x, val, g, H = xn, vn, gn, Hn
        gnorm = float(np.max(np.abs(g), initial=0.0))
        if np.max(np.abs(x)) > divergence:
            return FitResult(x, False, it, gnorm, True, "parameter divergence", val, scaling)
    return FitResult(x, False, it, gnorm, False, "iteration limit", val, scaling)


# ------------------------------------------------------------- objectives
def table_objective(model: Model, counts: np.ndarray, scale: float = 1.0) -> Objective:
    """``scale * (<theta, t> - N k(theta))`` for cell counts over the full table."""
    F = model.features.astype(float)
    counts = np.asarray(counts, dtype=float)
    N = counts.sum()
    t = F.T @ counts

    def fun(theta):
        eta = F @ theta
        k = logsumexp(eta)
        p = np.exp(eta - k)
        mu = F.T @ p
        val = scale * (t @ theta - N * k)
        grad = scale * (t - N * mu)
        cov = (F * p[:, None]).T @ F - np.outer(mu, mu)
        return val, grad, -scale * N * cov

    return fun


def conditional_design(samples: np.ndarray, model: Model, block: Sequence[int],
                       cols: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Features of every block configuration against each distinct conditioning pattern.

    Returns ``(G, weights, observed)``: G has shape (patterns, |I_block|, d),
    weights counts the samples per pattern and ``observed`` is the summed
    feature vector of the samples themselves.
    """
    block = sorted(block)
    x = np.asarray(samples)
    obs = model.feature_rows(x, cols).sum(axis=0, dtype=np.int64)
    masked = x.copy()
    masked[:, block] = 0
    patterns, inv = np.unique(masked, axis=0, return_inverse=True)
    weights = np.bincount(inv.reshape(-1), minlength=len(patterns))
    configs = np.array(list(itertools.product(*(range(model.levels[v]) for v in block))), dtype=x.dtype)
    P, C = len(patterns), len(configs)
    cells = np.repeat(patterns, C, axis=0)
    cells[:, block] = np.tile(configs, (P, 1))
    G = model.feature_rows(cells, cols).reshape(P, C, len(cols)).astype(float)
    return G, weights.astype(float), obs.astype(float)


def conditional_objective(G: np.ndarray, weights: np.ndarray, observed: np.ndarray) -> Objective:
    """Per-sample conditional log-likelihood of a block given its conditioning set."""
    N = weights.sum()

    def fun(theta):
        eta = G @ theta  # (P, C)
        lse = logsumexp(eta, axis=1)
        pi = np.exp(eta - lse[:, None])
        mu = np.einsum("pc,pcd->pd", pi, G)
        val = (observed @ theta - weights @ lse) / N
        grad = (observed - weights @ mu) / N
        second = np.einsum("p,pc,pcd,pce->de", weights, pi, G, G, optimize=True)
        cov = second - (mu * weights[:, None]).T @ mu
        return val, grad, -cov / N

    return fun


# -------------------------------------------------------------------- fits
def fit_global(samples, model: Model, **kw) -> FitResult:
    model.check_budget("global likelihood")
    counts = cell_counts(samples, model)
    return newton_maximize(table_objective(model, counts), np.zeros(model.n_params), scaling="raw", **kw)


@dataclass
class LocalEstimate:
    v: object  # vertex label
    kind: str
    fit: FitResult
    ps_index: np.ndarray  # global J positions
    ps_values: np.ndarray
    local: LocalModel = field(repr=False, default=None)
    raw_fit: FitResult | None = field(repr=False, default=None)
    buffer_face: bool = False

    @property
    def d(self) -> int:
        return len(self.ps_index)

    def summary(self) -> dict:
        out = {"vertex": self.v, "kind": self.kind, "d_v": self.d, "buffer_face": self.buffer_face}
        out.update(self.fit.summary())
        return out


def fit_local_conditional(samples, model: Model, v, hop: int = 1, **kw) -> LocalEstimate:
    x = validate_samples(samples, model)
    lm = local_model(model, v, "PS" if hop == 1 else "PS2")
    G, w, obs = conditional_design(x, model, sorted(lm.nbhd.block), lm.j_indices)
    fit = newton_maximize(conditional_objective(G, w, obs), np.zeros(lm.d), scaling="per-sample", **kw)
    return LocalEstimate(v, lm.kind, fit, lm.j_indices, fit.theta_hat.copy(), lm)


def restricted_table_objective(model: Model, counts: np.ndarray, mask: np.ndarray,
                               scale: float = 1.0) -> tuple[Objective, np.ndarray, np.ndarray]:
    """Likelihood of distributions supported on ``mask`` in identifiable coordinates.

    Returns ``(fun, Q, null)``: ``fun`` takes coordinates z with theta = Q z,
    Q spans the parameter directions that change the restricted distribution
    and ``null`` spans the directions that do not.
    """
    if not np.any(mask):
        raise FitError("restricted fit needs at least one cell")
    F = model.features[mask].astype(float)
    lifted = np.hstack([np.ones((len(F), 1)), F])
    # directions (c, delta) with c + F delta = 0 leave the distribution unchanged
    w, vec = np.linalg.eigh(lifted.T @ lifted)
    kern = vec[:, w <= max(w[-1], 1.0) * 1e-11]
    null = scipy.linalg.orth(kern[1:]) if kern.shape[1] else np.zeros((F.shape[1], 0))
    if null.shape[1]:
        Q = scipy.linalg.null_space(null.T)
    else:
        Q = np.eye(F.shape[1])
    inner = table_objective_from(F @ Q, np.asarray(counts, dtype=float)[mask], scale)
    return inner, Q, null


def table_objective_from(F: np.ndarray, counts: np.ndarray, scale: float) -> Objective:
    N = counts.sum()
    t = F.T @ counts

    def fun(z):
        eta = F @ z
        k = logsumexp(eta)
        p = np.exp(eta - k)
        mu = F.T @ p
        cov = (F * p[:, None]).T @ F - np.outer(mu, mu)
        return scale * (t @ z - N * k), scale * (t - N * mu), -scale * N * cov

    return fun


def buffer_face_mask(lm: LocalModel, counts: np.ndarray) -> np.ndarray:
    """Cells of the relaxed model whose buffer configuration was observed."""
    sub = lm.model
    order = sorted(lm.nbhd.M)
    bpos = [order.index(b) for b in sorted(lm.nbhd.B)]
    table = counts.reshape(sub.levels)
    drop = tuple(a for a in range(sub.p) if a not in bpos)
    seen = table.sum(axis=drop) > 0 if drop else table > 0
    cells = sub.cells
    return seen[tuple(cells[:, bpos].T)] if bpos else np.ones(len(cells), dtype=bool)


def fit_local_marginal(samples, model: Model, v, hop: int = 1, **kw) -> LocalEstimate:
    """Relaxed marginal fit; the conditional block is returned in global coordinates.

    The saturated buffer block has no finite MLE as soon as some buffer
    configuration is unobserved.  In that case the fit is redone on the face
    of cells with observed buffer configurations; the conditional block stays
    identifiable there and its estimate is kept, while ``raw_fit`` holds the
    flagged unrestricted attempt.
    """
    x = validate_samples(samples, model)
    lm = local_model(model, v, "M1" if hop == 1 else "M2")
    sub = lm.model
    counts = cell_counts(marginal_samples(x, sub, model), sub)
    scale = 1.0 / max(len(x), 1)
    raw = newton_maximize(table_objective(sub, counts, scale), np.zeros(sub.n_params),
                          scaling="per-sample", **kw)
    ps_pos = lm.ps_local_positions()
    if not raw.nonexistence_flag:
        return LocalEstimate(v, lm.kind, raw, lm.j_indices, raw.theta_hat[ps_pos], lm)
    mask = buffer_face_mask(lm, counts)
    fun, Q, null = restricted_table_objective(sub, counts, mask, scale)
    if null.shape[1] and np.max(np.abs(null[ps_pos]), initial=0.0) > 1e-8:
        return LocalEstimate(v, lm.kind, raw, lm.j_indices, raw.theta_hat[ps_pos], lm, raw_fit=raw)
    zf = newton_maximize(fun, np.zeros(Q.shape[1]), scaling="per-sample", **kw)
    theta = Q @ zf.theta_hat
    reason = "converged on buffer face" if zf.converged else zf.reason
    fit = FitResult(theta, zf.converged, raw.iterations + zf.iterations, zf.final_gradient_norm,
                    zf.nonexistence_flag, reason, zf.loglik, "per-sample")
    return LocalEstimate(v, lm.kind, fit, lm.j_indices, theta[ps_pos], lm, raw_fit=raw, buffer_face=True)


def fit_local(samples, model: Model, v, kind: str, **kw) -> LocalEstimate:
    hop = 2 if kind.endswith("2") else 1
    if kind.startswith("PS"):
        return fit_local_conditional(samples, model, v, hop, **kw)
    return fit_local_marginal(samples, model, v, hop, **kw)


# --------------------------------------------------------------- consensus
@dataclass
class ConsensusEstimate:
    theta_hat: np.ndarray
    contributors: np.ndarray
    poisoned: np.ndarray
    components: list[LocalEstimate] = field(repr=False, default_factory=list)

    @property
    def partial(self) -> bool:
        return bool((self.contributors == 0).any())

    @property
    def any_poisoned(self) -> bool:
        return bool(self.poisoned.any())


def consensus(estimates: Sequence[LocalEstimate], model: Model) -> ConsensusEstimate:
    """Unweighted mean of every local estimate of each coordinate.

    Contributions are summed in a fixed (vertex position, then j) order so the
    result does not depend on the order the fits finished in.
    """
    total = np.zeros(model.n_params)
    count = np.zeros(model.n_params, dtype=np.int64)
    poisoned = np.zeros(model.n_params, dtype=bool)
    ordered = sorted(estimates, key=lambda e: (model.position[e.v], e.kind))
    for est in ordered:
        bad = est.fit.nonexistence_flag
        for j, val in zip(est.ps_index, est.ps_values):
            total[j] += val
            count[j] += 1
            poisoned[j] |= bad
    theta = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return ConsensusEstimate(theta, count, poisoned, list(ordered))


def composite_estimate(samples, model: Model, kind: str = "PS", **kw) -> ConsensusEstimate:
    ests = [fit_local(samples, model, lab, kind, **kw) for lab in model.labels]
    return consensus(ests, model)


# ---------------------------------------------------------------- equality
@dataclass
class EqualityReport:
    v: object
    hop: int
    discrepancy: float
    hypothesis_holds: bool
    conditional: LocalEstimate
    marginal: LocalEstimate

    @property
    def clean(self) -> bool:
        return self.conditional.fit.converged and self.marginal.fit.converged

    def summary(self) -> dict:
        return {
            "vertex": self.v,
            "hop": self.hop,
            "discrepancy": float(self.discrepancy),
            "hypothesis_holds": self.hypothesis_holds,
            "conditional": self.conditional.fit.summary(),
            "marginal": self.marginal.fit.summary(),
        }


def check_equality(samples, model: Model, v, hop: int = 1, *, gtol: float = 1e-10, **kw) -> EqualityReport:
    """Compare the conditional block of the relaxed marginal fit with the conditional fit.

    A relaxed marginal fit flagged for divergence is still compared: the
    escape happens in the saturated buffer block when some buffer
    configuration is unobserved, which leaves the conditional block intact.
    """
    cond = fit_local_conditional(samples, model, v, hop, gtol=gtol, **kw)
    marg = fit_local_marginal(samples, model, v, hop, gtol=gtol, **kw)
    if cond.fit.nonexistence_flag:
        raise FitError(f"conditional fit at vertex {v} diverged; no estimate to compare")
    disc = float(np.max(np.abs(cond.ps_values - marg.ps_values)))
    return EqualityReport(v, hop, disc, cond.local.nbhd.theorem_applies, cond, marg)


# ------------------------------------------------------------- diagnostics
@dataclass
class AssumptionDiagnostics:
    D_max_hat: float
    C_min_hat: float
    d_v: list[int]
    per_vertex: list[dict]

    @property
    def violated(self) -> bool:
        return self.C_min_hat <= 0


def conditional_fisher(samples, model: Model, v, theta_ps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex (1/N) sum W W^T and Fisher matrix built as H ∘ (W W^T).

    W^n has entry 1 for parameter j when the neighbours of v in sample n match
    j off v; H^n holds p_k - p_k^2 on equal levels of v and -p_k p_l otherwise.
    """
    x = validate_samples(samples, model)
    lm = local_model(model, v, "PS")
    pos = lm.nbhd.v
    J = lm.j_indices
    jl = [model.j_list[j] for j in J]
    lv = np.array([j[pos] for j in jl])
    N = len(x)
    # W: match on the neighbour part of each j
    W = np.ones((N, len(J)))
    for k, j in enumerate(jl):
        for u in model.j_supports[J[k]]:
            if u != pos:
                W[:, k] *= x[:, u] == j[u]
    # conditional probabilities of every non-zero level of v
    levels = range(1, model.levels[pos])
    z = np.stack([(W * (lv == a)) @ theta_ps for a in levels], axis=1)
    probs = softmax(np.hstack([np.zeros((N, 1)), z]), axis=1)[:, 1:]
    pk = probs[:, lv - 1]  # (N, d)
    same = lv[:, None] == lv[None, :]
    H = np.where(same[None], pk[:, :, None] - pk[:, :, None] ** 2, -pk[:, :, None] * pk[:, None, :])
    WW = W[:, :, None] * W[:, None, :]
    return WW.mean(axis=0), (H * WW).mean(axis=0)


def assumption_diagnostics(samples, model: Model, theta_ref: np.ndarray) -> AssumptionDiagnostics:
    theta_ref = np.asarray(theta_ref, dtype=float)
    rows, dmax, cmin = [], 0.0, np.inf
    for lab in model.labels:
        lm = local_model(model, lab, "PS")
        ww, fisher = conditional_fisher(samples, model, lab, theta_ref[lm.j_indices])
        lmax = float(np.linalg.eigvalsh(ww)[-1])
        lmin = float(np.linalg.eigvalsh(fisher)[0])
        rows.append({"vertex": lab, "d_v": lm.d, "lambda_max_WW": lmax, "lambda_min_fisher": lmin})
        dmax, cmin = max(dmax, lmax), min(cmin, lmin)
    return AssumptionDiagnostics(dmax, float(cmin), [r["d_v"] for r in rows], rows)


def relative_mse(theta_hat, theta_star) -> float:
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_hat.shape != theta_star.shape:
        raise ValueError("estimate and truth differ in length")
    den = float(theta_star @ theta_star)
    if den == 0:
        raise ValueError("relative error undefined for a zero true parameter")
    diff = theta_hat - theta_star
    return float(diff @ diff) / den
