import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loglin.estimation import (
    FitError,
    FitResult,
    LocalEstimate,
    assumption_diagnostics,
    buffer_face_mask,
    check_equality,
    composite_estimate,
    conditional_design,
    conditional_fisher,
    conditional_objective,
    consensus,
    fit_global,
    fit_local_conditional,
    fit_local_marginal,
    newton_maximize,
    relative_mse,
    restricted_table_objective,
    table_objective,
)
from loglin.faces import mle_exists
from loglin.local import local_model
from loglin.model import (
    build_model,
    cell_counts,
    expected_features,
    lattice_model,
    sufficient_statistics,
)
from loglin.sampler import SamplerConfig, sample_exact

from conftest import small_models
from oracles import fd_check


def quad(x):
    return -0.5 * float((x[0] - 1) ** 2), np.array([-(x[0] - 1)]), np.array([[-1.0]])


def test_newton_quadratic():
    r = newton_maximize(quad, [0.0])
    assert r.converged and r.theta_hat[0] == pytest.approx(1.0) and r.iterations <= 2


def test_newton_nonfinite_start():
    with pytest.raises(FitError):
        newton_maximize(lambda x: (math.nan, np.zeros(1), -np.eye(1)), [0.0])


def bernoulli(n0, n1):
    return np.array([[0]] * n0 + [[1]] * n1)


def test_global_closed_form():
    m = build_model([2], edges=[])
    r = fit_global(bernoulli(3, 2), m)
    assert r.converged and r.theta_hat[0] == pytest.approx(math.log(2 / 3), abs=1e-10)
    assert r.final_gradient_norm < 1e-8


def test_global_nonexistence():
    m = build_model([2], edges=[])
    r = fit_global(bernoulli(0, 5), m)
    assert r.nonexistence_flag and not r.converged
    assert r.reason == "parameter divergence" and np.max(np.abs(r.theta_hat)) > 30
    assert not mle_exists([0, 5], m)[0]


def test_global_uniform_edge(edge_model):
    x = edge_model.cells.repeat(5, axis=0)
    r = fit_global(x, edge_model)
    assert r.converged and np.max(np.abs(r.theta_hat)) < 1e-6


def test_moment_matching(cycle4):
    theta = np.random.default_rng(1).uniform(-1, 1, cycle4.n_params)
    x = sample_exact(cycle4, theta, SamplerConfig(500, seed=4))
    r = fit_global(x, cycle4)
    s = sufficient_statistics(x, cycle4)
    assert r.converged
    assert np.max(np.abs(s.t / s.N - expected_features(r.theta_hat, cycle4))) < 1e-8


def test_conditional_consistency(cycle4):
    x = sample_exact(cycle4, np.zeros(cycle4.n_params), SamplerConfig(5000, seed=9))
    for lab in cycle4.labels:
        est = fit_local_conditional(x, cycle4, lab)
        G, w, obs = conditional_design(x, cycle4, [cycle4.position[lab]], est.ps_index)
        _, _, H = conditional_objective(G, w, obs)(est.ps_values)
        se = np.sqrt(np.diag(np.linalg.inv(-H)) / len(x))
        assert np.all(np.abs(est.ps_values) < 3 * se + 1e-12)


def test_single_vertex_conditional():
    m = build_model([2], edges=[])
    est = fit_local_conditional(bernoulli(3, 2), m, 0)
    assert est.ps_values[0] == pytest.approx(math.log(2 / 3), abs=1e-9)


def test_path_marginal_is_global(path3):
    theta = np.array([0.3, -0.2, 0.5, 0.8, -0.6])
    x = sample_exact(path3, theta, SamplerConfig(400, seed=2))
    g = fit_global(x, path3)
    est = fit_local_marginal(x, path3, 2)
    assert np.allclose(est.ps_values, g.theta_hat[est.ps_index], atol=1e-8)


def test_equality_on_cycle(cycle4):
    theta = np.random.default_rng(5).uniform(-1, 1, cycle4.n_params)
    x = sample_exact(cycle4, theta, SamplerConfig(300, seed=5))
    for lab in cycle4.labels:
        r = check_equality(x, cycle4, lab, 1)
        assert r.hypothesis_holds and r.clean
        assert r.discrepancy < 1e-6


def test_equality_hypothesis_flag_on_path(path3):
    x = sample_exact(path3, np.zeros(5), SamplerConfig(200, seed=1))
    assert not check_equality(x, path3, 2, 1).hypothesis_holds


def test_buffer_face_extended_fit():
    """Unobserved buffer configurations: the conditional block is still recovered."""
    m = lattice_model(3, 3)
    rng = np.random.default_rng(0)
    theta = rng.uniform(-1, 1, m.n_params)
    x = sample_exact(m, theta, SamplerConfig(100, seed=0))
    est = fit_local_marginal(x, m, 5, 1)
    assert est.buffer_face and est.raw_fit.nonexistence_flag
    assert est.fit.converged
    ps = fit_local_conditional(x, m, 5, 1, gtol=1e-10)
    assert np.max(np.abs(ps.ps_values - est.ps_values)) < 1e-6
    mask = buffer_face_mask(est.local, cell_counts(x[:, sorted(est.local.nbhd.M)], est.local.model))
    assert 0 < mask.sum() < len(mask)


# ------------------------------------------------------------ derivatives
@settings(max_examples=15)
@given(small_models(), st.integers(0, 2**32 - 1))
def test_table_objective_derivatives(model, seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 5, model.n_cells)
    fun = table_objective(model, counts, 1.0 / max(counts.sum(), 1))
    for _ in range(10):
        assert fd_check(fun, rng.normal(size=model.n_params)) < 1e-6


@pytest.mark.parametrize("hop", [1, 2])
def test_conditional_objective_derivatives(hop):
    m = lattice_model(2, 3)
    rng = np.random.default_rng(hop)
    x = np.stack([rng.integers(0, 2, 80) for _ in range(m.p)], axis=1)
    for lab in (1, 5):
        lm = local_model(m, lab, "PS" if hop == 1 else "PS2")
        fun = conditional_objective(*conditional_design(x, m, sorted(lm.nbhd.block), lm.j_indices))
        for _ in range(10):
            assert fd_check(fun, rng.normal(size=lm.d)) < 1e-6


def test_restricted_objective_derivatives():
    m = lattice_model(3, 3)
    lm = local_model(m, 5, "M1")
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 3, lm.model.n_cells)
    counts[:8] = 0
    fun, Q, null = restricted_table_objective(lm.model, counts, counts > 0, 0.01)
    for _ in range(10):
        assert fd_check(fun, rng.normal(size=Q.shape[1])) < 1e-6


# --------------------------------------------------------------- consensus
def fake(v, kind, idx, vals, flag=False):
    fit = FitResult(np.array(vals, float), not flag, 1, 0.0, flag, "x", 0.0)
    return LocalEstimate(v, kind, fit, np.array(idx), np.array(vals, float))


def test_consensus_average_and_flags(edge_model):
    c = consensus([fake(1, "PS", [0, 2], [0.5, 1.0]), fake(2, "PS", [1, 2], [0.1, 1.0])], edge_model)
    assert c.theta_hat.tolist() == [0.5, 0.1, 1.0]
    assert c.contributors.tolist() == [1, 1, 2]
    assert not c.partial and not c.any_poisoned
    c = consensus([fake(1, "PS", [0, 2], [0.5, 1.0], flag=True)], edge_model)
    assert c.partial and c.poisoned.tolist() == [True, False, True]
    assert c.theta_hat[0] == 0.5


def test_consensus_counts_on_cycle(cycle4):
    x = sample_exact(cycle4, np.zeros(8), SamplerConfig(300, seed=0))
    c = composite_estimate(x, cycle4, "PS")
    assert c.contributors.tolist() == [1, 1, 1, 1, 2, 2, 2, 2]
    assert c.contributors.sum() == cycle4.p + 2 * 4


def test_consensus_order_independent(cycle4):
    x = sample_exact(cycle4, np.zeros(8), SamplerConfig(300, seed=0))
    ests = [fit_local_conditional(x, cycle4, lab) for lab in cycle4.labels]
    a = consensus(ests, cycle4)
    b = consensus(ests[::-1], cycle4)
    assert np.array_equal(a.theta_hat, b.theta_hat)


def test_consensus_relabel_invariance():
    m = lattice_model(2, 3)
    perm = [3, 0, 5, 1, 4, 2]  # new position k holds old vertex perm[k]
    inv = np.argsort(perm)
    edges = [(int(inv[a]), int(inv[b])) for a, b in m.edges]
    m2 = build_model(m.levels, edges=edges, labels=[m.labels[v] for v in perm])
    theta = np.random.default_rng(2).uniform(-1, 1, m.n_params)
    x = sample_exact(m, theta, SamplerConfig(400, seed=8))
    a = composite_estimate(x, m, "PS")
    b = composite_estimate(x[:, perm], m2, "PS")
    # map m2 parameters back to m via vertex labels
    back = np.empty(m.n_params)
    for k2, j2 in enumerate(m2.j_list):
        j = [0] * m.p
        for pos2, lev in enumerate(j2):
            j[perm[pos2]] = lev
        back[m.j_index[tuple(j)]] = b.theta_hat[k2]
    # variable order changes floating-point summation order only
    assert np.max(np.abs(back - a.theta_hat)) < 1e-12


# ------------------------------------------------------------- diagnostics
def test_diagnostics_degenerate(cycle4):
    d = assumption_diagnostics(np.zeros((20, 4), int), cycle4, np.zeros(8))
    # the vertex coordinate of W is always one
    assert d.D_max_hat == pytest.approx(1.0)
    assert d.C_min_hat == pytest.approx(0.0, abs=1e-12)
    assert d.violated


def test_fisher_at_zero(cycle4):
    x = sample_exact(cycle4, np.zeros(8), SamplerConfig(20000, seed=1))
    _, F = conditional_fisher(x, cycle4, 1, np.zeros(3))
    exact = 0.25 * np.array([[1, 0.5, 0.5], [0.5, 0.5, 0.25], [0.5, 0.25, 0.5]])
    assert np.max(np.abs(F - exact) / exact) < 0.05


def test_fisher_matches_conditional_hessian():
    m = lattice_model(3, 3, levels=2)
    rng = np.random.default_rng(0)
    x = np.stack([rng.integers(0, 2, 200) for _ in range(m.p)], axis=1)
    theta = rng.normal(size=m.n_params)
    for lab in (1, 5):
        lm = local_model(m, lab, "PS")
        _, F = conditional_fisher(x, m, lab, theta[lm.j_indices])
        fun = conditional_objective(*conditional_design(x, m, [m.position[lab]], lm.j_indices))
        _, _, H = fun(theta[lm.j_indices])
        assert np.allclose(F, -H, atol=1e-12)


def test_diagnostics_ternary_matches_hessian():
    m = build_model([3, 3, 2], edges=[(0, 1), (1, 2)], labels=(1, 2, 3))
    rng = np.random.default_rng(1)
    x = np.stack([rng.integers(0, k, 150) for k in m.levels], axis=1)
    theta = rng.normal(size=m.n_params)
    lm = local_model(m, 2, "PS")
    _, F = conditional_fisher(x, m, 2, theta[lm.j_indices])
    _, _, H = conditional_objective(*conditional_design(x, m, [1], lm.j_indices))(theta[lm.j_indices])
    assert np.allclose(F, -H, atol=1e-12)


def test_d_v_interior():
    m = lattice_model(4, 4)
    x = np.zeros((5, 16), int)
    d = assumption_diagnostics(x, m, np.zeros(m.n_params))
    assert d.d_v[m.position[6]] == 5 and d.d_v[0] == 3


def test_relative_mse():
    t = np.array([1.0, -2.0, 0.5])
    assert relative_mse(t, t) == 0
    assert relative_mse(np.zeros(3), t) == 1
    assert relative_mse(2 * t, t) == 1
    with pytest.raises(ValueError):
        relative_mse(t, np.zeros(3))
    with pytest.raises(ValueError):
        relative_mse(t[:2], t)


@settings(max_examples=25)
@given(small_models(max_cells=16), st.integers(0, 2**32 - 1))
def test_nonexistence_coherence(model, seed):
    rng = np.random.default_rng(seed)
    counts = np.where(rng.random(model.n_cells) < 0.6, rng.integers(1, 5, model.n_cells), 0)
    if counts.sum() == 0:
        counts[0] = 1
    x = np.repeat(model.cells, counts, axis=0)
    exists, _ = mle_exists(counts, model)
    r = fit_global(x, model)
    assert exists == (r.converged and not r.nonexistence_flag)
