import numpy as np
import pytest

from dirnet.adasparse import (ShrinkSchedule, ThetaState, _alternate, alternate_stage,
                              fixed_weight_solve, initial_theta, joint_objective, ols_codes,
                              ols_weights, row_weights, run_schedule, select_lambda2,
                              theta_closed_form, theta_objective)
from dirnet.errors import ConfigError, DomainError
from dirnet.synthetic import planted_layer, planted_matrix

from oracles import simplex_pg


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("gamma", [0.25, 0.4, 1.0, 2.0])
def test_closed_form_matches_projected_gradient(seed, gamma):
    rng = np.random.default_rng(seed)
    c = rng.random(int(rng.integers(1, 11))) * 4
    theta = theta_closed_form(c, gamma, 3.0)
    _, f_pg = simplex_pg(c, gamma, 3.0)
    f_cf = theta_objective(c, theta, gamma)
    assert abs(f_cf - f_pg) <= 1e-8 * f_pg
    assert abs(theta.sum() - 3.0) <= 1e-9


def test_closed_form_zero_usage_rows_get_zero_weight():
    theta = theta_closed_form(np.array([0.0, 1.0, 8.0]), 1.0, 10.0)
    assert theta[0] == 0.0
    np.testing.assert_allclose(theta[1:], 10 * np.array([1.0, 8 ** 0.5]) / (1 + 8 ** 0.5))
    np.testing.assert_allclose(theta_closed_form(np.zeros(4), 0.4, 2.0), 0.5)
    with pytest.raises(DomainError):
        theta_closed_form(np.array([-1.0]), 0.4, 1.0)


def test_row_weights_and_state_check():
    w = row_weights(np.array([0.0, 1.0, 4.0]), 0.5)
    assert np.isinf(w[0]) and w[1] == 1.0 and w[2] == 0.5
    ThetaState(np.array([1.0, 2.0]), 3.0).check()
    with pytest.raises(DomainError):
        ThetaState(np.array([1.0, 1.0]), 3.0).check()


def test_initial_theta_sums_to_budget():
    th = initial_theta(8, 1e7, seed=3)
    assert abs(th.sum() - 1e7) <= 1e-9 * 1e7
    assert np.all(np.abs(th / (1e7 / 8) - 1) <= 0.011)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ShrinkSchedule(shrink_factor=1.0)
    with pytest.raises(ConfigError):
        ShrinkSchedule(target_nnz_frac=0.0)
    assert ShrinkSchedule().budget(2) == pytest.approx(1e7 * 0.16)


@pytest.mark.parametrize("seed", range(5))
def test_alternation_objective_non_increasing(seed):
    W, D, _ = planted_matrix(16, 16, 6, 0.3, seed)
    sched = ShrinkSchedule(inner_max_iters=30, inner_tol=1e-12)
    state = ThetaState(initial_theta(6, 4.0, seed), 4.0, 0.4)
    res = _alternate(D, W, state, 0.5, sched)
    h = np.array(res.objective)
    assert np.all(np.diff(h) <= 1e-9 * h[0])
    res.state.check()


def test_alternate_stage_returns_sparse_codes():
    W, D, _ = planted_matrix(16, 16, 6, 0.3, 0)
    code, state = alternate_stage(D, W, ThetaState(np.full(6, 1.0), 6.0), 0.5, ShrinkSchedule())
    code.validate()
    assert code.shape == (6, 16)
    state.check()


def test_joint_objective_terms(rng):
    D = np.eye(3)
    Z = np.array([[1.0], [0.0], [-2.0]])
    W = D @ Z + 0.5
    theta = np.array([1.0, 1.0, 4.0])
    expected = 0.5 * 3 * 0.25 + 2.0 * (1.0 + 2.0 * 4.0 ** -0.5)
    assert joint_objective(D, W, Z, theta, 0.5, 2.0) == pytest.approx(expected)


def test_run_schedule_reaches_target_and_budget_shrinks():
    L = planted_layer(32, 8, 0.1, seed=0)
    res = run_schedule(L.atoms, L.w_x, ShrinkSchedule(), lam2=1.0)
    budgets = [s["budget"] for s in res.stage_log]
    assert np.allclose(np.diff(np.log(budgets)), np.log(0.4))
    assert res.reached == (res.stage_log[-1]["nnz_frac"] <= 0.15)
    code, state, log_ = res
    assert code.nnz / (code.rows * code.cols) == pytest.approx(log_[-1]["nnz_frac"])


@pytest.mark.parametrize("seed", [0, 2, 4])
def test_select_lambda2_recovers_planted_support(seed):
    """With the generating dictionary the chosen codes have the planted zero pattern."""
    L = planted_layer(32, 8, 0.1, seed=seed, x_density=0.15)
    lam2, res = select_lambda2(L.atoms, L.w_x, ShrinkSchedule())
    Z = res.code.to_dense()
    assert np.array_equal(Z != 0, L.z_x != 0)
    assert 0.10 <= res.code.nnz / Z.size <= 0.20
    assert lam2 in (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)


def test_ols_weights_match_least_squares(rng):
    W, D, _ = planted_matrix(12, 10, 4, 0.5, 3)
    Z = np.linalg.lstsq(D, W, rcond=None)[0]
    np.testing.assert_allclose(ols_codes(D, W), Z, atol=1e-10)
    np.testing.assert_allclose(ols_weights(D, W, 0.4), np.abs(Z).sum(axis=1) ** -0.4, rtol=1e-8)
    code = fixed_weight_solve(D, W, 0.4, 0.01)
    assert code.shape == (4, 10)


def test_closed_form_small_examples():
    np.testing.assert_allclose(theta_closed_form(np.ones(4), 0.7, 2.0), 0.5, rtol=1e-15)
    theta = theta_closed_form(np.array([8.0, 1.0]), 1.0, 1.0)
    np.testing.assert_allclose(theta, [0.738796, 0.261204], atol=1e-6)
    x_pg, _ = simplex_pg(np.array([8.0, 1.0]), 1.0, 1.0)
    np.testing.assert_allclose(theta, x_pg, atol=1e-6)
    th = theta_closed_form(np.array([2.0, 0.0, 5.0]), 0.4, 3.0)
    assert th[1] == 0.0 and th.sum() == pytest.approx(3.0, abs=1e-12)


def test_unpenalised_stage_is_least_squares(rng):
    D = rng.standard_normal((10, 4))
    D /= np.linalg.norm(D, axis=0)
    W = rng.standard_normal((10, 6))
    code, state = alternate_stage(D, W, ThetaState(np.full(4, 0.5), 2.0), 0.0,
                                  ShrinkSchedule(cd_tol=1e-13, cd_max_cycles=100000))
    Z = code.to_dense()
    np.testing.assert_allclose(Z, np.linalg.lstsq(D, W, rcond=None)[0], atol=1e-8)
    np.testing.assert_allclose(state.theta, theta_closed_form(np.abs(Z).sum(axis=1), 0.4, 2.0),
                               rtol=1e-12)


def test_identity_dictionary_joint_fixed_point(rng):
    """At convergence the codes satisfy weighted-LASSO KKT and theta is the closed form."""
    t = np.array([[3.0], [-1.5], [0.4], [2.2]])
    gamma, lam2, budget = 0.4, 0.5, 4.0
    sched = ShrinkSchedule(inner_max_iters=500, inner_tol=1e-14, cd_tol=1e-14)
    code, state = alternate_stage(np.eye(4), t, ThetaState(np.full(4, 1.0), budget, gamma),
                                  lam2, sched)
    z = code.to_dense()[:, 0]
    pen = lam2 * row_weights(state.theta, gamma)
    g = t[:, 0] - z  # D^T r with D = I
    nz = z != 0
    np.testing.assert_allclose(g[nz], pen[nz] * np.sign(z[nz]), atol=1e-8)
    assert np.all(np.abs(g[~nz]) <= pen[~nz] + 1e-8)
    np.testing.assert_allclose(state.theta, theta_closed_form(np.abs(z), gamma, budget), atol=1e-8)


def test_vanishing_budget_zeroes_codes(rng):
    W, D, _ = planted_matrix(12, 12, 5, 0.3, 2)
    code, _ = alternate_stage(D, W, ThetaState(np.full(5, 2e-13), 1e-12), 1.0, ShrinkSchedule())
    assert code.nnz == 0


def test_full_density_target_stops_after_first_stage():
    L = planted_layer(16, 4, 0.3, seed=1)
    res = run_schedule(L.atoms, L.w_x, ShrinkSchedule(target_nnz_frac=1.0), lam2=0.1)
    assert len(res.stage_log) == 1 and res.reached


def _stage_density_increases(make_dict, seeds=range(20)):
    violations = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        D = make_dict(rng)
        W = rng.standard_normal((16, 16))
        for lam2 in (0.01, 0.1, 1.0):
            res = run_schedule(D, W, ShrinkSchedule(max_stages=12, target_nnz_frac=0.05), lam2)
            fr = [s["nnz_frac"] for s in res.stage_log]
            violations += int(np.sum(np.diff(fr) > 0))
    return violations


def test_density_never_increases_with_orthonormal_dictionary():
    # separable problem: each coefficient is a soft threshold whose level only grows
    assert _stage_density_increases(lambda rng: np.linalg.qr(rng.standard_normal((16, 16)))[0]) == 0


@pytest.mark.xfail(reason="weighted-LASSO supports are not monotone in the penalty for coherent "
                          "dictionaries; about 60 of 660 stage transitions add a nonzero",
                   strict=False)
def test_density_never_increases_with_random_square_dictionary():
    def unit(rng):
        D = rng.standard_normal((16, 16))
        return D / np.linalg.norm(D, axis=0)
    assert _stage_density_increases(unit) == 0


def test_ols_weights_trivial_cases(rng):
    W = rng.standard_normal((5, 3))
    np.testing.assert_allclose(ols_codes(np.eye(5), W), W, atol=1e-14)
    np.testing.assert_allclose(ols_weights(np.eye(5), W, 0.4), np.abs(W).sum(axis=1) ** -0.4,
                               rtol=1e-12)
    D = rng.standard_normal((5, 3))
    assert np.array_equal(ols_weights(D / np.linalg.norm(D, axis=0), W, 0.0), np.ones(3))
