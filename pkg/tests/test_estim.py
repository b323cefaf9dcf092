import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cnar.errors import EstimationError, ValidationError
from cnar.estim import (
    ErrCov,
    cnar_design,
    fit_first_step,
    fit_nar,
    fit_poet,
    fit_second_step,
    nar_design,
    normal_equations,
    precision_smw,
    select_num_factors,
)
from cnar.evaluation import remse
from cnar.model import CnarParams, FactorNoiseSpec, PanelSeries, pack_theta, simulate_cnar, simulate_nar
from cnar.net import row_normalize, spectral_embed
from cnar.scenarios import fixed_loadings, make_scenario

from conftest import random_orthonormal


def _noiseless_panel(rng, n=20, k=2, p=3, t=30):
    u = random_orthonormal(rng, n, k)
    params = CnarParams(np.diag(np.linspace(0.2, -0.2, k)), 0.3, rng.uniform(-0.5, 0.5, p))
    return u, params, simulate_cnar(u, params, FactorNoiseSpec.zero(n), t, 5, rng)


def test_noiseless_recovery(rng):
    u, params, panel = _noiseless_panel(rng)
    fit = fit_first_step(panel, u)
    assert np.max(np.abs(fit.theta_hat - pack_theta(params))) <= 1e-8
    assert fit.step == 1


def test_tiny_oracle_against_explicit_normal_equations():
    # N=3, T=4, K=1, p=0: design columns are (y^T u) u and y
    u = np.array([[1.0], [1.0], [0.0]]) / np.sqrt(2)
    y = np.array([[1.0, 0.5, -1.0], [0.3, 1.2, 0.4], [-0.7, 0.1, 0.9], [0.2, -0.4, 1.5]])
    panel = PanelSeries(y, np.zeros((4, 3, 0)))
    rows, rhs = [], []
    for t in range(1, 4):
        lag = y[t - 1]
        c1 = (lag @ u[:, 0]) * u[:, 0]
        for i in range(3):
            rows.append([c1[i], lag[i]])
            rhs.append(y[t, i])
    x, r = np.array(rows), np.array(rhs)
    g = x.T @ x
    g_inv = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / (g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0])
    expected = g_inv @ (x.T @ r)
    np.testing.assert_allclose(fit_first_step(panel, u).theta_hat, expected, rtol=1e-12)


def test_residuals_recompute(rng):
    u, _, panel = _noiseless_panel(rng)
    noisy = PanelSeries(panel.y + rng.standard_normal(panel.y.shape), panel.z)
    fit = fit_first_step(noisy, u)
    xs = cnar_design(noisy.y, noisy.z, u)
    assert np.max(np.abs(fit.residuals - (noisy.y[1:] - xs @ fit.theta_hat))) <= 1e-10


def test_first_step_preconditions(rng):
    u = random_orthonormal(rng, 5, 1)
    with pytest.raises(ValidationError):
        fit_first_step(PanelSeries(np.ones((1, 5)), np.zeros((1, 5, 0))), u)
    with pytest.raises(ValidationError):
        fit_first_step(PanelSeries(np.ones((2, 5)), np.zeros((2, 5, 6))), u)


def test_singular_gram_reports_condition(rng):
    u = random_orthonormal(rng, 6, 1)
    y = rng.standard_normal((10, 6))
    z = np.repeat(y[:, :, None], 2, axis=2)  # duplicated covariates make the Gram singular
    with pytest.raises(EstimationError) as info:
        fit_first_step(PanelSeries(y, z), u)
    assert info.value.condition is not None and info.value.condition > 1e12


def test_identity_weight_equals_ols_exactly(rng):
    u, _, panel = _noiseless_panel(rng)
    noisy = PanelSeries(panel.y + rng.standard_normal(panel.y.shape), panel.z)
    first = fit_first_step(noisy, u)
    second = fit_second_step(noisy, u, ErrCov.from_parts(np.zeros((20, 1)), np.ones(20)))
    np.testing.assert_array_equal(first.theta_hat, second.theta_hat)


def test_second_step_matches_dense_gls():
    rng = np.random.default_rng(3)
    n, t = 4, 5
    u = random_orthonormal(rng, n, 1)
    y = rng.standard_normal((t, n))
    z = rng.standard_normal((t, n, 1))
    diag = np.array([0.5, 1.0, 2.0, 4.0])
    fit = fit_second_step(PanelSeries(y, z), u, ErrCov.from_parts(np.zeros((n, 1)), diag))
    omega = np.diag(1 / diag)
    xs = cnar_design(y, z, u)
    gram = sum(xs[s].T @ omega @ xs[s] for s in range(t - 1))
    rhs = sum(xs[s].T @ omega @ y[s + 1] for s in range(t - 1))
    np.testing.assert_allclose(fit.theta_hat, np.linalg.inv(gram) @ rhs, rtol=1e-10)


def test_normal_equation_residual_both_steps(rng):
    scen = make_scenario(1, 60, 2, 1, fixed_loadings(60))
    panel = scen.simulate(80, 2)
    u = spectral_embed(scen.adjacency, 2).u_hat
    first = fit_first_step(panel, u)
    cov = fit_poet(first.residuals, 3)
    second = fit_second_step(panel, u, cov)
    xs, ys = cnar_design(panel.y, panel.z, u), panel.y[1:]
    for fit, weight in ((first, None), (second, precision_smw(cov))):
        gram, rhs = normal_equations(xs, ys, weight)
        assert np.max(np.abs(gram @ fit.theta_hat - rhs)) <= 1e-8 * np.max(np.abs(rhs))


# ---------------------------------------------------------------------------
# factor fit


def test_poet_exact_low_rank_input(rng):
    t, n, m = 40, 25, 2
    f = np.sqrt(t) * np.linalg.qr(rng.standard_normal((t, m)))[0]
    lam = rng.standard_normal((n, m))
    with pytest.warns(RuntimeWarning):
        cov = fit_poet(f @ lam.T, m)
    np.testing.assert_allclose(cov.lambda_hat @ cov.lambda_hat.T, lam @ lam.T, atol=1e-8)
    np.testing.assert_allclose(cov.sigma_e_diag, 1e-8)


def test_poet_recovers_unit_idiosyncratic_variance(rng):
    cov = fit_poet(rng.standard_normal((200, 200)), 1)
    assert np.max(np.abs(cov.sigma_e_diag - 1)) <= 0.25


@given(st.integers(0, 2**32 - 1), st.integers(5, 30), st.integers(5, 30), st.integers(1, 3))
def test_poet_identification(seed, t, n, m):
    rng = np.random.default_rng(seed)
    resid = rng.standard_normal((t, n))
    cov = fit_poet(resid, m)
    f = cov.factors_hat
    np.testing.assert_allclose(f.T @ f / t, np.eye(m), atol=1e-8)
    np.testing.assert_array_equal(cov.lambda_hat, resid.T @ f / t)
    assert np.all(cov.sigma_e_diag > 0)


def test_poet_dual_sides_agree(rng):
    # T < N uses the T x T problem, T > N the N x N one; results must coincide
    resid = rng.standard_normal((30, 12))
    wide = fit_poet(resid.T.copy().T, 2)
    ll_t = wide.lambda_hat @ wide.lambda_hat.T
    f = np.linalg.svd(resid, full_matrices=False)
    lam = f[2][:2].T * f[1][:2] / np.sqrt(30)
    np.testing.assert_allclose(ll_t, lam @ lam.T, atol=1e-10)
    tall = fit_poet(resid.T, 2)
    g = np.linalg.svd(resid.T, full_matrices=False)
    lam2 = g[2][:2].T * g[1][:2] / np.sqrt(12)
    np.testing.assert_allclose(tall.lambda_hat @ tall.lambda_hat.T, lam2 @ lam2.T, atol=1e-10)


def test_poet_factor_range():
    with pytest.raises(ValidationError):
        fit_poet(np.ones((5, 5)), 0)
    with pytest.raises(ValidationError):
        fit_poet(np.ones((5, 8)), 5)


def test_poet_reconstruction_improves_with_t():
    loadings = fixed_loadings(200)
    llt = loadings @ loadings.T
    medians = []
    for t in (100, 200, 400):
        errs = []
        for seed in range(20):
            scen = make_scenario(1, 200, 2, seed, loadings)
            panel = scen.simulate(t, 50 + seed)
            first = fit_first_step(panel, spectral_embed(scen.adjacency, 2))
            lam = fit_poet(first.residuals, 3).lambda_hat
            errs.append(remse(lam @ lam.T, llt))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


# ---------------------------------------------------------------------------
# precision


def test_precision_without_loadings_is_diagonal():
    prec = precision_smw(ErrCov.from_parts(np.zeros((3, 2)), [1.0, 2.0, 4.0]))
    np.testing.assert_allclose(prec.dense(), np.diag([1, 0.5, 0.25]))


def test_precision_small_random_instance():
    rng = np.random.default_rng(5)
    cov = ErrCov.from_parts(rng.standard_normal((5, 2)), rng.uniform(0.5, 2, 5))
    np.testing.assert_allclose(precision_smw(cov).dense(), np.linalg.inv(cov.covariance()), atol=1e-10)


def test_precision_rank_one_by_hand():
    e1 = np.zeros((4, 1))
    e1[0] = 1
    prec = precision_smw(ErrCov.from_parts(e1, np.ones(4)))
    expected = np.eye(4)
    expected[0, 0] = 0.5
    np.testing.assert_allclose(prec.dense(), expected, atol=1e-15)


def test_precision_times_covariance_50_instances(rng):
    for _ in range(50):
        n, m = rng.integers(2, 31), rng.integers(1, 6)
        cov = ErrCov.from_parts(rng.standard_normal((n, m)), rng.uniform(0.1, 3, n))
        prod = precision_smw(cov).apply(cov.covariance())
        assert np.max(np.abs(prod - np.eye(n))) <= 1e-8


def test_precision_is_symmetric_positive_definite(rng):
    cov = ErrCov.from_parts(rng.standard_normal((10, 3)), rng.uniform(0.1, 1, 10))
    dense = precision_smw(cov).dense()
    np.testing.assert_allclose(dense, dense.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(dense)) > 0


def test_apply_stack_matches_apply(rng):
    prec = precision_smw(ErrCov.from_parts(rng.standard_normal((6, 2)), rng.uniform(0.5, 1, 6)))
    xs = rng.standard_normal((4, 6, 3))
    stacked = prec.apply_stack(xs)
    for t in range(4):
        np.testing.assert_allclose(stacked[t], prec.apply(xs[t]), atol=1e-12)
    np.testing.assert_allclose(prec.apply_stack(xs[:, :, 0]), stacked[:, :, 0], atol=1e-12)


def test_errcov_rejects_non_positive_variances():
    with pytest.raises(ValidationError):
        ErrCov.from_parts(np.zeros((2, 1)), [1.0, 0.0])


# ---------------------------------------------------------------------------
# factor count


def test_select_rank_two_with_jitter(rng):
    t, n = 60, 40
    low = rng.standard_normal((t, 2)) @ rng.standard_normal((2, n))
    sel = select_num_factors(low + 1e-6 * rng.standard_normal((t, n)), 5)
    assert sel.suggested_m == 2


def test_select_with_one_candidate(rng):
    for _ in range(5):
        assert select_num_factors(rng.standard_normal((20, 10)), 1).suggested_m == 1


def test_select_range_and_degenerate():
    with pytest.raises(ValidationError):
        select_num_factors(np.ones((10, 10)), 5)
    with pytest.warns(RuntimeWarning):
        assert select_num_factors(np.eye(10), 3).suggested_m == 1


def test_select_three_factors_on_example_one():
    loadings = fixed_loadings(400)
    hits = 0
    for seed in range(20):
        scen = make_scenario(1, 400, 2, seed, loadings)
        panel = scen.simulate(400, 700 + seed)
        first = fit_first_step(panel, spectral_embed(scen.adjacency, 2))
        hits += select_num_factors(first.residuals, 8).suggested_m == 3
    assert hits >= 16


# ---------------------------------------------------------------------------
# NAR baseline


def _nar_panel(rng, n=25, t=40, noise=None):
    a = (rng.random((n, n)) < 0.3).astype(float)
    a = np.triu(a, 1)
    a_tilde = row_normalize(a + a.T)
    noise = noise or FactorNoiseSpec.zero(n)
    return a_tilde, simulate_nar(a_tilde, 0.5, 0.3, [0.4, -0.2], noise, t, 5, rng)


def test_nar_noiseless_recovery(rng):
    a_tilde, panel = _nar_panel(rng)
    fit = fit_nar(panel, a_tilde)
    np.testing.assert_allclose(fit.coef, [0.5, 0.3, 0.4, -0.2], atol=1e-8)


def test_nar_identity_weighting_equals_unweighted(rng):
    a_tilde, panel = _nar_panel(rng, noise=FactorNoiseSpec(np.ones((25, 1))))
    plain = fit_nar(panel, a_tilde)
    weighted = fit_nar(panel, a_tilde, ErrCov.from_parts(np.zeros((25, 1)), np.ones(25)))
    np.testing.assert_array_equal(plain.coef, weighted.coef)
    assert weighted.weighted and not plain.weighted


def test_nar_design_columns(rng):
    a_tilde, panel = _nar_panel(rng)
    xs = nar_design(panel.y, panel.z, a_tilde)
    np.testing.assert_allclose(xs[0, :, 0], a_tilde @ panel.y[0])
    np.testing.assert_array_equal(xs[0, :, 1], panel.y[0])


def test_nar_beta1_on_example_three():
    loadings = fixed_loadings(400)
    estimates = []
    for seed in range(20):
        scen = make_scenario(3, 400, 2, seed, loadings)
        panel = scen.simulate(400, 300 + seed)
        first = fit_nar(panel, scen.a_tilde)
        estimates.append(fit_nar(panel, scen.a_tilde, fit_poet(first.residuals, 3)).beta1)
    assert abs(np.median(estimates) - 0.5) <= 0.05


# ---------------------------------------------------------------------------
# Monte-Carlo properties on Example 1


def _example_one_errors(seed, n=400, t=400):
    scen = make_scenario(1, n, 2, seed, fixed_loadings(n))
    panel = scen.simulate(t, 900 + seed)
    u_hat = spectral_embed(scen.adjacency, 2).u_hat
    phi = scen.phi_cnar()
    est = fit_first_step(panel, u_hat)
    oracle = fit_first_step(panel, scen.u_true)
    return remse(est.params.phi(u_hat), phi), remse(oracle.params.phi(scen.u_true), phi)


def test_oracle_and_estimated_embedding_agree():
    errs = np.array([_example_one_errors(seed) for seed in range(20)])
    est, oracle = np.median(errs, axis=0)
    assert abs(est - oracle) <= 0.2 * oracle


def test_first_step_error_on_example_one():
    errs = [_example_one_errors(seed)[0] for seed in range(20)]
    assert np.median(errs) < 0.02
