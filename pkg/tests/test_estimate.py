import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import raw_design
from panelclim import estimate
from panelclim.errors import NumericalError
from panelclim.panel import RandomBlock, compile_design
from panelclim.synth import (
    SynthConfig,
    dense_gls_oracle,
    generate,
    one_way_anova_theta,
    one_way_data,
    one_way_reml_loglik,
)


def one_way_design(n_groups=10, n_per=200, theta=2.0, seed=0):
    X, y, Z, g = one_way_data(n_groups, n_per, theta, seed=seed)
    return raw_design(X, y, [RandomBlock("group", Z, [str(i) for i in range(n_groups)])], g), g


def test_theta_zero_nests_ols(panel_m5):
    panel, _ = panel_m5
    # m5 without its year block is the OLS design with the same columns
    d = compile_design(panel, "m5")
    reml0 = estimate.fit_reml(d, theta=np.zeros(1))
    ols = estimate.fit_ols(d)
    np.testing.assert_allclose(reml0.beta, ols.beta, rtol=1e-8, atol=0)
    assert reml0.loglik_ml == pytest.approx(ols.loglik_ml, rel=1e-12)
    assert reml0.loglik_reml == pytest.approx(ols.loglik_reml, rel=1e-12)


@pytest.mark.parametrize("spec", ["m4", "m5", "m6", "m1s", "m5s"])
def test_dense_gls_agreement(panel_m5, spec):
    panel, _ = panel_m5
    d = compile_design(panel, spec)
    fit = estimate.fit(d)
    assert fit.converged
    beta, vcov, reml, ml = dense_gls_oracle(d, fit.theta)
    np.testing.assert_allclose(fit.beta, beta, rtol=1e-9, atol=1e-12)
    assert fit.loglik_reml == pytest.approx(reml, abs=1e-9)
    assert fit.loglik_ml == pytest.approx(ml, abs=1e-9)
    # the optimum beats the boundary and a few perturbations of itself
    prob = estimate.RemlProblem.from_design(d)
    assert fit.loglik_reml >= prob.reml(np.zeros(prob.K))
    for f in (0.9, 1.1):
        assert fit.loglik_reml >= prob.reml(fit.theta * f) - 1e-10


def test_gradient_matches_finite_differences(panel_m5):
    panel, _ = panel_m5
    d = compile_design(panel, "m6")
    prob = estimate.RemlProblem.from_design(d)
    theta = np.array([0.7, 0.3])
    g = prob.reml_gradient(theta)
    h = 1e-6
    fd = [(prob.reml(theta + h * e) - prob.reml(theta - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_reference_coding_invariance(panel_m5):
    panel, _ = panel_m5
    a = estimate.fit(compile_design(panel, "m5"))
    # renaming AB makes a different province the reference level
    renamed = panel.assign(province=panel["province"].replace({"AB": "ZZ"}))
    d = compile_design(renamed, "m5")
    assert d.meta["reference_province"] == "BC"
    b = estimate.fit(d)
    assert b.theta[0] == pytest.approx(a.theta[0], rel=1e-8)
    assert b.sigma2_eps == pytest.approx(a.sigma2_eps, rel=1e-8)
    assert b.coef("T_Winter") == pytest.approx(a.coef("T_Winter"), rel=1e-8)


@settings(max_examples=8, deadline=None)
@given(c=st.floats(1e-3, 1e3))
def test_y_scaling(panel_m5, c):
    panel, _ = panel_m5
    d = compile_design(panel, "m5")
    a = estimate.fit(d)
    b = estimate.fit(replace(d, y=d.y * c))
    np.testing.assert_allclose(b.beta, c * a.beta, rtol=1e-7, atol=1e-12 * c)
    assert b.sigma2_eps == pytest.approx(c * c * a.sigma2_eps, rel=1e-8)
    assert b.theta[0] == pytest.approx(a.theta[0], rel=1e-8)


def test_ols_monte_carlo():
    rng = np.random.default_rng(2024)
    n, beta = 500, np.array([1.0, -2.0, 0.5, 3.0])
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 3))])
    y = X @ beta + rng.normal(0, 0.7, n)
    fit = estimate.fit_ols(raw_design(X, y))
    se = np.sqrt(fit.sigma2_eps * np.diag(np.linalg.inv(X.T @ X)))
    assert np.all(np.abs(fit.beta - beta) < 4 * se)


def test_exact_fit_is_degenerate():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(20), rng.normal(size=20)])
    fit = estimate.fit_ols(raw_design(X, X @ [1.0, 2.0]))
    assert fit.degenerate
    np.testing.assert_allclose(fit.beta, [1.0, 2.0], atol=1e-12)


def test_rank_deficient_ols():
    X = np.column_stack([np.ones(10), np.arange(10), 2 * np.arange(10)])
    with pytest.raises(NumericalError):
        estimate.fit_ols(raw_design(X, np.arange(10.0) ** 2))


def test_fit_reml_needs_blocks():
    with pytest.raises(NumericalError):
        estimate.fit_reml(raw_design(np.ones((5, 1)), np.arange(5.0)))


def test_information_criteria_definitions(panel_m1):
    panel, _ = panel_m1
    fit = estimate.fit(compile_design(panel, "m1"))
    k = fit.p + 1
    assert fit.aic == pytest.approx(-2 * fit.loglik_ml + 2 * k)
    assert fit.bic == pytest.approx(-2 * fit.loglik_ml + math.log(fit.n) * k)
    assert fit.aic < fit.bic
    # same likelihood, one more parameter: BIC grows by ln(n)
    bigger = replace(fit, p=fit.p + 1)
    assert estimate.information_criteria(bigger)[1] - fit.bic == pytest.approx(math.log(fit.n))


def test_mixed_parameter_count(panel_m5):
    panel, _ = panel_m5
    fit = estimate.fit(compile_design(panel, "m6"))
    assert fit.n_params == fit.p + 2 + 1
    assert fit.bic == pytest.approx(-2 * fit.loglik_ml + math.log(fit.n) * fit.n_params)


def test_noise_column_bic(panel_m1):
    panel, _ = panel_m1
    d = compile_design(panel, "m1")
    base = estimate.fit(d)
    noise = np.random.default_rng(9).normal(size=d.n)
    big = estimate.fit(replace(d, X=np.column_stack([d.X, noise]), columns=d.columns + ["noise"]))
    gain = big.loglik_ml - base.loglik_ml
    assert gain >= 0
    assert big.bic - base.bic == pytest.approx(math.log(d.n) - 2 * gain, abs=1e-9)


def test_non_converged_criteria_rejected(panel_m1):
    panel, _ = panel_m1
    fit = replace(estimate.fit(compile_design(panel, "m1")), converged=False)
    with pytest.raises(NumericalError):
        estimate.information_criteria(fit)


@pytest.mark.parametrize("seed", range(5))
def test_one_way_matches_closed_forms(seed):
    d, g = one_way_design(seed=seed)
    fit = estimate.fit(d)
    assert fit.theta[0] == pytest.approx(one_way_anova_theta(d.y, g), rel=1e-8)
    assert fit.loglik_reml == pytest.approx(one_way_reml_loglik(d.y, g, fit.theta[0]), abs=1e-8)


def test_one_way_boundary_zero():
    # no group signal: the ANOVA estimate truncates at zero and so does REML
    rng = np.random.default_rng(1)
    g = np.repeat(np.arange(5), 4)
    y = rng.normal(size=20)
    y -= np.array([y[g == k].mean() for k in range(5)])[g]
    Z = (g[:, None] == np.arange(5)).astype(float)
    fit = estimate.fit(raw_design(np.ones((20, 1)), y, [RandomBlock("g", Z, list("abcde"))], g))
    assert one_way_anova_theta(y, g) == 0.0
    assert fit.theta[0] < 1e-6


def test_zero_error_recovers_beta():
    cfg = SynthConfig(seed=1, spec="m1", error_sd=0.0)
    panel, truth = generate(cfg)
    fit = estimate.fit(compile_design(panel, "m1"))
    for name, b in truth["beta"].items():
        assert fit.coef(name) == pytest.approx(b, abs=1e-10)
    assert fit.coef("pcgr_lag") == pytest.approx(truth["gamma_lag"], abs=1e-10)


def test_fit_result_round_trip(panel_m5):
    panel, _ = panel_m5
    fit = estimate.fit(compile_design(panel, "m4s"))
    back = estimate.FitResult.from_dict(fit.to_dict())
    np.testing.assert_array_equal(back.beta, fit.beta)
    np.testing.assert_array_equal(back.theta, fit.theta)
    assert back.blup_labels == fit.blup_labels
    assert back.bic == fit.bic and back.columns == fit.columns
