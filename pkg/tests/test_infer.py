import logging
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
import scipy.stats

from panelclim import estimate, infer
from panelclim.errors import ConfigError, NumericalError
from panelclim.panel import CompiledDesign, ModelSpec, compile_design
from panelclim.synth import central_difference, cr2_oracle, fd_margins_oracle


def fitted(panel, spec):
    d = compile_design(panel, spec)
    f = estimate.fit(d)
    return f, d, infer.cr2_vcov(f, d)


# ---------------------------------------------------------------------------
# t distribution


def test_t_helpers():
    assert infer.t_sf2(0.0, 5) == 1.0
    assert infer.t_sf2(-2.0, 9) == infer.t_sf2(2.0, 9) == pytest.approx(2 * scipy.stats.t.sf(2.0, 9), rel=1e-12)
    assert infer.t_ppf(0.975, 4) == pytest.approx(2.7764451051977987, rel=1e-12)
    with pytest.raises(NumericalError):
        infer.t_sf2(1.0, 0.0)
    with pytest.raises(ValueError):
        infer.t_ppf(1.0, 3)


# ---------------------------------------------------------------------------
# CR2


@pytest.mark.parametrize("spec", ["m1", "m2", "m5", "m6", "m2s", "m4s"])
def test_cr2_matches_dense_oracle(panel_m5, spec, caplog):
    panel, _ = panel_m5
    f, d, rv = fitted(panel, spec)
    beta, vcov, df = cr2_oracle(d, f.theta)
    np.testing.assert_allclose(f.beta, beta, rtol=1e-9, atol=1e-13)
    scale = np.abs(vcov).max()
    assert np.abs(rv.vcov - vcov).max() <= 1e-10 * scale
    np.testing.assert_allclose(rv.df, df, rtol=1e-9)
    assert rv.cluster_count == 10 and rv.adjustment == "CR2"


def test_cr2_single_aggregated_warning(panel_m5, caplog):
    panel, _ = panel_m5
    with caplog.at_level(logging.WARNING):
        fitted(panel, "m1")
    msgs = [r.getMessage() for r in caplog.records if "CR2" in r.getMessage()]
    assert len(msgs) == 1 and "10 of 10" in msgs[0]


def test_vcov_symmetric_psd(panel_m5):
    panel, _ = panel_m5
    for spec in ("m1", "m5"):
        _, _, rv = fitted(panel, spec)
        assert np.abs(rv.vcov - rv.vcov.T).max() <= 1e-12 * np.abs(rv.vcov).max()
        assert np.linalg.eigvalsh(rv.vcov).min() >= -1e-10 * np.abs(rv.vcov).max()
        assert np.all(rv.df > 0)


def test_df_bounded_by_clusters(panel_m5):
    panel, _ = panel_m5
    for spec in ("m1", "m3", "m5"):
        _, _, rv = fitted(panel, spec)
        assert rv.df.max() <= 10 - 1 + 1e-8


def test_df_contrast_scale_invariance(panel_m5):
    panel, _ = panel_m5
    _, d, rv = fitted(panel, "m5")
    c = np.zeros(d.p)
    c[d.col("T_Winter")], c[d.col("P_Winter")] = 1.0, -0.3
    assert infer.satterthwaite_df(rv.parts, 10 * c) == pytest.approx(infer.satterthwaite_df(rv.parts, c), rel=1e-12)
    with pytest.raises(ConfigError):
        infer.satterthwaite_df(rv.parts, np.zeros(d.p))


def test_relabeling_clusters_leaves_ses(panel_m5):
    panel, _ = panel_m5
    names = sorted(panel["province"].unique())
    mapping = dict(zip(names, [f"Q{i}" for i in range(len(names))][::-1]))
    _, d0, a = fitted(panel, "m5")
    _, d1, b = fitted(panel.assign(province=panel["province"].map(mapping)), "m5")
    keep = [c for c in d0.columns if not c.startswith("prov[") and c != "(Intercept)"]
    sa = pd.Series(a.se(), index=d0.columns)[keep]
    sb = pd.Series(b.se(), index=d1.columns)[keep]
    np.testing.assert_allclose(sb.to_numpy(), sa.to_numpy(), rtol=1e-8)


def simple_design(n_clusters, size, seed):
    rng = np.random.default_rng(seed)
    n = n_clusters * size
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    y = X @ [0.5, 1.0, -1.0] + rng.normal(size=n)
    cluster = np.repeat(np.arange(n_clusters), size)
    return CompiledDesign(y, X, ["c", "x1", "x2"], [], cluster, ModelSpec(year_effect="none"))


def test_cr2_close_to_classical_for_iid_errors():
    d = simple_design(400, 10, seed=7)
    f = estimate.fit_ols(d)
    rv = infer.cr2_vcov(f, d)
    classical = np.sqrt(f.sigma2_eps * np.diag(np.linalg.inv(d.X.T @ d.X)))
    ratio = rv.se() / classical
    assert np.all(np.abs(ratio - 1) < 0.15)


def test_needs_two_clusters():
    d = simple_design(1, 30, seed=1)
    with pytest.raises(ConfigError):
        infer.cr2_vcov(estimate.fit_ols(d), d)


def test_duplicating_clusters_keeps_coefficients():
    d = simple_design(10, 8, seed=3)
    dup = replace(d, y=np.concatenate([d.y, d.y]), X=np.vstack([d.X, d.X]),
                  cluster=np.concatenate([d.cluster, d.cluster + 100]))
    np.testing.assert_allclose(estimate.fit_ols(dup).beta, estimate.fit_ols(d).beta, rtol=1e-12)


def test_stars():
    assert infer.stars(0.03) == "*"
    assert [infer.stars(p) for p in (0.0005, 0.005, 0.07, 0.2)] == ["***", "**", ".", ""]
    assert infer.stars(0.05) == "."


# ---------------------------------------------------------------------------
# marginal effects


@pytest.mark.parametrize("spec", ["m1", "m5", "m2", "m2s", "m5s"])
def test_ame_matches_finite_differences(panel_m5, spec):
    panel, _ = panel_m5
    f, _, rv = fitted(panel, spec)
    for v in ("T_Spring", "T_Winter", "P_Summer", "P_Winter"):
        me = infer.ame(f, rv, panel, v)
        assert me.ame == pytest.approx(fd_margins_oracle(f, panel, v), abs=1e-6)
        assert me.ci_low <= me.ame <= me.ci_high
        assert 0.0 <= me.p_value <= 1.0


def test_linear_ame_is_coefficient(panel_m5):
    panel, _ = panel_m5
    f, _, rv = fitted(panel, "m5")
    for v in ("T_Fall", "P_Fall"):
        me = infer.ame(f, rv, panel, v, precip_unit="fraction")
        assert me.ame == f.coef(v)
        tab = infer.coef_table(f, rv, reporting_units=True).set_index("term")
        assert infer.ame(f, rv, panel, v).ame == tab.loc[v, "estimate"]
        assert infer.ame(f, rv, panel, v).se == pytest.approx(tab.loc[v, "se"], rel=1e-12)


def test_quadratic_ame_at_zero_mean_anomaly(panel_m5):
    panel, _ = panel_m5
    f, _, rv = fitted(panel, "m2")
    beta = f.beta.copy()
    beta[f.columns.index("T_Summer")] = 0.002
    beta[f.columns.index("T_Summer^2")] = -0.001
    me = infer.ame(replace(f, beta=beta), rv, panel, "T_Summer")
    assert abs(panel["T_Summer"].mean()) < 1e-12
    assert me.ame == pytest.approx(0.002, abs=1e-14)


def test_ame_by_province_matches_pooled_on_balanced_panel(panel_m5):
    panel, _ = panel_m5
    f, _, rv = fitted(panel, "m2s")
    a = infer.ame(f, rv, panel, "T_Winter")
    b = infer.ame(f, rv, panel, "T_Winter", by_province=True)
    assert b.ame == pytest.approx(a.ame, rel=1e-10)


def test_ame_unknown_variable(panel_m5):
    panel, _ = panel_m5
    d = compile_design(panel, ModelSpec(year_effect="fixed", climate_terms=("T_Winter",)))
    f = estimate.fit(d)
    rv = infer.cr2_vcov(f, d)
    with pytest.raises(ConfigError):
        infer.ame(f, rv, panel, "T_Summer")


def test_central_difference_is_second_order():
    x = np.linspace(-1, 1, 7)
    errs = [np.abs(central_difference(np.exp, x, h) - np.exp(x)).max() for h in (1e-2, 5e-3)]
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=1e-3)


def test_fd_oracle_step_independent_on_quadratic_surface(panel_m5):
    panel, _ = panel_m5
    f, _, _ = fitted(panel, "m2s")
    a = fd_margins_oracle(f, panel, "T_Winter", h=1e-2)
    b = fd_margins_oracle(f, panel, "T_Winter", h=5e-3)
    assert a == pytest.approx(b, abs=1e-12)


# ---------------------------------------------------------------------------
# report


def test_report_scale():
    assert infer.report_scale("T_Winter") == 1.0
    assert infer.report_scale("P_Winter") == 0.01
    assert infer.report_scale("P_Winter^2") == pytest.approx(1e-4)
    assert infer.report_scale("T_Winter:P_Winter") == 0.01


def test_report_table_layout(panel_m5):
    panel, _ = panel_m5
    fits, vcovs = {}, {}
    for spec in ("m1", "m2", "m3", "m4", "m5", "m6"):
        f, _, rv = fitted(panel, spec)
        fits[spec], vcovs[spec] = f, rv
    tab = infer.report_table(fits, vcovs)
    assert list(tab.columns[-6:]) == ["m1", "m2", "m3", "m4", "m5", "m6"]
    blocks = list(dict.fromkeys(tab["block"]))
    assert blocks == ["Temperature", "Precipitation", "Others", "Model fit"]
    terms = tab.loc[tab["kind"] == "estimate", "term"].tolist()
    assert terms[:4] == ["T_Spring", "T_Summer", "T_Fall", "T_Winter"]
    assert terms.index("T_Winter^2") < terms.index("P_Spring")
    assert tab["term"].iloc[-2:].tolist() == ["AIC", "BIC"]
    se = tab[(tab["term"] == "T_Winter") & (tab["kind"] == "se")]["m1"].iloc[0]
    assert se.startswith("(") and se.endswith(")")
    # quadratic rows are blank for specs without them
    assert tab[(tab["term"] == "T_Winter^2") & (tab["kind"] == "estimate")]["m1"].iloc[0] == ""
