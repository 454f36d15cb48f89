import numpy as np
import pandas as pd
import pytest

from panelclim import boot, estimate, project
from panelclim.constants import SEASONS
from panelclim.errors import NumericalError
from panelclim.panel import compile_design


def rcp_for(provinces, near=1.5, mid=2.5):
    rows = []
    for p in provinces:
        for s in SEASONS:
            rows.append(("RCP4.5", p, s, "near", near, 4.0))
            rows.append(("RCP4.5", p, s, "mid", mid, 8.0))
    return pd.DataFrame(rows, columns=["scenario", "province", "season", "horizon", "temp_delta", "precip_delta"])


def scenario_path(panel):
    provinces = sorted(panel["province"].unique())
    base = pd.DataFrame([(p, s, 5.0, 100.0) for p in provinces for s in SEASONS],
                        columns=["province", "season", "mean_temp", "mean_precip"])
    return project.extrapolate_climate(rcp_for(provinces), base, "RCP4.5")


@pytest.fixture(scope="module")
def setup(panel_m5):
    panel, _ = panel_m5
    return panel, scenario_path(panel)


def test_draws_have_ten_labels():
    provinces = sorted("AB BC MB NB NL NS ON PE QC SK".split())
    for i in range(20):
        d = boot.draw_provinces(provinces, 7, i)
        assert len(d) == 10 and set(d) <= set(provinces)
    assert boot.draw_provinces(provinces, 7, 3) == boot.draw_provinces(provinces, 7, 3)
    assert boot.draw_provinces(provinces, 7, 3) != boot.draw_provinces(provinces, 8, 3)


def test_resample_keeps_province_blocks(setup):
    panel, _ = setup
    draw = ("AB", "AB", "ON", "ON", "ON", "BC", "QC", "NS", "NS", "MB")
    rep = boot.resample_panel(panel, draw)
    assert len(rep) == 10 * 20
    assert rep["province"].nunique() == 10
    assert set(rep.loc[rep["source_province"] == "ON", "province"]) == {"ON", "ON~1", "ON~2"}
    for lab, g in rep.groupby("province"):
        src = panel[panel["province"] == g["source_province"].iloc[0]]
        np.testing.assert_array_equal(g["pcgr"].to_numpy(), src["pcgr"].to_numpy())


def test_identity_draw_reproduces_full_fit(setup):
    panel, path = setup
    ident = [tuple(sorted(panel["province"].unique()))]
    run = boot.block_bootstrap(panel, "m5", path, n_rep=1, draws=ident)
    full = estimate.fit(compile_design(panel, "m5"))
    np.testing.assert_allclose(run.coefs[0], [full.coef(c) for c in run.columns], rtol=1e-12, atol=1e-15)
    q = run.quantiles
    np.testing.assert_allclose(q["q025"], q["point"], rtol=1e-12, atol=1e-12)
    point = project.project_all(full, path, panel)
    np.testing.assert_allclose(q["point"].to_numpy(), point["pct_delta_gdp"].to_numpy(), rtol=1e-12, atol=1e-12)


def test_deterministic_and_ordered(setup, tmp_path):
    panel, path = setup
    a = boot.block_bootstrap(panel, "m5", path, n_rep=30, seed=99)
    b = boot.block_bootstrap(panel, "m5", path, n_rep=30, seed=99)
    pd.testing.assert_frame_equal(a.quantiles, b.quantiles)
    assert a.draws == b.draws
    boot.write_run(a, tmp_path / "a", coefficients=True)
    boot.write_run(b, tmp_path / "b", coefficients=True)
    for name in ("quantiles.csv", "draws.csv", "coefficients.csv", "bootstrap.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert np.all(a.quantiles["q025"] <= a.quantiles["q975"])


def test_parallel_matches_serial(setup):
    panel, path = setup
    serial = boot.block_bootstrap(panel, "m5", path, n_rep=12, seed=5, workers=1)
    pooled = boot.block_bootstrap(panel, "m5", path, n_rep=12, seed=5, workers=3)
    np.testing.assert_array_equal(serial.trajectories, pooled.trajectories)
    pd.testing.assert_frame_equal(serial.quantiles, pooled.quantiles)


def test_replicate_independent_of_run_length(setup):
    panel, path = setup
    short = boot.block_bootstrap(panel, "m5", path, n_rep=5, seed=1)
    long = boot.block_bootstrap(panel, "m5", path, n_rep=9, seed=1)
    np.testing.assert_array_equal(short.coefs, long.coefs[:5])


def test_failures_recorded_and_fatal_above_share(panel_m1):
    panel, _ = panel_m1
    path = scenario_path(panel)
    provinces = tuple(sorted(panel["province"].unique()))
    rng = np.random.default_rng(0)
    good = [tuple(rng.choice(provinces, 10)) for _ in range(10)]
    # one province repeated ten times: climate is then a function of year, collinear with year dummies
    bad = ("ON",) * 10
    run = boot.block_bootstrap(panel, "m1", path, n_rep=10, draws=[bad] + good[1:])
    assert run.n_failed == 1 and 0 in run.failures
    assert len(run.ok) == 9 and run.trajectories.shape[0] == 9
    assert run.meta()["n_failed"] == 1
    with pytest.raises(NumericalError, match="2 of 10"):
        boot.block_bootstrap(panel, "m1", path, n_rep=10, draws=[bad, bad] + good[2:])


def test_bands_cover_point_trajectory(setup):
    panel, path = setup
    run = boot.block_bootstrap(panel, "m5", path, n_rep=200, seed=2017)
    q = run.quantiles
    inside = (q["q025"] <= q["point"]) & (q["point"] <= q["q975"])
    years = q[q["year"] > 2017]
    share = inside[years.index].groupby(years["province"]).mean()
    assert share.min() >= 0.8
    assert run.meta()["quantile_method"].startswith("linear")
