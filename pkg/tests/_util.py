import numpy as np
import pandas as pd

from panelclim.constants import SEASONS
from panelclim.panel import CompiledDesign, ModelSpec


def seasonal_table(provinces=("AB", "BC"), years=range(1998, 2018), seed=0):
    """Seasonal climate table with random levels (positive precipitation)."""
    rng = np.random.default_rng(seed)
    rows = []
    for p in provinces:
        for s in SEASONS:
            for y in years:
                rows.append((p, s, y, rng.normal(5, 8), rng.uniform(20, 400)))
    return pd.DataFrame(rows, columns=["province", "season", "year", "mean_temp", "mean_precip"])


def write_csv(path, rows, header):
    pd.DataFrame(rows, columns=header).to_csv(path, index=False)
    return path


def raw_design(X, y, blocks=(), cluster=None):
    """Design from bare arrays with generic column names and no year effects."""
    cluster = np.zeros(len(y), dtype=int) if cluster is None else cluster
    return CompiledDesign(np.asarray(y, float), np.asarray(X, float), [f"x{i}" for i in range(X.shape[1])],
                          list(blocks), cluster, ModelSpec(year_effect="none"))
