"""Sampling distribution of the REML variance ratio on balanced one-way data."""
import argparse

import numpy as np

from panelclim import estimate
from panelclim.panel import CompiledDesign, ModelSpec, RandomBlock
from panelclim.synth import one_way_anova_theta, one_way_data

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--draws", type=int, default=200)
ap.add_argument("--groups", type=int, default=10)
ap.add_argument("--per-group", type=int, default=200)
ap.add_argument("--theta", type=float, default=2.0)
args = ap.parse_args()

est, anova = [], []
for seed in range(args.draws):
    X, y, Z, g = one_way_data(args.groups, args.per_group, args.theta, seed=seed)
    block = RandomBlock("group", Z, [str(i) for i in range(args.groups)])
    d = CompiledDesign(y, X, ["(Intercept)"], [block], g, ModelSpec(year_effect="none"))
    est.append(estimate.fit(d).theta[0])
    anova.append(one_way_anova_theta(y, g))
est = np.array(est)
print(f"true theta {args.theta}; REML median {np.median(est):.3f}, mean {est.mean():.3f}, "
      f"5-95% [{np.quantile(est, 0.05):.3f}, {np.quantile(est, 0.95):.3f}]")
print(f"max |REML - ANOVA| {np.max(np.abs(est - np.array(anova))):.2e}")
for lo in range(0, args.draws, 50):
    print(f"draws {lo}-{lo + 49}: median {np.median(est[lo:lo + 50]):.3f}")
