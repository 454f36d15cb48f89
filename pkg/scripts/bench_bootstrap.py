"""Time the province block bootstrap on a 10x20 synthetic panel."""
import argparse
import time

import pandas as pd

from panelclim import boot, project
from panelclim.constants import SEASONS
from panelclim.synth import SynthConfig, generate

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--reps", type=int, default=1000)
ap.add_argument("--workers", type=int, default=4)
ap.add_argument("--spec", default="m5")
ap.add_argument("--seed", type=int, default=20170101)
args = ap.parse_args()

panel, _ = generate(SynthConfig(seed=3, spec=args.spec))
provinces = sorted(panel["province"].unique())
rcp = pd.DataFrame([("RCP4.5", p, s, h, d, 4.0 * d) for p in provinces for s in SEASONS
                    for h, d in (("near", 1.5), ("mid", 2.5))],
                   columns=["scenario", "province", "season", "horizon", "temp_delta", "precip_delta"])
base = pd.DataFrame([(p, s, 5.0, 100.0) for p in provinces for s in SEASONS],
                    columns=["province", "season", "mean_temp", "mean_precip"])
path = project.extrapolate_climate(rcp, base, "RCP4.5")

t0 = time.perf_counter()
run = boot.block_bootstrap(panel, args.spec, path, n_rep=args.reps, seed=args.seed, workers=args.workers)
dt = time.perf_counter() - t0
print(f"{args.reps} replicates ({run.n_failed} failed) in {dt:.2f}s with {args.workers} workers; "
      f"{1000 * dt / args.reps:.1f} ms per replicate")
q = run.quantiles
print(q[q["year"] == 2050][["province", "point", "q025", "q975"]].round(3).to_string(index=False))
