"""How often BIC picks the generating preset among m1 and m5 over many seeds."""
import argparse

from panelclim.estimate import select_by_bic
from panelclim.synth import SynthConfig, generate

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", type=int, default=50)
args = ap.parse_args()

truths = {
    "m1": dict(spec="m1", year_sd=0.03, error_sd=0.01),
    "m5": dict(spec="m5", year_sd=0.005, error_sd=0.01,
               index_beta={**SynthConfig().index_beta, "idx_unemployment": -0.003}),
}
for name, kw in truths.items():
    gaps, hits = [], 0
    for seed in range(args.seeds):
        best, bics = select_by_bic(generate(SynthConfig(seed=seed, **kw))[0], ["m1", "m5"])
        hits += best == name
        other = "m5" if name == "m1" else "m1"
        gaps.append(bics[other] - bics[name])
    print(f"truth {name}: selected {hits}/{args.seeds}, BIC margin min {min(gaps):.2f} median "
          f"{sorted(gaps)[len(gaps) // 2]:.2f}")
