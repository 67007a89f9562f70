"""Top-down probabilistic forecasting on a synthetic Poisson hierarchy.

Fifty aggregates, five children each, sampled from known daily rates with a
weekly cycle.  The script classifies demand, fits one pooled linear model on
the aggregates, splits its forecasts down by historical shares, turns the
point forecasts into Poisson quantiles and scores everything with WSPL.

Usage: python demos/topdown_walkthrough.py
"""

import numpy as np

from retailprob.classify import classify_level
from retailprob.config import load_config
from retailprob.experiments import load_dataset, run_topdown


def main():
    cfg = load_config(None, {"synthetic": "benchmark", "output_dir": "out/demo_topdown"})
    ds = load_dataset(cfg)
    print(f"{len(ds.ids('A'))} aggregates, {len(ds.ids('L'))} children, {ds.horizon} held-out days\n")

    part = classify_level(ds, "A")
    print("1. demand classes at the aggregate level")
    for cls, n in part.sizes.items():
        print(f"   {cls.value:<12} {n}")

    print("\n2. pooled OLS on 100 lags, recursive 28-day forecasts, split by training shares")
    res = run_topdown(cfg)
    cls, cr = next(iter(res.classes.items()))
    agg, low = cr.forecasts[("PR", "A")], cr.forecasts[("PR", "L")]
    a0 = agg.ids[0]
    kids = ds.hierarchy.children_of[a0]
    pos = {c: k for k, c in enumerate(low.ids)}
    print(f"   {a0} day 1 forecast {agg.points[0, 0]:.3f}")
    print(f"   its children       {np.round(low.points[[pos[c] for c in kids], 0], 3).tolist()}")
    print(f"   children sum       {low.points[[pos[c] for c in kids], 0].sum():.3f}")

    print("\n3. Poisson quantiles for the first child, days 1 to 7 (u = 0.1 / 0.9)")
    q = low.quantiles[pos[kids[0]]]
    print("   lower", q[:7, 0].astype(int).tolist())
    print("   upper", q[:7, -1].astype(int).tolist())

    print("\n4. leaderboard (lower WSPL is better)")
    for group, level, model, value, n, _ in res.leaderboard():
        print(f"   {group}/{level:<2} {model:<9} {value:.4f}  ({n} series)")
    print(f"\nartifacts written to {cfg.output_dir}/")


if __name__ == "__main__":
    main()
