"""How much data does a pooled model need?

Five thousand sparse, bursty series.  One pooled linear model is fitted on
random subsets of growing size and scored on every series' held-out month.
The mean MSE falls quickly and then flattens: past a few hundred series,
more training data barely moves the error.  The mean and all-zero forecasts
are printed as reference lines.

Usage: python demos/sampling_curve.py [repeats]
"""

import sys

from retailprob.experiments import SamplingStudySpec, run_sampling_study, write_sampling_result
from retailprob.synthetic import lumpy_dataset


def main(repeats=20):
    ds = lumpy_dataset(5000)
    spec = SamplingStudySpec(demand_class="all", repeats=repeats)
    res = run_sampling_study(spec, ds)
    _, _, _, mean_mse, zero_mse = res.rows[0]
    print(f"{len(res.population)} series, {repeats} repeats per size\n")
    print(f"{'size':>6}  mean MSE")
    for size, value in res.mean_curve().items():
        print(f"{size:>6}  {value:.4f}")
    print(f"\nmean forecast MSE {mean_mse:.4f}, zero forecast MSE {zero_mse:.4f}")
    paths = write_sampling_result(res, "out/demo_sampling")
    print("curve written to", ", ".join(str(p) for p in paths))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
