"""Quick multi-rep probe of the acceptance-sensitive cells."""

import sys
import time

from multicate import ForestParams, ScenarioConfig, run_benchmark

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 8
t0 = time.time()
grid = [
    ScenarioConfig(scenario="1a", seed=900, n_reps=reps).with_sd_pair("low-low"),
    ScenarioConfig(scenario="1b", seed=901, n_reps=reps).with_sd_pair("med-med"),
    ScenarioConfig(scenario="2", seed=902, n_reps=reps),
]
methods = [
    "cf_indicator", "x_indicator", "s_indicator",
    "cf_forest", "x_forest", "s_forest",
    "cf_lasso", "x_lasso", "s_lasso",
    "cf_tree", "meta", "cf_pool",
]
report = run_benchmark(
    grid, methods=methods, forest_params=ForestParams(n_trees=200), workers=2,
)
df = report.summary_frame()
print(df.to_string(index=False))
print(f"elapsed: {time.time() - t0:.0f}s")
df.to_csv("/tmp/probe_summary.csv", index=False)
