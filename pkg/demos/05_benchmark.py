"""A small propensity-stratified benchmark.

Replicates are simulated once and shared by every estimator, so
comparisons are paired.  Bias and RMSE are computed within strata of the
true propensity score.
"""

import os

from iteforest import ExperimentConfig, run_experiment

config = ExperimentConfig(models=("M1", "M3"), estimators=("vt", "vt_i", "cf", "honest"),
                          n=300, B=5, M=10, n_trees=300, jobs=os.cpu_count() or 1)
result = run_experiment(config)

print(result.summary.round(4).to_string(index=False))
print()
print(result.table.query("model == 'M3' and estimator == 'cf'").round(3).to_string(index=False))
