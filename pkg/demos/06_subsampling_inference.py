"""Which covariates explain the estimated effects?

Effects are re-estimated on many n/10 subsamples and regressed on the
covariates; coefficient spread across subsamples gives standard errors.
The intercept is the effect at covariate value zero.
"""

import numpy as np

from iteforest import Dataset, InferenceConfig, SyntheticSpec, coplot_export, estimate_cf, subsample_inference

rng = np.random.default_rng(5)
n = 1000
cesd = rng.standard_normal(n)              # centered depression score
age = rng.standard_normal(n)
sex = rng.integers(0, 2, n)
x = np.column_stack([cesd, age, sex])
t = (rng.random(n) < 1 / (1 + np.exp(-(0.5 * age + 0.5 * sex)))).astype(int)
y = 1 + 0.5 * age + t * (1.0 + 0.5 * cesd) + 0.5 * rng.standard_normal(n)
data = Dataset(x, t, y, feature_names=("cesd", "age", "sex"))

config = InferenceConfig(n_replicates=100, method="syncf",
                         spec=SyntheticSpec((1, 5, 20), (1, 3), base_n_trees=100, final_n_trees=200))
table = subsample_inference(data, config)
print(table.to_frame().round(3).to_string(index=False))
print("intercept 95% interval:", np.round(table.interval("(intercept)"), 3))

# records for a conditioning plot of effect against cesd, by sex and age band
tau = estimate_cf(data).tau_hat
frame = coplot_export(tau, data, "cesd", cond_vertical="sex", cond_horizontal="age", bins=3)
print(frame.groupby(["stratum_v", "stratum_h"]).size())
