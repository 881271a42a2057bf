"""Synthetic forests: forests of varying depth feed a final forest.

Each (nodesize, mtry) pair yields a base learner whose OOB predictions
become an extra feature.  All stages share one bootstrap plan.
"""

import numpy as np

from iteforest import ForestSpec, SyntheticSpec, grow_forest, grow_synthetic

rng = np.random.default_rng(3)
x = rng.uniform(-3, 3, (500, 3))
y = np.sin(2 * x[:, 0]) + 0.3 * rng.standard_normal(500)
grid = np.column_stack([np.linspace(-2.5, 2.5, 400), np.zeros(400), np.zeros(400)])
truth = np.sin(2 * grid[:, 0])

spec = SyntheticSpec(nodesize_grid=(1, 5, 20, 50), mtry_grid=(1, 3),
                     base_n_trees=250, final_n_trees=500, seed=3)
sf = grow_synthetic(x, y, spec)
rf = grow_forest(x, y, ForestSpec(500, seed=3))

print("base learners:", spec.n_learners, "-> final forest columns:", sf.final_forest.n_features)
print("synthetic RMSE:", np.sqrt(np.mean((sf.predict(grid) - truth) ** 2)))
print("plain RF RMSE: ", np.sqrt(np.mean((rf.predict(grid) - truth) ** 2)))
print("shared plan:", all(np.array_equal(b.inbag, sf.shared_inbag[:250]) for b in sf.base_learners))
