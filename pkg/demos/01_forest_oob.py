"""Growing a regression forest and reading its out-of-bag predictions.

Each tree sees a bootstrap sample, so about 37% of rows are left out of any
given tree.  Averaging only over those trees gives an honest in-sample fit.
"""

import numpy as np

from iteforest import ForestSpec, grow_forest, predict_oob

rng = np.random.default_rng(0)
x = rng.uniform(-3, 3, (300, 4))
y = np.sin(x[:, 0]) + 0.5 * x[:, 1] + 0.2 * rng.standard_normal(300)

forest = grow_forest(x, y, ForestSpec(n_trees=1000, seed=1))

oob = forest.predict_oob()
print("mean OOB trees per row:", oob.n_trees.mean())          # close to 370
print("OOB mse:", np.mean((oob.values - y) ** 2))
print("in-bag mse:", np.mean((forest.predict(x) - y) ** 2))   # optimistic

value, used = predict_oob(forest, 0)
print(f"row 0: OOB prediction {value:.3f} from {used} trees, truth {np.sin(x[0, 0]) + 0.5 * x[0, 1]:.3f}")

# one tree, seen as a plain structure
tree = forest.tree(0)
print("tree 0:", tree.n_nodes, "nodes,", tree.leaves.size, "leaves,",
      int(tree.inbag_counts.sum()), "draws")
