"""
A random forest on a toy problem
================================

The classifier is a plain bagged CART forest. On the XOR pattern no single
axis split helps, yet a handful of trees already fit it.
"""

import numpy as np

from vesselgrow.forest import ForestModel, ForestParams, oob_error, train

rng = np.random.default_rng(0)
centres = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
k = np.arange(400) % 4
X = centres[k] + rng.normal(0, 0.2, (400, 2))
y = k >= 2

###############################################################################
# Probability is the mean of the leaf vessel fractions over all trees.

model = train(X, ForestParams(n_trees=60, mtry=1, seed=1), y=y)
p = model.predict_proba(X)
print(f"training accuracy {np.mean((p >= 0.5) == y):.3f}")

###############################################################################
# Out-of-bag error falls as trees are added.

for n in (1, 5, 20, 60):
    print(f"{n:>3} trees: out-of-bag error {oob_error(model, X, y, n):.3f}")

###############################################################################
# Models serialise to a small self-describing binary file.

blob = model.to_bytes()
print(f"{len(blob)} bytes, {model.n_trees} trees, max depth "
      f"{max(model.depth(t) for t in range(model.n_trees))}")
assert np.array_equal(ForestModel.from_bytes(blob).predict_proba(X), p)
