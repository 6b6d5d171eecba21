"""
Rashomon capacity of a set of models
====================================

Capacity measures how much a set of models disagree. Two constant
regressors at 0 and 1 give 1/4; two one-hot classifiers that never agree
give ln 2 nats.
"""

# %%
import numpy as np

from cashomon import PredictionMatrix, solve_capacity

res = solve_capacity(PredictionMatrix(np.array([[0.0, 1.0]]), "regression"))
print(res.value, res.weights)

# %%
res = solve_capacity(PredictionMatrix(np.array([[[1.0, 0.0], [0.0, 1.0]]]), "classification"))
print(res.value, np.log(2))

# %%
# identical models have zero capacity; the weights are then arbitrary
rng = np.random.default_rng(0)
preds = rng.random((50, 1)).repeat(4, axis=1)
print(solve_capacity(PredictionMatrix(preds, "regression")).value)
