"""
Candidates, landscapes and the near-optimal set
===============================================

Sample a finite candidate set from the default three-class space, put a
synthetic objective on it and look at which configurations fall within 5%
of the best one.
"""

# %%
import numpy as np

from cashomon import ThresholdSpec, ground_truth_set, sample_candidates
from cashomon.bench import default_config, make_landscape

space = default_config().space
for cls in space.classes:
    print(cls.name, [p.name for p in cls.params], "encoded dim", cls.dim)

# %%
# 200 draws per class; integer parameters can collide after rounding, which
# is flagged rather than silently removed
cands = sample_candidates(space, 200, seed=0)
print(len(cands), "candidates,", int(cands.duplicate_mask().sum()), "duplicates")

# %%
land = make_landscape(cands, "gp_sample", seed=3)
spec = ThresholdSpec(eps_rel=0.05)
truth = ground_truth_set(land.values, spec)
print("minimum", land.values.min(), "cutoff", spec.cutoff(land.values.min()))
print("near-optimal set size", len(truth))
print("per class", np.bincount(cands.class_index[truth], minlength=len(space)))
