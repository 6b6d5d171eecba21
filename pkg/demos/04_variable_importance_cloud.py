"""
Variable importance on the ST dataset
=====================================

X1 and X2 are nearly identical copies of an irrelevant variable, X4 is a
noisy copy of X3, and the response depends on X4 and X5 only. A well
regularized linear model should put (almost) no importance on X1 and X2.
"""

# %%
from cashomon.importance import fit_learner, generate_st, pfi_vector, scale_fi, vic

data = generate_st(5000, seed=0)
train, test = data.split(seed=0)
ridge = fit_learner("ridge", {"penalty": 100.0}, train)
print(dict(zip(data.feature_names, scale_fi(pfi_vector(ridge, test, seed=0)).values.round(4))))

# %%
# a small cloud over ridge and k-NN models
models = [fit_learner("ridge", {"penalty": p}, train) for p in (1.0, 100.0)]
models += [fit_learner("knn", {"k": k}, train) for k in (5, 25)]
cloud = vic(models, test, repeats=5, seed=0)
for row in cloud.rows()[:10]:
    print(row)
