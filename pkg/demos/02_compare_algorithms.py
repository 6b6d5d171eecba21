"""
Comparing acquisition strategies
================================

A reduced version of the benchmark: two seeds, 60 iterations after the
initial design. F1 against the near-optimal set is tracked per iteration.
"""

# %%
from cashomon.bench import default_config, run_experiment

cfg = default_config(seeds=[0, 1], algorithms=["TRUVARIMP", "LSE_IMP", "RANDOM", "OPTIMIZE"], iterations=60)
res = run_experiment(cfg)
print("truth size", res.truth_size, "of", res.n_candidates)

# %%
for algo in cfg.algorithms:
    F = res.f1_matrix(algo)
    print(f"{algo:10s} F1 at 20/40/60: " + " ".join(f"{F[:, i].mean():.3f}" for i in (19, 39, 59)))

# %%
# every record carries the epoch, eta and the partition sizes
rec = res.records[("TRUVARIMP", 0)][-1]
print("epoch", rec.epoch, "eta", rec.eta, "|U|", rec.size_U, "|M|", rec.size_M)
