"""
Reading the learned weights
===========================

After a short run of the full method, look at how the weights moved away
from uniform, how synthetic weights relate to distance from real data, and
what the hitting-time bound says about the weighted set.
"""

import numpy as np

from boostlab.config import preset
from boostlab.diag import (
    BoundInputs,
    kl_proxy,
    knn_mean_distance,
    pac_bound,
    pearson,
    weight_change_report,
    weight_shift_matrix,
)
from boostlab.env import hitting_time
from boostlab.model import init_from_pretrained
from boostlab.pipeline import prepare, run_training

cfg = preset("tq-ilql-desk", seed=0).with_values(bilevel={"K_psi": 150, "K_theta": 150, "K_phi": 10})
prep = prepare(cfg, "low")
log = run_training(cfg, prep, "boost", "ilql")
w = log.final_weights()

report = weight_change_report(w, log.sources)
for src, row in report.by_source.items():
    print(f"{src:9s} n={row['n']:3d} mean change {row['mean']:+.3f} share above uniform {row['frac_positive']:.2f}")

# %%
# Mean L1 distance from each synthetic point to its nearest real neighbours.
src = np.array(log.sources)
syn = [i for i, s in zip(log.ids, src) if s == "synthetic"]
real = [t.traj_id for t in prep.split.train]
dist = knn_mean_distance(prep.cache.matrix(syn), prep.cache.matrix(real), min(10, len(real)))
print("Pearson(change, kNN distance) =", round(pearson(report.changes[src == "synthetic"], dist), 3))

# %%
# Which trajectories stayed on top between the first and last outer iteration?
first = dict(zip(log.ids, log.weights[0]))
last = dict(zip(log.ids, log.weights[-1]))
m = weight_shift_matrix(first, last)
print(f"retention {m.retention:.0f}%  promotion {m.promotion:.0f}%")

# %%
# The bound combines weighted empirical time, a complexity term and task shift.
h_max = prep.world.config.h_max
by_id = {t.traj_id: t for t in list(prep.split.train) + list(prep.synthetic)}
times = [hitting_time(by_id[i], h_max) for i in log.ids]
kl = kl_proxy(log.params, init_from_pretrained(prep.pretrained, "ilql"))
bound = pac_bound(BoundInputs(tuple(w), tuple(times), h_max, kl))
print(f"n_eff {bound.n_eff:.1f}  KL proxy {kl:.2f}  weighted time {bound.weighted_empirical:.2f}")
print(f"bound (exact) {bound.bound_exact:.2f}  bound (simplified, C1=1) {bound.bound_simplified:.2f}")
