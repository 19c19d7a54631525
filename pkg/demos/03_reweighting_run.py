"""
Four training methods on a low-data split
=========================================

Train the plain learner, the learner on real plus synthetic data, the
reweighting learner on real data only, and the full method, then score each
greedy policy on held-out categories. The budget here is tiny, so the
numbers are noisy; the acceptance suite runs the five-seed version.
"""

from boostlab.config import preset
from boostlab.evaluation import eval_pool, evaluate, policy_from_log
from boostlab.pipeline import prepare, run_training

cfg = preset("tq-ilql-desk", seed=0).with_values(bilevel={"K_psi": 150, "K_theta": 150, "K_phi": 10})
prep = prepare(cfg, "low")
tasks = eval_pool(prep.split.eval)
print(f"{len(prep.split.train)} real, {len(prep.synthetic)} synthetic, {len(tasks)} held-out tasks")

for method in ("vanilla", "vanilla_syn", "bilevel_only", "boost"):
    log = run_training(cfg, prep, method, "ilql")
    rep = evaluate(policy_from_log(log, "ilql"), prep.world, tasks, 64, rng_seed=1)
    print(f"{method:13s} reward {rep.mean:5.2f} +- {rep.se:.2f}  success {rep.success_rate:.2f}")
