"""End to end on synthetic data: full model against its ablations.

Generates a desk-scale cross-domain dataset with planted preferences and a
30% fraction of junk source interactions, holds out one validation and one
test item per user, trains the full model and several ablations, and ranks
the held-out test items against the full catalog.

Run:  python demos/03_end_to_end_synthetic.py          (about a minute)
"""

import time

from crossrec.data import SynthSpec, generate_synthetic
from crossrec.evaluation import split_leave_one_out
from crossrec.training import TrainConfig
from crossrec.experiments import run_ablation

SEED = 1

spec = SynthSpec(seed=SEED)
bundle, flags = generate_synthetic(spec)
split = split_leave_one_out(bundle, SEED)
print(
    f"dataset: {spec.user_count} users, {spec.source_items}+{spec.target_items} items, "
    f"{bundle.source.edge_count} source edges ({flags.mean():.0%} junk), "
    f"{bundle.target.edge_count} target edges"
)
print(f"split: {split.users.size} evaluated users, {split.train_target.shape[0]} target train edges\n")

config = TrainConfig(
    seed=SEED,
    max_epochs=200,
    patience=0,
    learning_rate=0.1,
    batch_size=100,
    alphas=(0.133, 0.025, 0.076),
    gumbel_temperature=0.5,
    contrastive_temperature=0.5,
)

print(f"{'variant':<12} {'NDCG@10':>8} {'HIT@10':>8} {'MRR@10':>8} {'NDCG@100':>9}  time")
for variant in ("full", "no-pred-s", "no-kl", "no-cl", "no-kg", "target-only"):
    start = time.perf_counter()
    result = run_ablation(variant, config, bundle, split, ks=(10, 100))
    elapsed = time.perf_counter() - start
    print(
        f"{variant:<12} {result.metric('ndcg', 10):>8.3f} {result.metric('hit', 10):>8.3f} "
        f"{result.metric('mrr', 10):>8.3f} {result.metric('ndcg', 100):>9.3f}  {elapsed:4.1f}s"
    )

print(
    "\nAll numbers are percentages (means over users times 100).  The full"
    "\nmodel should beat the single-domain baseline (the source domain and"
    "\nthe entity bridge add real signal) and the no-kl ablation (gating junk"
    "\nsource behavior pays off at a 30% junk rate).  Exact values vary by"
    "\nseed; medians over several seeds are compared in the acceptance suite."
)
