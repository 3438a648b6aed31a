"""
What the untrusted context can learn
====================================

Measures the binned mutual information between a layer input and the residual
handed to the untrusted context, relative to the input's own information.
Raising the rank removes the shared structure; adding masking noise to the
residual lowers the leakage further.
"""
from asymsplit import datasets, planner, privacy
from asymsplit.model import load_model

m = load_model("lowrank16")
plan = planner.plan_r_schedule(m)
xs = datasets.low_rank_images(32, seed=0)

print("rank  relative leakage")
for r in (0, 1, 2, 4, 8, 16):
    rep = privacy.leakage_sweep(xs, m, plan, [0.0], r=r)[0]
    print(f"{r:4d}  {rep.relative_leakage:.4f}")

print(f"\nnoise at the planned rank r={plan.rank(m.conv_indices()[0])}")
for rep in privacy.leakage_sweep(xs, m, plan, [0.0, 0.05, 0.1, 0.2, 0.5]):
    print(f"nsr {rep.nsr:4.2f}: {rep.relative_leakage:.4f}  ({rep.mi_bits:.3f} of {rep.self_info_bits:.3f} bits)")
