"""
How much work stays in the trusted context
==========================================

Plans a rank schedule for the bundled six-layer chain and prints the per-layer
MAC, memory and transfer counts.  The trusted convolution costs r/N of the
dense one; the kernel transform and the light SVD add a small overhead.
"""
from fractions import Fraction

from asymsplit import planner
from asymsplit.model import load_model

m = load_model("vgg6")

for label, plan in [("doubling schedule", planner.plan_r_schedule(m)),
                    ("r/N = 1/16", planner.plan_rank_ratio(m, Fraction(1, 16)))]:
    print(f"\n{label}: ranks {plan.series()}")
    print(f"{'layer':>5} {'r':>3} {'trusted MACs':>13} {'untrusted MACs':>15} {'fwd KiB':>8} {'bwd KiB':>8}")
    conv = [c for c in plan.costs if c.kind == "conv"]
    for c in conv:
        print(f"{c.layer:5d} {c.r:3d} {c.macs_trusted:13,d} {c.macs_untrusted:15,d} "
              f"{c.xfer_fwd_bytes / 1024:8.0f} {c.xfer_bwd_bytes / 1024:8.0f}")
    t = sum(c.macs_trusted for c in conv)
    u = sum(c.macs_untrusted for c in conv)
    print(f"trusted share of conv MACs: {t / (t + u):.2%}")
