"""How many visual tokens survive distillation?

Keyframes keep every patch token; every other frame collapses to one merged
token.  For 128 frames of 729 patches with 32 keyframes that is
32 * 729 + 96 = 23,424 tokens instead of 93,312.
"""

from diffdistill import budget
from diffdistill.pipeline import CostProfile, estimate_cost

report = budget(n=128, m=729, k=32)
print(f"original tokens   {report.original_tokens:>7,}")
print(f"compressed tokens {report.compressed_tokens:>7,}")
print(f"reduction         {100 * report.reduction_ratio:6.2f}%")

# A crude cost proxy: linear per-token work plus a quadratic attention term.
profile = CostProfile(per_token_cost=1.0, attention_quadratic_coeff=1e-4)
before = estimate_cost(report.original_tokens, profile)
after = estimate_cost(report.compressed_tokens, profile)
print(f"proxy cost        {before:,.0f} -> {after:,.0f} ({before / after:.1f}x cheaper)")

# The reduction grows with video length while the keyframe budget stays fixed.
for n in (64, 256, 1024, 4096):
    print(f"N={n:>5}: {100 * budget(n, 729, 32).reduction_ratio:6.2f}% fewer tokens")
