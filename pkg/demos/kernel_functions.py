"""Walk through the collision-kernel closed forms and their sanity anchors.

The model's jump rates have one Gaussian core, so the total rate, mean jump,
and second moment all reduce to error-function expressions.  This script
evaluates them on a small momentum grid, checks the anchor values, and shows
the reversibility weight at work.
"""

import math

import numpy as np

from torusgas import (ModelParams, escape_rate, jump_drift, jump_moment,
                      jump_rate, q_variance)

lam = 0.1
params = ModelParams(lam)
print(f"mass ratio {lam}, gas constant eta = sqrt(2 pi)/32 "
      f"(friction pinned to 1/2)\n")

ps = np.array([0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0])
print(f"{'p':>6} {'escape':>10} {'drift':>11} {'2nd moment':>11} {'variance':>10}")
for p in ps:
    print(f"{p:6.1f} {float(escape_rate(params, p)):10.6f} "
          f"{float(jump_drift(params, p)):11.6f} "
          f"{float(jump_moment(params, p, 2)):11.6f} "
          f"{float(q_variance(params, p)):10.6f}")

print("\nanchors:")
print("  escape(0) * 8(1+lam)      =", float(escape_rate(params, 0.0)) * 8 * (1 + lam))
print("  drift(0)                  =", float(jump_drift(params, 0.0)))
print("  variance(0) * (1+lam)^3   =", float(q_variance(params, 0.0)) * (1 + lam) ** 3)

print("\nat zero mass ratio the kernel becomes a pure convolution:")
p0 = ModelParams(0.0)
print("  escape rate is constant 1/8:", float(escape_rate(p0, 7.3)))
print("  second moment is exactly 1:", float(jump_moment(p0, 7.3, 2)))

print("\nreversibility holds with the Maxwell weight exp(-lam p^2 / 2):")
for pf, pt in ((0.5, -1.5), (3.0, 1.0)):
    lhs = math.exp(-lam * pf ** 2 / 2) * float(jump_rate(params, pf, pt))
    rhs = math.exp(-lam * pt ** 2 / 2) * float(jump_rate(params, pt, pf))
    print(f"  {pf:+.1f} <-> {pt:+.1f}: forward {lhs:.3e}  backward {rhs:.3e}")
