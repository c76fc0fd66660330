"""Local energy and reverse Holder estimates for resolvent solutions.

For the fractional Laplacian of order 1/2 on [-4, 4] this manufactures
solutions of ``(lam + A) u = 0`` near a ball, evaluates both sides of the
non-local Caccioppoli inequality and then the weak reverse Holder ratio
at the midpoint of the admissible exponent range.

Run with ``python demos/local_estimates.py``.
"""
import numpy as np

from nonlocal_lab import Ball, Grid, admissible_p_range, assemble, make_kernel
from nonlocal_lab.estimates import caccioppoli_verify, wrh_check
from nonlocal_lab.kernels import sector_params

op = assemble(make_kernel("fractional", 1, 0.5), Grid(1, 4.0, 512))
theta = sector_params(op.kernel.lam).theta
ball = Ball((0.0,), 0.5)

print("Caccioppoli ratio lhs / rhs")
for mag in (0.1, 1.0, 10.0, 100.0):
    lam = mag * np.exp(1j * theta)
    b = caccioppoli_verify(op, ball, lam, forcing_seed=1, theta=theta)
    print(f"  |lam| = {mag:6.1f}: lhs {b.lhs:.3e}  rhs {b.rhs:.3e}  ratio {b.ratio:.4f}")

p = admissible_p_range(1, op.kernel.order).midpoint_above_two
ratios = [wrh_check(op, ball, 1.0, p, 2.0, seed, theta).ratio for seed in range(5)]
print(f"reverse Holder at p = {p}: max ratio over 5 forcings {max(ratios):.4f}")
