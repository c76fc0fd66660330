"""Dyadic decomposition, maximal function and a good-lambda check.

Decomposes a small set on the unit square into maximal dyadic cubes of
density above ``delta``, prints the exact certificates, then runs the
good-lambda inequality for a resolvent instance on [-1, 1].

Run with ``python demos/dyadic_tools.py``.
"""
import numpy as np

from nonlocal_lab import DyadicCube, Grid, assemble, cz_decompose, make_kernel, maximal
from nonlocal_lab.czkit import good_lambda_check, max_admissible_delta
from nonlocal_lab.experiments import good_lambda_instance

root = DyadicCube(2, 8)
A = [0, 1, 8, 9, 27, 63]
res = cz_decompose(root, A, 0.2)
for cube, cert in zip(res.selected, res.certificates):
    print(f"cube {cube.bounds()}: density {cert.density}, parent {cert.parent_density}")
print(f"verified: {res.verify(A)}")

g = np.zeros(16)
g[5] = 1.0
print("maximal function of a spike:", np.round(maximal(g), 3))

op = assemble(make_kernel("fractional", 1, 0.5), Grid(1, 1.0, 256))
Tsq, fsq = good_lambda_instance(op, 1.0, seed=7)
delta = max_admissible_delta(3.0, 1)
report = good_lambda_check(Tsq, fsq, 3.0, delta, 10.0, np.logspace(-3, 3, 25))
print(f"good-lambda at gamma = 10: {report.summary}")
