"""Halving recursion on power profiles phi(s) = A (1 - s/S)_+^p.

Run: python demos/degiorgi_profiles.py
"""
import numpy as np

from hesslab.stability import degiorgi_simulate, power_profile

rng = np.random.default_rng(0)
print(f"{'A':>6} {'S':>6} {'p':>5} {'mu':>6} {'B0':>8} {'vanish':>8} {'threshold':>9} {'steps':>5} ok")
for _ in range(8):
    A, S, p = rng.uniform(0.5, 3), rng.uniform(0.5, 2), rng.uniform(1, 3)
    mu = rng.uniform(0.2, 1.0) / p
    phi, b0 = power_profile(A, S, p)
    res = degiorgi_simulate(phi, b0(mu), mu, 0.0)
    print(f"{A:6.3f} {S:6.3f} {p:5.2f} {mu:6.3f} {b0(mu):8.4f} {res.vanish_point:8.4f} {res.threshold:9.4f} "
          f"{len(res.s_steps) - 1:5d} {res.passed}")
