"""Tables of the Holder-exponent recursion and of sigma_m exponents.

Run: python demos/exponent_table.py
"""
from hesslab.exponent import iterate_exponents, sigma_m_exponent

for q0n in (0.5, 1.0, 4.0, 20.0):
    seq = iterate_exponents(q0n)
    head = ", ".join(f"{m:.6f}" for m in seq.mu_values[:4])
    print(f"q0n={q0n:<5} mu: {head}, ... -> {seq.mu_values[-1]:.8f} "
          f"(fixed point {seq.fixed_point:.8f}, {seq.iterations} steps)")

print()
print(f"{'n':>3} {'m':>3} {'p':>6} {'exponent':>10}")
for n in (2, 3):
    for m in range(1, n + 1):
        for scale in (1.5, 3.0, 10.0):
            p = scale * n / m
            print(f"{n:3d} {m:3d} {p:6.2f} {sigma_m_exponent(p, n, m):10.6f}")
