"""Sup-convolve the Lipschitz kink on the flat torus and print the L1 and sup-gap rates.

Run: python demos/kink_rates.py [grid]
"""
import sys

import numpy as np

from hesslab.rates import fit_rate, geometric_eps
from hesslab.scenarios import torus_kink
from hesslab.supconv import sup_convolve


def main(grid=64):
    sc = torus_kink(grid)
    phi = sc.build()
    eps = geometric_eps(0.2, 0.6, 6)
    l1, sup = [], []
    print(f"{'eps':>10} {'L1 gap':>12} {'sup gap':>12} {'max |xi|':>10} {'radius':>10}")
    for e in eps:
        r = sup_convolve(phi, e)
        gap = r.phi_eps.values - phi.values
        l1.append(phi.l1_norm(gap))
        sup.append(float(gap.max()))
        print(f"{e:10.5f} {l1[-1]:12.5e} {sup[-1]:12.5e} {r.argmax_norm.max():10.5f} {r.search_radius:10.5f}")
    for name, vals in (("L1", l1), ("sup", sup)):
        f = fit_rate(eps, vals)
        print(f"{name} slope {f.slope:.4f} (r^2 {f.r_squared:.5f})")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 64)
