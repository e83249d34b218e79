"""The Hessian floor on the round sphere.

The sphere is homogeneous, so each translate of an admissible function along a
geodesic is realised by a rotation, and the sup-convolution is a supremum of
admissible functions. The minimal slack therefore stays at zero for every eps,
and at large enough eps a slightly non-admissible input comes out admissible.

Run: python demos/p1_floor.py
"""
from hesslab.field import minimal_slack
from hesslab.scenarios import p1_max
from hesslab.supconv import sup_convolve


def main():
    for amp in (0.8, 1.05):
        sc = p1_max(33, amp)
        phi = sc.build()
        print(f"amp {amp}: input slack {minimal_slack(phi, sc.cone):.4f}")
        for e in (0.05, 0.02, 0.01):
            out = sup_convolve(phi, e).phi_eps
            print(f"  eps {e:<5} slack after sup-convolution {minimal_slack(out, sc.cone):.4e}")


if __name__ == "__main__":
    main()
