"""How the cancellation ratio depends on the bump radius.

For bumps smaller than the heat scale s^{1/2} the left side
|e^{-s Box}[phi](z)| grows like the area of the bump while the Sobolev-type
right side stays of order one, so the ratio shrinks with delta. The script
prints both sides and lhs / delta^2, which is nearly flat for (0, 0) and
(1, 0); the (0, 1) column shows a slower, delta-dependent growth.
"""
import argparse

import numpy as np

from heatlab.bounds import DerivativeSpec, cancellation_sweep
from heatlab.operators import make_grid
from heatlab.weights import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--s", type=float, default=1.0)
    ap.add_argument("--N", type=int, default=64)
    args = ap.parse_args()
    g = make_grid(3.0, args.N)
    for n, ell in ((0, 0), (0, 1), (1, 0)):
        res, spread = cancellation_sweep(preset("abs2"), 1.0, g, 0, DerivativeSpec.from_counts(n, ell),
                                         args.s, factors=(0.25, 0.35, 0.5, 0.7, 1.0))
        print(f"(n, l) = ({n}, {ell})   max/min ratio {spread:.2f}")
        for r in res:
            print(f"   delta={r.delta:.3f}  lhs={r.lhs:.3e}  rhs={r.rhs:.3e}  ratio={r.ratio:.3e}"
                  f"  lhs/delta^2={r.lhs / r.delta ** 2:.3e}")


if __name__ == "__main__":
    main()
