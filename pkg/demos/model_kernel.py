"""Heat kernel of the polynomial model in the t variable.

Assembles H(s, z, w, t) by the windowed tau-quadrature of the slice kernels
and checks it against itself on a refined quadrature. Small grid, so it runs
in well under a minute.
"""
import argparse
from pathlib import Path

import numpy as np

from heatlab.model import ModelKernel, TauQuadrature, boxb_kernel
from heatlab.operators import make_grid
from heatlab.plots import line_svg
from heatlab.weights import preset, twist_T


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--s", type=float, default=1.0)
    ap.add_argument("--N", type=int, default=32)
    ap.add_argument("--out", type=Path, default=Path("demos_out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    p = preset("abs2")
    g = make_grid(3.0, args.N)
    km = ModelKernel(p, g)
    z, w = 0.5 + 0.6j, -0.6 - 0.4j
    ts = np.linspace(-4, 4, 33)
    q = TauQuadrature(16.0, 65)
    coarse = boxb_kernel(p, args.s, z, w, ts, q, g, kernel=km, check_tail=False)
    fine = boxb_kernel(p, args.s, z, w, ts, q.refined(), g, kernel=km, check_tail=False)
    print(f"T(w, z) = {float(twist_T(p, w, z)):.3f}; |H| is largest at t = {ts[np.argmax(np.abs(fine))]:.2f}")
    print(f"quadrature self-convergence {np.max(np.abs(coarse - fine)) / np.max(np.abs(fine)):.1e}")
    path = line_svg(args.out / "model_kernel.svg", {"|H|": (ts, np.abs(fine)), "Re H": (ts, fine.real)},
                    title=f"H(s, z, w, t), s={args.s:g}", xlabel="t", ylabel="value")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
