"""Lattice heat kernel for p = |z|^2 against the closed-form Landau (Mehler) kernel.

For the constant field B = 4 tau the magnitude of the kernel is
tau e^{-tau s} / (pi sinh(tau s)) exp(-tau coth(tau s) |z - w|^2); the script
prints the relative error on the diagonal for a few grids and writes a radial
profile plot.
"""
import argparse
from pathlib import Path

import numpy as np

from heatlab.operators import assemble_box, make_grid
from heatlab.plots import line_svg
from heatlab.semigroup import kernel_column
from heatlab.weights import preset


def mehler_abs(s, d, tau):
    return tau * np.exp(-tau * s) / (np.pi * np.sinh(tau * s)) * np.exp(-tau / np.tanh(tau * s) * d ** 2)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--s", type=float, default=0.5)
    ap.add_argument("--out", type=Path, default=Path("demos_out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    p = preset("abs2")
    series = {}
    for N in (32, 64, 96):
        g = make_grid(4.0, N)
        op = assemble_box(p, args.tau, g, "Box", "schrodinger")
        w = g.nearest_index(0)
        col = kernel_column(op, w, args.s).values
        d = np.abs(g.points - g.points[w])
        exact = mehler_abs(args.s, d, args.tau)
        err = abs(abs(col[w]) - exact[w]) / exact[w]
        print(f"N={N:3d} h={g.h:.3f}  |H(s,w,w)| = {abs(col[w]):.5f}  exact {exact[w]:.5f}  rel err {err:.2e}")
        # profile along the x1 axis through w
        i1, i2 = g.unravel(w)
        line = np.array([g.index(i, i2) for i in range(g.N)])
        series[f"N={N}"] = (g.x - g.x[i1], np.abs(col[line]))
    r = np.linspace(0, 2.5, 200)
    series["Mehler"] = (r, mehler_abs(args.s, r, args.tau))
    for label in list(series):
        x, y = series[label]
        keep = (x >= 0) & (x <= 2.5)
        series[label] = (x[keep], y[keep])
    path = line_svg(args.out / "landau_profile.svg", series, title=f"|H(s, x, 0)|, s={args.s:g}",
                    xlabel="x", ylabel="|H|", logy=True)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
