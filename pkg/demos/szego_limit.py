"""Long-time behaviour of e^{-s BoxTilde}: convergence to the Szego projector.

Prints the low spectrum of the factored BoxTilde (showing the gap the
projector is cut at), then the distance ||e^{-s BoxTilde} f - S f|| / ||f||
for growing s and the diagonal S(0, 0) next to its planar value 2 tau / pi.
The distance levels off at the weight of f on the first modes above the gap,
whose eigenvalues are tiny but nonzero and so decay only on very long times.
"""
import argparse
from pathlib import Path

import numpy as np

from heatlab.operators import assemble_box, gaussian_bump, make_grid
from heatlab.plots import line_svg
from heatlab.semigroup import heat_apply, szego_projector
from heatlab.weights import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--N", type=int, default=40)
    ap.add_argument("--out", type=Path, default=Path("demos_out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    g = make_grid(3.0, args.N)
    BT = assemble_box(preset("abs2"), args.tau, g, "BoxTilde", "factored")
    S = szego_projector(BT)
    w, _ = BT.eigh()
    print("lowest eigenvalues:", np.array2string(w[: S.rank + 4], precision=2))
    print(f"projector rank {S.rank}, gap ratio {S.gap_ratio:.0f}")

    f = gaussian_bump(g)
    s_grid = np.array([0.5, 1, 2, 4, 8, 16, 32, 64])
    dist = [np.linalg.norm(heat_apply(BT, f, s, "dense") - S.apply(f)) / np.linalg.norm(f) for s in s_grid]
    for s, d in zip(s_grid, dist):
        print(f"s={s:5.1f}  ||e^(-s BoxTilde) f - S f|| / ||f|| = {d:.2e}")
    i0 = g.nearest_index(0)
    print(f"S(0,0) = {S.kernel_column(i0).values[i0].real:.4f}, planar value {2 * args.tau / np.pi:.4f}")
    path = line_svg(args.out / "szego_limit.svg", {"distance": (s_grid, dist)},
                    title="approach to the Szego projector", xlabel="s", ylabel="relative distance",
                    logy=True)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
