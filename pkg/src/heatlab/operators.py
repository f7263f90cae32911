"""Finite-difference discretization of the weighted first-order operators and Laplacians.

Grid: [-R, R]^2 with N points per axis, spacing h = 2R/(N-1). The flat index of
the point x1 = x[i1], x2 = x[i2] is ``i1 * N + i2`` (row-major, x1 slowest).
Dirichlet truncation is imposed through a zero ghost layer just outside the
grid, so every grid point is an unknown and all stencils are centered.

Two discretizations of the Laplacians are provided:

``factored``
    the literal products -Zbar Z and -Z Zbar of centered first-order stencils.
    On this grid Z = -Zbar^H holds exactly, so both products are exactly
    positive semidefinite and share their nonzero spectrum.
``schrodinger``
    -1/4 (5-point Laplacian) + symmetric magnetic coupling + 1/4 |a|^2 +- V/2
    with a = tau (-p_x2, p_x1) and V = (tau/2) Delta p.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .weights import ajk, e_fn, twist_T

__all__ = [
    "GridSpec",
    "make_grid",
    "DiscreteOperator",
    "assemble_first_order",
    "assemble_box",
    "flip_x1",
    "reflect_weight",
    "commutator_residual",
    "export_coo",
    "gaussian_bump",
]

FIRST_ORDER = ("Zbar", "Z", "Wbar", "W")
BOX_KINDS = ("Box", "BoxTilde")
FORMS = ("factored", "schrodinger")


@dataclass(frozen=True)
class GridSpec:
    R: float
    N: int

    @property
    def h(self):
        return 2 * self.R / (self.N - 1)

    @property
    def size(self):
        return self.N * self.N

    @property
    def x(self):
        return np.linspace(-self.R, self.R, self.N)

    @property
    def weight(self):
        """Quadrature weight per point."""
        return self.h ** 2

    @property
    def points(self):
        x = self.x
        return (x[:, None] + 1j * x[None, :]).ravel()

    def index(self, i1, i2):
        return int(i1) * self.N + int(i2)

    def unravel(self, flat):
        return divmod(int(flat), self.N)

    def nearest_index(self, z):
        z = complex(z)
        i1 = int(round((z.real + self.R) / self.h))
        i2 = int(round((z.imag + self.R) / self.h))
        if not (0 <= i1 < self.N and 0 <= i2 < self.N):
            raise ValueError(f"point {z} lies outside the grid")
        return self.index(i1, i2)

    def delta(self, flat):
        v = np.zeros(self.size, dtype=complex)
        v[flat] = 1.0 / self.h ** 2
        return v

    def inner(self, u, v):
        return np.vdot(u, v) * self.h ** 2

    def to_json(self):
        return {"R": self.R, "N": self.N}


def make_grid(R, N):
    R = float(R)
    if not np.isfinite(R) or R <= 0:
        raise ValueError("grid radius must be finite and positive")
    if int(N) != N or N < 8:
        raise ValueError("need at least 8 points per axis")
    return GridSpec(R, int(N))


@lru_cache(maxsize=32)
def _stencils(R, N):
    h = 2 * R / (N - 1)
    I = sp.identity(N, format="csr")
    D = sp.diags([-np.ones(N - 1), np.ones(N - 1)], [-1, 1], format="csr") / (2 * h)
    L = sp.diags([np.ones(N - 1), -2 * np.ones(N), np.ones(N - 1)], [-1, 0, 1], format="csr") / h ** 2
    Dx = sp.kron(D, I, format="csr")
    Dy = sp.kron(I, D, format="csr")
    Lap = (sp.kron(L, I) + sp.kron(I, L)).tocsr()
    return Dx, Dy, Lap


def _wirtinger(grid):
    Dx, Dy, _ = _stencils(grid.R, grid.N)
    dz = (0.5 * (Dx - 1j * Dy)).tocsr()
    dzb = (0.5 * (Dx + 1j * Dy)).tocsr()
    return dz, dzb


class DiscreteOperator:
    """Sparse operator on a grid together with its provenance."""

    def __init__(self, kind, matrix, *, tau, weight, grid, form=None, sym_defect=0.0):
        self.kind = kind
        self.form = form
        self.tau = float(tau)
        self.weight = weight
        self.grid = grid
        self.matrix = matrix.tocsr()
        self.sym_defect = float(sym_defect)
        self.boundary = "dirichlet"

    def __repr__(self):
        f = f", form={self.form}" if self.form else ""
        return f"DiscreteOperator({self.kind}{f}, tau={self.tau}, N={self.grid.N}, R={self.grid.R})"

    def __matmul__(self, v):
        return self.matrix @ v

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def scale(self):
        return float(np.abs(self.matrix.data).max(initial=0.0))

    def dense(self):
        return self.matrix.toarray()

    @cached_property
    def _eigh(self):
        w, V = np.linalg.eigh(self.dense())
        w.setflags(write=False)
        V.setflags(write=False)
        return w, V

    def eigh(self):
        """Full eigendecomposition, computed once and cached."""
        return self._eigh

    def hermiticity_defect(self):
        M = self.matrix
        return float(abs(M - M.conj().T).max()) if M.nnz else 0.0


def assemble_first_order(p, tau, grid, kind):
    if kind not in FIRST_ORDER:
        raise ValueError(f"kind must be one of {FIRST_ORDER}")
    dz, dzb = _wirtinger(grid)
    Z = grid.points
    pz = sp.diags(ajk(p, Z, 1, 0))
    pzb = sp.diags(ajk(p, Z, 0, 1))
    M = {"Zbar": dzb + tau * pzb,
         "Z": dz - tau * pz,
         "Wbar": dzb - tau * pzb,
         "W": dz + tau * pz}[kind]
    return DiscreteOperator(kind, M, tau=tau, weight=p, grid=grid)


def _schrodinger(p, tau, grid, sign):
    Dx, Dy, Lap = _stencils(grid.R, grid.N)
    Z = grid.points
    pz = ajk(p, Z, 1, 0)
    px1, px2 = 2 * pz.real, -2 * pz.imag
    a1, a2 = -tau * px2, tau * px1
    A1, A2 = sp.diags(a1), sp.diags(a2)
    V = 2 * tau * ajk(p, Z, 1, 1).real
    mag = 0.25j * (A1 @ Dx + Dx @ A1 + A2 @ Dy + Dy @ A2)
    return -0.25 * Lap + mag + sp.diags(0.25 * (a1 ** 2 + a2 ** 2) + sign * 0.5 * V)


def assemble_box(p, tau, grid, variant="Box", form="factored"):
    if variant not in BOX_KINDS:
        raise ValueError(f"variant must be one of {BOX_KINDS}")
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if form == "factored":
        Zb = assemble_first_order(p, tau, grid, "Zbar").matrix
        Zo = assemble_first_order(p, tau, grid, "Z").matrix
        raw = -(Zb @ Zo) if variant == "Box" else -(Zo @ Zb)
    else:
        raw = _schrodinger(p, tau, grid, +1 if variant == "Box" else -1)
    raw = raw.tocsr()
    adj = raw.conj().T.tocsr()
    defect = abs(raw - adj).max() if raw.nnz else 0.0
    M = ((raw + adj) * 0.5).tocsr()
    M.eliminate_zeros()
    return DiscreteOperator(variant, M, tau=tau, weight=p, grid=grid, form=form,
                            sym_defect=float(defect))


def flip_x1(grid):
    """Permutation matrix of the grid mirror x1 -> -x1."""
    N = grid.N
    i1, i2 = np.divmod(np.arange(grid.size), N)
    perm = (N - 1 - i1) * N + i2
    return sp.csr_matrix((np.ones(grid.size), (np.arange(grid.size), perm)),
                         shape=(grid.size, grid.size))


def reflect_weight(p):
    """The weight p(-x1, x2) that intertwines Box_{-tau p} with BoxTilde."""
    return p.mirrored()


def gaussian_bump(grid, center=0.0, width=0.7, tilt=0.3):
    """Smooth, rapidly decaying complex test field."""
    Z = grid.points
    return np.exp(-np.abs(Z - center) ** 2 / width ** 2) * (1 + tilt * 1j * Z.real)


def _twist_diff(family, T, tau0, dtau):
    """Twisted central difference e^{i tau T} d/dtau (e^{-i tau T} F(tau)) at tau0."""
    fp, fm = family(tau0 + dtau), family(tau0 - dtau)
    ph_p = np.exp(-1j * dtau * T)
    ph_m = np.exp(1j * dtau * T)
    return (ph_p * fp - ph_m * fm) / (2 * dtau)


def commutator_residual(p, tau, grid, identity, f, *, w=0j, form="factored", dtau=1e-4):
    """Relative residual ||LHS f - RHS f|| / ||f|| of one commutator identity.

    (a) [Box, Zbar] = -2 tau d^3p/dz dzbar^2 - 2 tau p_{z zbar} Zbar
    (b) [Box, Z]    =  2 tau p_{z zbar} Z
    (c) [Box, M]    = -p_{z zbar} - e Z + conj(e) Zbar
    (d) [M, Zbar]   = -e
    (e) [M, Z]      =  conj(e)
    M is the twisted tau-derivative anchored at w, realised by a twisted
    central difference in tau; f is taken independent of tau.
    """
    Z = grid.points
    a11 = ajk(p, Z, 1, 1)
    box = lambda t: assemble_box(p, t, grid, "Box", form).matrix
    zbar = lambda t: assemble_first_order(p, t, grid, "Zbar").matrix
    zop = lambda t: assemble_first_order(p, t, grid, "Z").matrix
    if identity in ("a", "b"):
        B = box(tau)
        if identity == "a":
            Zb = zbar(tau)
            lhs = B @ (Zb @ f) - Zb @ (B @ f)
            rhs = -2 * tau * 2 * ajk(p, Z, 1, 2) * f - 2 * tau * a11 * (Zb @ f)
        else:
            Zo = zop(tau)
            lhs = B @ (Zo @ f) - Zo @ (B @ f)
            rhs = 2 * tau * a11 * (Zo @ f)
    elif identity in ("c", "d", "e"):
        T = twist_T(p, w, Z)
        e = e_fn(p, w, Z)
        Mf = _twist_diff(lambda t: f, T, tau, dtau)
        if identity == "c":
            lhs = box(tau) @ Mf - _twist_diff(lambda t: box(t) @ f, T, tau, dtau)
            rhs = -a11 * f - e * (zop(tau) @ f) + np.conj(e) * (zbar(tau) @ f)
        elif identity == "d":
            lhs = _twist_diff(lambda t: zbar(t) @ f, T, tau, dtau) - zbar(tau) @ Mf
            rhs = -e * f
        else:
            lhs = _twist_diff(lambda t: zop(t) @ f, T, tau, dtau) - zop(tau) @ Mf
            rhs = np.conj(e) * f
    else:
        raise ValueError("identity must be one of a, b, c, d, e")
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(f))


def export_coo(op, path):
    """Write (row, col, re, im) lines, one per stored entry."""
    M = op.matrix.tocoo()
    order = np.lexsort((M.col, M.row))
    path = Path(path)
    with path.open("w") as fh:
        fh.write("row,col,re,im\n")
        for r, c, v in zip(M.row[order], M.col[order], M.data[order]):
            fh.write(f"{r},{c},{float(v.real)!r},{float(v.imag)!r}\n")
    return path
