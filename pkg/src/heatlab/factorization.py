"""Heat kernels for decoupled weights P(z_1..z_n) = sum_k p_k(z_k).

For a form index J the Laplacian acts as Box on the axes in J and as BoxTilde
on the others, and the kernel factors as a product of one-variable kernels.
A direct exponential of the Kronecker sum on a small tensor grid serves as the
reference.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import reduce
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .operators import assemble_box
from .parallel import pmap
from .semigroup import heat_apply

__all__ = [
    "DecoupledWeight",
    "FormIndex",
    "form_indices",
    "component_kind",
    "DEFAULT_FORMS",
    "ProductKernel",
    "product_kernel",
    "kronecker_factors",
    "tensor_kernel",
    "box_D_apply",
    "StateTooLarge",
    "write_samples_csv",
]

MAX_N = 3
DEFAULT_FORMS = {"Box": "schrodinger", "BoxTilde": "factored"}


class StateTooLarge(MemoryError):
    pass


@dataclass(frozen=True)
class DecoupledWeight:
    parts: tuple
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not 1 <= len(self.parts) <= MAX_N:
            raise ValueError(f"need 1 <= n <= {MAX_N} parts")
        # every part is a validated WeightPolynomial, so subharmonic and nonharmonic
        if any(not hasattr(p, "degree") for p in self.parts):
            raise TypeError("parts must be WeightPolynomial instances")

    @property
    def n(self):
        return len(self.parts)


@dataclass(frozen=True)
class FormIndex:
    n: int
    J: tuple = field(default_factory=tuple)

    def __post_init__(self):
        J = tuple(int(j) for j in self.J)
        object.__setattr__(self, "J", J)
        if any(b <= a for a, b in zip(J, J[1:])):
            raise ValueError("J must be strictly increasing")
        if any(j < 1 or j > self.n for j in J):
            raise ValueError(f"entries of J must lie in 1..{self.n}")

    @property
    def q(self):
        return len(self.J)


def form_indices(n, q):
    return [FormIndex(n, J) for J in combinations(range(1, n + 1), q)]


def component_kind(J, k):
    if not 1 <= k <= J.n:
        raise ValueError(f"axis {k} out of range 1..{J.n}")
    return "Box" if k in J.J else "BoxTilde"


def _axis_ops(weights, J, grids, forms):
    forms = forms or DEFAULT_FORMS
    ops = []
    for k, (p, g) in enumerate(zip(weights.parts, grids), start=1):
        kind = component_kind(J, k)
        ops.append(assemble_box(p, weights.tau, g, kind, forms[kind]))
    return ops


class ProductKernel:
    """Evaluates prod_k K_k(s, z_k, w_k) with bilinear interpolation per axis."""

    def __init__(self, weights, J, s, grids, *, forms=None, method="krylov"):
        if s <= 0:
            raise ValueError("s must be positive")
        if len(grids) != weights.n or J.n != weights.n:
            raise ValueError("need one grid per part and a matching form index")
        self.weights, self.J, self.s, self.grids = weights, J, float(s), list(grids)
        self.ops = _axis_ops(weights, J, grids, forms)
        self.method = method
        self._cols = [dict() for _ in grids]

    def _column(self, k, idx):
        cache = self._cols[k]
        if idx not in cache:
            g = self.grids[k]
            cache[idx] = heat_apply(self.ops[k], g.delta(idx), self.s, self.method)
        return cache[idx]

    def _stencil(self, g, z):
        z = complex(z)
        lim = 0.8 * g.R
        if abs(z.real) > lim + 1e-12 or abs(z.imag) > lim + 1e-12:
            raise ValueError(f"point {z} outside the interpolation trust region |x| <= {lim}")
        u1, u2 = (z.real + g.R) / g.h, (z.imag + g.R) / g.h
        i1, i2 = min(int(np.floor(u1)), g.N - 2), min(int(np.floor(u2)), g.N - 2)
        a, b = u1 - i1, u2 - i2
        out = []
        for d1, w1 in ((0, 1 - a), (1, a)):
            for d2, w2 in ((0, 1 - b), (1, b)):
                if w1 * w2 != 0:
                    out.append((g.index(i1 + d1, i2 + d2), w1 * w2))
        return out

    def axis_value(self, k, zk, wk):
        g = self.grids[k]
        zs, ws = self._stencil(g, zk), self._stencil(g, wk)
        total = 0j
        for wi, ww in ws:
            col = self._column(k, wi)
            total += ww * sum(wz * col[zi] for zi, wz in zs)
        return total

    def __call__(self, z, w):
        z, w = tuple(z), tuple(w)
        if len(z) != self.weights.n or len(w) != self.weights.n:
            raise ValueError("z and w need one coordinate per part")
        vals = pmap(lambda k: self.axis_value(k, z[k], w[k]), range(self.weights.n))
        return complex(reduce(lambda x, y: x * y, vals, 1 + 0j))


def product_kernel(weights, J, s, z, w, grids, **kw):
    return ProductKernel(weights, J, s, grids, **kw)(z, w)


def kronecker_factors(weights, J, grids, forms=None):
    """Each axis operator lifted to the tensor grid (I x ... x A_k x ... x I)."""
    ops = _axis_ops(weights, J, grids, forms)
    sizes = [g.size for g in grids]
    lifted = []
    for k, op in enumerate(ops):
        mats = [sp.identity(m, format="csr", dtype=complex) for m in sizes]
        mats[k] = op.matrix
        lifted.append(reduce(lambda a, b: sp.kron(a, b, format="csr"), mats))
    return lifted


def tensor_kernel(weights, J, s, w_idx, grids, forms=None, max_state=2 ** 17):
    """Column of exp(-s sum_k A_k) on the full tensor grid at source w_idx.

    Returns an array of shape (size_1, ..., size_n).
    """
    sizes = [g.size for g in grids]
    total = int(np.prod(sizes))
    if total > max_state:
        raise StateTooLarge(f"tensor state of size {total} exceeds cap {max_state}")
    L = reduce(lambda a, b: a + b, kronecker_factors(weights, J, grids, forms))
    src = np.zeros(sizes, dtype=complex)
    src[tuple(w_idx)] = np.prod([1 / g.h ** 2 for g in grids])
    out = expm_multiply(-s * L.tocsr(), src.ravel())
    return out.reshape(sizes)


def box_D_apply(weights, q, coeffs, s, grids, *, forms=None, max_state=2 ** 20):
    """Apply exp(-s Box_J) to each coefficient of a q-form, axis by axis.

    ``coeffs`` maps J (tuple or FormIndex) to an array of shape
    (size_1, ..., size_n); missing coefficients are zero.
    """
    n = weights.n
    sizes = tuple(g.size for g in grids)
    if int(np.prod(sizes)) > max_state:
        raise StateTooLarge(f"state size {int(np.prod(sizes))} exceeds cap {max_state}")
    if not 0 <= q <= n:
        raise ValueError("form degree out of range")
    keys = {J.J: J for J in form_indices(n, q)}
    given = {}
    for J, F in coeffs.items():
        J = J.J if isinstance(J, FormIndex) else tuple(J)
        if J not in keys:
            raise ValueError(f"{J} is not an increasing {q}-tuple in 1..{n}")
        given[J] = np.asarray(F, dtype=complex).reshape(sizes)
    out = {}
    for Jt, J in keys.items():
        F = given.get(Jt)
        if F is None or not np.any(F):
            out[Jt] = np.zeros(sizes, dtype=complex)
            continue
        for k, op in enumerate(_axis_ops(weights, J, grids, forms)):
            w, V = op.eigh()
            E = (V * np.exp(-s * w)) @ V.conj().T
            F = np.moveaxis(np.tensordot(E, F, axes=([1], [k])), 0, k)
        out[Jt] = F
    return out


def write_samples_csv(path, rows):
    """rows: iterable of (z_tuple, w_tuple, value)."""
    rows = list(rows)
    if not rows:
        raise ValueError("no samples")
    n = len(rows[0][0])
    head = [f"z{k}_{c}" for k in range(1, n + 1) for c in ("re", "im")]
    head += [f"w{k}_{c}" for k in range(1, n + 1) for c in ("re", "im")]
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(head + ["re", "im"])
        for z, w, v in rows:
            vals = [x for zk in z for x in (complex(zk).real, complex(zk).imag)]
            vals += [x for wk in w for x in (complex(wk).real, complex(wk).imag)]
            wr.writerow([repr(float(x)) for x in vals + [complex(v).real, complex(v).imag]])
    return path
