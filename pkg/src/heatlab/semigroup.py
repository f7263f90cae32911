"""Heat semigroups, heat kernels, the Szego projector and relative inverses.

Kernel columns use the discrete delta of amplitude 1/h^2, so column values
approximate the continuum kernel density and integrals are h^2-weighted sums.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import splu

from .operators import assemble_box, assemble_first_order

__all__ = [
    "KrylovConvergenceError",
    "CGConvergenceError",
    "SpectralGapError",
    "heat_apply",
    "heat_apply_many",
    "KernelSlice",
    "kernel_column",
    "lowest_eigenpairs",
    "SzegoProjector",
    "szego_projector",
    "g_kernel_column",
    "box_solve",
    "RelativeInverse",
    "rtp_apply",
    "intertwining_residual",
    "duhamel_solve",
    "duhamel_residual",
]

DENSE_MAX = 2500
METHODS = ("krylov", "crank_nicolson", "dense")


class KrylovConvergenceError(RuntimeError):
    pass


class CGConvergenceError(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(f"CG did not converge: {iterations} iterations, relative residual {residual:.3e}")
        self.iterations = iterations
        self.residual = residual


class SpectralGapError(RuntimeError):
    pass


def _matrix(op):
    return op.matrix if hasattr(op, "matrix") else op


# ---------------------------------------------------------------- Krylov

def _lanczos(A, f, s_values, tol, maxdim):
    n = f.size
    beta0 = np.linalg.norm(f)
    s_values = np.asarray(s_values, dtype=float)
    if beta0 == 0:
        return np.zeros((n, s_values.size), dtype=complex)
    maxdim = min(maxdim, n)
    V = np.empty((n, maxdim + 1), dtype=complex)
    V[:, 0] = f / beta0
    alpha = np.empty(maxdim)
    beta = np.empty(maxdim)
    anorm = 0.0
    for m in range(maxdim):
        w = A @ V[:, m]
        c = V[:, : m + 1].conj().T @ w
        w -= V[:, : m + 1] @ c
        c2 = V[:, : m + 1].conj().T @ w
        w -= V[:, : m + 1] @ c2
        alpha[m] = (c[m] + c2[m]).real
        b = np.linalg.norm(w)
        beta[m] = b
        k = m + 1
        anorm = max(anorm, abs(alpha[m]) + b)
        breakdown = b <= 1e-13 * anorm
        if breakdown or k % 4 == 0 or k == maxdim:
            if k == 1:
                ev, U = alpha[:1], np.ones((1, 1))
            else:
                ev, U = eigh_tridiagonal(alpha[:k], beta[: k - 1], lapack_driver="stev")
            Y = U @ (np.exp(-np.outer(ev, s_values)) * U[0][:, None])
            err = b * np.abs(Y[-1])
            if breakdown or np.all(err <= tol * np.linalg.norm(Y, axis=0)):
                return beta0 * (V[:, :k] @ Y)
        V[:, m + 1] = w / b
    raise KrylovConvergenceError(
        f"Lanczos residual estimate {err.max():.3e} above tol {tol:.1e} after {maxdim} steps")


def _si_lanczos(A, f, s_values, tol, maxdim, gamma):
    """Lanczos on (I + gamma A)^{-1}; Ritz values are mapped back to A.

    Convergence is governed by the resolvent rather than by ||A||, which keeps
    stiff operators (strong confining potentials) cheap. The stopping test
    compares successive subspace approximations.
    """
    n = f.size
    beta0 = np.linalg.norm(f)
    s_values = np.asarray(s_values, dtype=float)
    if beta0 == 0:
        return np.zeros((n, s_values.size), dtype=complex)
    lu = splu((sp.identity(n, dtype=complex, format="csc") + gamma * A).tocsc())
    maxdim = min(maxdim, n)
    V = np.empty((n, maxdim + 1), dtype=complex)
    V[:, 0] = f / beta0
    alpha = np.empty(maxdim)
    beta = np.empty(maxdim)
    prev = None
    for m in range(maxdim):
        w = lu.solve(V[:, m])
        c = V[:, : m + 1].conj().T @ w
        w -= V[:, : m + 1] @ c
        c2 = V[:, : m + 1].conj().T @ w
        w -= V[:, : m + 1] @ c2
        alpha[m] = (c[m] + c2[m]).real
        b = np.linalg.norm(w)
        beta[m] = b
        k = m + 1
        breakdown = b <= 1e-14 * np.abs(alpha[:k]).max()
        if breakdown or k % 4 == 0 or k == maxdim:
            if k == 1:
                th, U = alpha[:1], np.ones((1, 1))
            else:
                th, U = eigh_tridiagonal(alpha[:k], beta[: k - 1], lapack_driver="stev")
            lam = (1.0 / np.maximum(th, 1e-300) - 1.0) / gamma
            Y = U @ (np.exp(-np.outer(lam, s_values)) * U[0][:, None])
            if breakdown:
                return beta0 * (V[:, :k] @ Y)
            if prev is not None:
                d = Y.copy()
                d[: prev.shape[0]] -= prev
                if np.all(np.linalg.norm(d, axis=0) <= tol * np.linalg.norm(Y, axis=0)):
                    return beta0 * (V[:, :k] @ Y)
            prev = Y
        V[:, m + 1] = w / b
    raise KrylovConvergenceError(f"shift-invert Lanczos did not reach tol {tol:.1e} in {maxdim} steps")


def _krylov_many(A, f, s_values, tol, maxdim):
    # Gershgorin bound on ||A||; plain Lanczos needs about sqrt(s ||A||) steps
    gersh = float(abs(A).sum(axis=1).max())
    if np.max(s_values) * gersh < 2e4:
        try:
            return _lanczos(A, f, s_values, tol, min(maxdim, 160))
        except KrylovConvergenceError:
            pass
    s_values = np.asarray(s_values, dtype=float)
    out = np.empty((f.size, s_values.size), dtype=complex)
    # one resolvent shift per s keeps the rational approximation accurate
    for i, s in enumerate(s_values):
        out[:, i] = _si_lanczos(A, f, [s], tol, maxdim, gamma=s / 10)[:, 0]
    return out


# ---------------------------------------------------------------- Crank-Nicolson

def _cn_run(A, f, s, nsteps):
    n = f.size
    dt = s / nsteps
    I = sp.identity(n, dtype=complex, format="csc")
    lu = splu((I + 0.5 * dt * A).tocsc())
    explicit = (I - 0.5 * dt * A).tocsr()
    # two implicit Euler half steps damp the stiff part of rough data
    u = lu.solve(lu.solve(f.astype(complex)))
    for _ in range(nsteps - 1):
        u = lu.solve(explicit @ u)
    return u


def _crank_nicolson(A, f, s, tol, n0=16, max_steps=2 ** 15):
    # relative to the result, floored so fully decayed data does not chase roundoff
    floor = max(1e-8 * np.linalg.norm(f), np.finfo(float).tiny)
    prev, n = None, n0
    while n <= max_steps:
        u = _cn_run(A, f, s, n)
        nrm = max(np.linalg.norm(u), floor)
        if prev is not None and np.linalg.norm(u - prev) / nrm < tol:
            return u
        prev, n = u, 2 * n
    raise RuntimeError(f"Crank-Nicolson step control did not reach tol {tol:.1e}")


# ---------------------------------------------------------------- public API

def heat_apply(op, f, s, method="krylov", *, tol=None, maxdim=400):
    """e^{-s op} f.

    ``dense`` uses the cached eigendecomposition of ``op``; ``krylov`` grows a
    fully reorthogonalized Lanczos basis until the last-pole residual estimate
    falls below ``tol`` relative to the result (default 1e-10), switching to a
    shift-invert Lanczos basis when the operator is too stiff for plain steps;
    ``crank_nicolson`` doubles the step count until successive results agree
    to ``tol`` (default 1e-6).
    """
    f = np.asarray(f, dtype=complex)
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s == 0:
        return f.copy()
    if method == "dense":
        w, V = op.eigh()
        return V @ (np.exp(-s * w) * (V.conj().T @ f))
    A = _matrix(op)
    if method == "krylov":
        tol = 1e-10 if tol is None else tol
        return _krylov_many(A, f, [s], tol, maxdim)[:, 0]
    if method == "crank_nicolson":
        tol = 1e-6 if tol is None else tol
        return _crank_nicolson(A, f, s, tol)
    raise ValueError(f"method must be one of {METHODS}")


def heat_apply_many(op, f, s_values, method="krylov", *, tol=None, maxdim=400):
    """e^{-s op} f for several s; returns an array of shape (len(s_values), n)."""
    f = np.asarray(f, dtype=complex)
    s_values = np.asarray(s_values, dtype=float)
    if method == "dense":
        w, V = op.eigh()
        c = V.conj().T @ f
        return (V @ (np.exp(-np.outer(w, s_values)) * c[:, None])).T
    if method == "krylov":
        tol = 1e-10 if tol is None else tol
        return _krylov_many(_matrix(op), f, s_values, tol, maxdim).T
    return np.array([heat_apply(op, f, s, method, tol=tol) for s in s_values])


@dataclass
class KernelSlice:
    kernel_kind: str
    s: float | None
    tau: float
    w_index: int
    values: np.ndarray
    grid: object

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("kernel slice has non-finite values")

    @property
    def w(self):
        return self.grid.points[self.w_index]

    def at(self, z):
        return self.values[self.grid.nearest_index(z)]

    @property
    def filename(self):
        s = "na" if self.s is None else f"{self.s:g}"
        return f"{self.kernel_kind}_tau{self.tau:g}_s{s}.csv"

    def to_csv(self, directory):
        path = Path(directory) / self.filename
        g = self.grid
        x = g.x
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x1", "x2", "re", "im", "s", "tau", "kind"])
            s = "" if self.s is None else repr(float(self.s))
            for flat, v in enumerate(self.values):
                i1, i2 = divmod(flat, g.N)
                wr.writerow([repr(float(x[i1])), repr(float(x[i2])), repr(float(v.real)),
                             repr(float(v.imag)), s, repr(float(self.tau)), self.kernel_kind])
        return path


def _kind_of(op):
    return {"Box": "H", "BoxTilde": "Htilde"}[op.kind]


def kernel_column(op, w_index, s, method="krylov", **kw):
    """Samples of H(s, ., w) (or Htilde) as a KernelSlice."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    vals = heat_apply(op, op.grid.delta(w_index), s, method, **kw)
    return KernelSlice(_kind_of(op), float(s), op.tau, int(w_index), vals, op.grid)


# ---------------------------------------------------------------- Szego projector

def _subspace_iteration(A, k, shift=0.05, tol=1e-10, maxiter=300, seed=0):
    """Lowest k eigenpairs of a Hermitian PSD matrix by block shift-invert iteration.

    Unlike ARPACK this does not stall on tightly graded clusters near zero.
    """
    n = A.shape[0]
    m = min(n, k + max(10, k // 2))
    lu = splu((A + shift * sp.identity(n, format="csc")).tocsc())
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    X, _ = np.linalg.qr(X)
    scale = float(abs(A).max())
    for _ in range(maxiter):
        X, _ = np.linalg.qr(lu.solve(X))
        AX = A @ X
        w, U = np.linalg.eigh(X.conj().T @ AX)
        X, AX = X @ U, AX @ U
        res = np.linalg.norm(AX[:, :k] - X[:, :k] * w[:k], axis=0)
        if res.max() <= tol * scale:
            break
    return w[:k], X[:, :k]


def lowest_eigenpairs(op, k):
    """The k smallest eigenpairs, ascending."""
    n = op.shape[0]
    k = min(k, n)
    if n <= DENSE_MAX:
        w, V = op.eigh()
        return w[:k], V[:, :k]
    return _subspace_iteration(op.matrix.tocsc(), k)


def _gap(w, scale, ratio):
    floor = 1e3 * np.finfo(float).eps * scale
    lw = np.log10(np.maximum(w, floor))
    r = np.diff(lw)
    i = int(np.argmax(r))
    if 10 ** r[i] < ratio:
        raise SpectralGapError("no spectral gap detected")
    return i, 10 ** r[i]


class SzegoProjector:
    """Orthogonal projector onto the near-null eigenspace of a BoxTilde operator."""

    def __init__(self, op, basis, eigenvalues, gap_value, gap_ratio):
        self.op = op
        self.basis = basis
        self.eigenvalues = eigenvalues
        self.gap_value = gap_value
        self.gap_ratio = gap_ratio

    @property
    def rank(self):
        return self.basis.shape[1]

    def apply(self, f):
        V = self.basis
        return V @ (V.conj().T @ f)

    def complement(self, f):
        return f - self.apply(f)

    def matrix(self):
        V = self.basis
        return V @ V.conj().T

    def kernel_column(self, w_index):
        V = self.basis
        vals = V @ V[w_index].conj() / self.op.grid.h ** 2
        return KernelSlice("Szego", None, self.op.tau, int(w_index), vals, self.op.grid)


def szego_projector(op_tilde, eig_tol=0.1, *, k=None, ratio=10.0, k_max=128):
    """Projector onto eigenvectors with eigenvalue < eig_tol * (first eigenvalue above the gap).

    On grids too large for a dense solve the search widens from ``k`` lowest
    pairs up to ``k_max`` and raises SpectralGapError if no gap of ``ratio``
    shows up below that.
    """
    if op_tilde.kind != "BoxTilde":
        raise ValueError("the Szego projector is built from a BoxTilde operator")
    if eig_tol <= 0:
        raise ValueError("eig_tol must be positive")
    n = op_tilde.shape[0]
    dense = n <= DENSE_MAX
    k = n if dense else min(k or 64, k_max, n - 2)
    while True:
        w, V = lowest_eigenpairs(op_tilde, k)
        try:
            i, r = _gap(w, op_tilde.scale, ratio)
        except SpectralGapError:
            if dense or k >= min(k_max, n - 2):
                raise SpectralGapError(f"no eigenvalue gap of ratio {ratio:g} among the lowest "
                                       f"{k} eigenvalues") from None
            k = min(2 * k, k_max, n - 2)
            continue
        if i < k - 2 or dense or k >= min(k_max, n - 2):
            break
        k = min(2 * k, k_max, n - 2)
    above = w[i + 1]
    keep = w < eig_tol * above
    return SzegoProjector(op_tilde, V[:, keep], w[keep], float(above), float(r))


def g_kernel_column(op_tilde, S, w_index, s, method="krylov", **kw):
    """Column of e^{-s BoxTilde}(I - S)."""
    d = op_tilde.grid.delta(w_index)
    vals = heat_apply(op_tilde, S.complement(d), s, method, **kw)
    return KernelSlice("Gtilde", float(s), op_tilde.tau, int(w_index), vals, op_tilde.grid)


# ---------------------------------------------------------------- solves

def box_solve(op, f, *, tol=1e-10, maxiter=None, deflation=None, restarts=4):
    """Conjugate gradients for op u = f.

    With an orthonormal ``deflation`` basis Q the solve runs on the complement
    of span(Q): (I - QQ^H) op (I - QQ^H) u = (I - QQ^H) f, u orthogonal to Q.
    """
    A = _matrix(op)
    f = np.asarray(f, dtype=complex)
    n = f.size
    if deflation is not None:
        Q = deflation
        P = lambda v: v - Q @ (Q.conj().T @ v)
        mv = lambda v: P(A @ P(v))
        rhs = P(f)
    else:
        mv = lambda v: A @ v
        rhs = f
    L = spla.LinearOperator((n, n), matvec=mv, dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1
    nb = np.linalg.norm(rhs)
    if nb == 0:
        return np.zeros(n, dtype=complex)
    # restarts from the current iterate recover from drift of the recursive residual
    u = None
    for _ in range(restarts + 1):
        u, info = spla.cg(L, rhs, x0=u, rtol=tol, atol=0.0, maxiter=maxiter or 20 * n,
                          callback=cb)
        res = np.linalg.norm(mv(u) - rhs) / nb
        if info == 0 and res <= 10 * tol:
            break
    if info != 0 or res > 10 * tol:
        raise CGConvergenceError(count[0], res)
    if deflation is not None:
        u = P(u)
    return u


class RelativeInverse:
    """R = -Z G with G the inverse of the factored Box on the complement of its
    near-null cluster, so that R Zbar = I - S and Zbar R = I on range(Zbar)."""

    def __init__(self, p, tau, grid, szego=None, tol=1e-8):
        self.grid = grid
        self.tilde = assemble_box(p, tau, grid, "BoxTilde", "factored")
        self.box = assemble_box(p, tau, grid, "Box", "factored")
        self.S = szego if szego is not None else szego_projector(self.tilde)
        self.Zbar = assemble_first_order(p, tau, grid, "Zbar").matrix
        self.Z = assemble_first_order(p, tau, grid, "Z").matrix
        _, Q = lowest_eigenpairs(self.box, self.S.rank)
        self.Q = Q
        self.tol = tol

    def G(self, f):
        return box_solve(self.box, f, tol=self.tol, deflation=self.Q)

    def apply(self, f):
        return -(self.Z @ self.G(f))

    def kernel_column(self, w_index):
        vals = self.apply(self.grid.delta(w_index))
        return KernelSlice("R", None, self.box.tau, int(w_index), vals, self.grid)


def rtp_apply(p, tau, grid, f, *, inverse=None):
    inv = inverse or RelativeInverse(p, tau, grid)
    return inv.apply(f)


def intertwining_residual(p, tau, grid, w_index, s, *, szego=None, method="dense"):
    """Relative mismatch of Zbar_z Gtilde(s, z, w) and -Wbar_w H(s, z, w) over all z.

    Both kernels come from the factored discretization; Wbar acts on the
    source variable through the stencil row of Wbar at w.
    """
    BT = assemble_box(p, tau, grid, "BoxTilde", "factored")
    B = assemble_box(p, tau, grid, "Box", "factored")
    S = szego if szego is not None else szego_projector(BT)
    Zb = assemble_first_order(p, tau, grid, "Zbar").matrix
    Wb = assemble_first_order(p, tau, grid, "Wbar").matrix.tocsr()
    lhs = Zb @ g_kernel_column(BT, S, w_index, s, method).values
    row = Wb.getrow(w_index)
    rhs = np.zeros(grid.size, dtype=complex)
    for v, c in zip(row.indices, row.data):
        rhs -= c * kernel_column(B, v, s, method).values
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))


# ---------------------------------------------------------------- Duhamel

def duhamel_solve(op, f0, g, s, steps=16, *, method="dense", order=8):
    """u(s) = e^{-s op} f0 + int_0^s e^{-(s-r) op} g(r) dr.

    The time integral uses composite Gauss-Legendre with ``steps`` panels of
    ``order`` nodes each; ``g`` is a callback r -> field (or None).
    """
    if steps < 4:
        raise ValueError("need at least 4 panels")
    u = heat_apply(op, f0, s, method)
    if g is None or s == 0:
        return u
    x, wq = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, s, steps + 1)
    acc = np.zeros_like(u)
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        for xi, wi in zip(x, wq):
            r = half * xi + 0.5 * (a + b)
            acc += (half * wi) * heat_apply(op, np.asarray(g(r), dtype=complex), s - r, method)
    return u + acc


def duhamel_residual(op, f0, g, s, ds=1e-3, **kw):
    """||du/ds + op u - g(s)|| / ||g(s)|| with a central difference in s."""
    up = duhamel_solve(op, f0, g, s + ds, **kw)
    um = duhamel_solve(op, f0, g, s - ds, **kw)
    u = duhamel_solve(op, f0, g, s, **kw)
    gs = np.asarray(g(s), dtype=complex)
    r = (up - um) / (2 * ds) + _matrix(op) @ u - gs
    return float(np.linalg.norm(r) / np.linalg.norm(gs))
