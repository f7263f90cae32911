"""Empirical witnesses for the Gaussian, Szego and cancellation estimates.

Kernel values and their derivatives are sampled on a grid and an envelope
``C * exp(base - c * rate)`` (or a max-form variant) is fitted: the largest
decay rate ``c`` such that every sample lies under the envelope with ``C`` at
most ``kappa`` times the best constant available at ``c = 0``.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .operators import assemble_box, assemble_first_order
from .parallel import pmap
from .semigroup import (RelativeInverse, box_solve, heat_apply, heat_apply_many,
                        szego_projector)
from .weights import ajk, e_fn, lambda_big, mu, twist_T

__all__ = [
    "DerivativeSpec",
    "BoundReport",
    "fit_envelope",
    "twisted_tau_derivative",
    "KernelBlockEvaluator",
    "KernelSamples",
    "kernel_samples",
    "fit_gaussian_bound",
    "fit_gtilde_bound",
    "bump",
    "CancellationResult",
    "cancellation_probe",
    "cancellation_sweep",
    "g_cancellation_probe",
    "preliminary_inequalities",
    "min_identity_check",
    "c_stability",
    "truncation_radius",
    "TruncationWarning",
]

SPACE_OPS = ("Zbar_z", "Z_z", "Wbar_w", "W_w")
OPS = SPACE_OPS + ("M",)
KINDS = ("H", "Htilde", "Gtilde", "Szego", "R")
C_MIN = 0.01
MIN_SAMPLES = 20


class TruncationWarning(UserWarning):
    """The box is smaller than the Gaussian truncation rule asks for."""


def truncation_radius(points, s_max):
    """Smallest R with R >= |z|, |w| + 6 s_max^{1/2} for all sampled points."""
    return float(np.max(np.abs(np.asarray(points, dtype=complex)))) + 6 * np.sqrt(s_max)


# ---------------------------------------------------------------- specs and reports

@dataclass(frozen=True)
class DerivativeSpec:
    """A word in M and the space derivatives, applied right to left."""
    order: tuple = ()

    def __post_init__(self):
        order = tuple(self.order)
        object.__setattr__(self, "order", order)
        bad = [o for o in order if o not in OPS]
        if bad:
            raise ValueError(f"unknown derivative tokens {bad}; allowed {OPS}")

    @classmethod
    def from_counts(cls, n=0, ell=0, space="Zbar_z"):
        if n < 0 or ell < 0:
            raise ValueError("counts must be nonnegative")
        if space not in SPACE_OPS:
            raise ValueError(f"space derivative must be one of {SPACE_OPS}")
        return cls(("M",) * n + (space,) * ell)

    @property
    def n(self):
        return sum(o == "M" for o in self.order)

    @property
    def ell(self):
        return len(self.order) - self.n

    @property
    def total(self):
        return len(self.order)

    def to_json(self):
        return {"n": self.n, "ell": self.ell, "order": list(self.order)}


@dataclass
class BoundReport:
    estimate_id: str
    samples: dict
    fitted_c: float
    fitted_C: float
    violations: list
    verdict: str
    extra: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return int(len(self.samples["lhs"]))

    def to_json(self):
        out = {"estimate_id": self.estimate_id, "fitted_C": self.fitted_C,
               "fitted_c": self.fitted_c, "n_samples": self.n_samples,
               "violations": self.violations, "verdict": self.verdict}
        out.update(self.extra)
        return out

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return Path(path)

    def write_csv(self, path):
        cols = ["s", "tau", "z_re", "z_im", "w_re", "w_im", "lhs", "envelope"]
        S = self.samples
        z, w = np.asarray(S["z"], complex), np.asarray(S["w"], complex)
        rows = zip(S["s"], S["tau"], z.real, z.imag, w.real, w.imag, S["lhs"], S["envelope"])
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for r in rows:
                wr.writerow([repr(float(x)) for x in r])
        return Path(path)


# ---------------------------------------------------------------- envelope fitting

def fit_envelope(y, base, rate=None, *, maxform=None, c_min=C_MIN, c_max=50.0, kappa=10.0):
    """Fit log-samples ``y`` under ``logC + g(c)``.

    ``g(c) = base - c * rate`` unless ``maxform`` (a callable c -> g(c),
    nonincreasing in c) is given. Returns (logC, c, violating indices).
    The constant is capped at ``kappa`` times its optimum at c = 0 and the
    largest admissible c is found by a linear program (linear envelopes) or
    bisection (max-form envelopes).
    """
    y = np.asarray(y, dtype=float)
    if maxform is None:
        base = np.asarray(base, dtype=float)
        rate = np.asarray(rate, dtype=float)
        if np.any(rate < 0):
            raise ValueError("rates must be nonnegative")
        g = lambda c: base - c * rate
    else:
        g = maxform
    logC0 = float(np.max(y - g(0.0)))
    cap = logC0 + np.log(kappa)
    if maxform is None:
        # variables (logC, c): maximize c, then prefer small logC
        A = np.column_stack([-np.ones_like(rate), rate])
        b = -(y - base)
        res = linprog([1e-9, -1.0], A_ub=A, b_ub=b,
                      bounds=[(None, cap), (0.0, c_max)], method="highs")
        if res.status != 0:
            raise RuntimeError(f"envelope LP failed: {res.message}")
        c = float(res.x[1])
    else:
        feasible = lambda c: np.max(y - g(c)) <= cap + 1e-12
        if feasible(c_max):
            c = c_max
        else:
            lo, hi = 0.0, c_max
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
            c = lo
    logC = float(np.max(y - g(c)))
    if c >= c_min:
        bad = []
    else:
        bad = np.flatnonzero(y - g(c_min) > cap + 1e-12).tolist()
    return logC, c, bad


def _report(estimate_id, y, g, c, logC, bad, S, c_min, extra=None):
    env = np.exp(logC + g(c))
    samples = {k: np.asarray(v) for k, v in S.items()}
    samples["lhs"] = np.exp(y)
    samples["envelope"] = env
    viol = [{"index": int(i), "s": float(samples["s"][i]), "z": [float(np.real(samples["z"][i])),
             float(np.imag(samples["z"][i]))], "w": [float(np.real(samples["w"][i])),
             float(np.imag(samples["w"][i]))], "lhs": float(samples["lhs"][i])} for i in bad]
    verdict = "pass" if (c >= c_min and not viol) else "fail"
    return BoundReport(estimate_id, samples, float(c), float(np.exp(logC)), viol, verdict,
                       dict(extra or {}))


# ---------------------------------------------------------------- twisted derivative

def _default_dtau(tau):
    return max(1e-3, 1e-3 * abs(tau))


def twisted_tau_derivative(family, p, z, w, tau0, order=1, dtau=None):
    """M^order applied to ``family`` (tau -> values at the (z, w) samples).

    M = e^{i tau T} d/dtau e^{-i tau T} with T = T(w, z), realised by a
    second-order central difference. Returns (values, untrusted) where
    ``untrusted`` marks samples whose value moves by more than 10% when the
    step is halved.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    T = twist_T(p, w, z)
    dtau = _default_dtau(tau0) if dtau is None else dtau

    def M(fam, d):
        return lambda t: (np.exp(-1j * d * T) * fam(t + d) - np.exp(1j * d * T) * fam(t - d)) / (2 * d)

    def nest(d):
        fam = family
        for _ in range(order):
            fam = M(fam, d)
        return np.asarray(fam(tau0), dtype=complex)

    if order == 0:
        v = np.asarray(family(tau0), dtype=complex)
        return v, np.zeros(v.shape, bool)
    coarse, fine = nest(dtau), nest(dtau / 2)
    return fine, _untrusted(coarse, fine)


def _untrusted(coarse, fine):
    scale = np.max(np.abs(fine), initial=0.0)
    mag = np.maximum(np.abs(fine), 1e-8 * scale)
    return np.abs(coarse - fine) > 0.1 * mag


# ---------------------------------------------------------------- kernel blocks

class KernelBlockEvaluator:
    """Derivatives of a kernel K(z, w) on a block (local patch) x (whole grid).

    In ``column`` mode the source w ranges over a stencil patch around the
    anchor and z over the whole grid; in ``row`` mode the roles swap, using
    K(z, w) = conj K(w, z). First-order operators act on the local side by
    restricted stencils and on the full side as sparse matrices, the twisted
    derivative M by a central difference in tau, and d/ds by -Box on the full
    side.
    """

    def __init__(self, p, grid, kind="H", *, form=None, method="krylov"):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        self.p, self.grid, self.kind, self.method = p, grid, kind, method
        self.form = form or ("schrodinger" if kind == "H" else "factored")
        self._ops, self._szego, self._rinv = {}, {}, {}

    def sibling(self, kind):
        """Evaluator for another kernel kind sharing the Szego and inverse caches
        (and the operator cache when the assembled Laplacian is the same)."""
        other = KernelBlockEvaluator(self.p, self.grid, kind, method=self.method)
        other._szego, other._rinv = self._szego, self._rinv
        if (kind == "H") == (self.kind == "H") and other.form == self.form:
            other._ops = self._ops
        return other

    # operators, cached per tau
    def box(self, tau):
        key = ("box", tau)
        if key not in self._ops:
            variant = "Box" if self.kind == "H" else "BoxTilde"
            self._ops[key] = assemble_box(self.p, tau, self.grid, variant, self.form)
        return self._ops[key]

    def first_order(self, tau, name):
        key = (name, tau)
        if key not in self._ops:
            self._ops[key] = assemble_first_order(self.p, tau, self.grid, name).matrix
        return self._ops[key]

    def szego(self, tau):
        if tau not in self._szego:
            self._szego[tau] = szego_projector(self.box(tau))
        return self._szego[tau]

    def patch(self, anchor, r):
        g = self.grid
        i1, i2 = g.unravel(anchor)
        if min(i1, i2) - r < 0 or max(i1, i2) + r >= g.N:
            raise ValueError("derivative stencil leaves the grid; move the anchor inward")
        return np.array([g.index(i1 + a, i2 + b) for a in range(-r, r + 1)
                         for b in range(-r, r + 1)])

    def _sources(self, tau, idx, s_values):
        """(ns, size, len(idx)) array of kernel columns at the given sources."""
        g = self.grid
        if self.kind == "Szego":
            S = self.szego(tau)
            cols = np.stack([S.kernel_column(i).values for i in idx], axis=1)
            return np.broadcast_to(cols, (len(s_values),) + cols.shape).copy()
        if self.kind == "R":
            if tau not in self._rinv:
                self._rinv[tau] = RelativeInverse(self.p, tau, g, szego=self.szego(tau))
            cols = np.stack([self._rinv[tau].kernel_column(i).values for i in idx], axis=1)
            return np.broadcast_to(cols, (len(s_values),) + cols.shape).copy()
        op = self.box(tau)
        out = np.empty((len(s_values), g.size, len(idx)), dtype=complex)

        def one(i):
            d = g.delta(i)
            if self.kind == "Gtilde":
                d = self.szego(tau).complement(d)
            return heat_apply_many(op, d, s_values, self.method)

        for j, col in enumerate(pmap(one, idx)):
            out[:, :, j] = col
        return out

    def evaluate(self, spec, anchor, s_values, tau, *, k_time=0, mode="column", dtau=None):
        """Y^J d_s^k K at the anchor against the whole grid.

        Returns (values, untrusted), both of shape (len(s_values), size).
        """
        seq = tuple(spec.order)
        s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
        if mode not in ("column", "row"):
            raise ValueError("mode must be 'column' or 'row'")
        static = self.kind in ("Szego", "R")
        if static and (k_time or spec.n):
            raise ValueError(f"{self.kind} is s- and tau-independent here: no d/ds or M")
        if self.kind == "R" and mode == "row":
            raise ValueError("R is not self-adjoint; use column mode")
        local = {"column": ("Wbar_w", "W_w"), "row": ("Zbar_z", "Z_z")}[mode]
        g = self.grid
        dtau = _default_dtau(tau) if dtau is None else dtau
        radius = [sum(o in local for o in seq[:i]) for i in range(len(seq) + 1)]
        base_cache = {}
        flags = np.zeros((len(s_values), g.size), bool)
        pts = g.points
        first_m = seq.index("M") if "M" in seq else -1
        local_axis = 2 if mode == "column" else 1

        def base(t):
            if t not in base_cache:
                idx = self.patch(anchor, radius[-1])
                B = self._sources(t, idx, s_values)  # (ns, z_all, w_patch)
                if k_time:
                    A = self.box(t).matrix
                    for _ in range(k_time):
                        B = np.stack([-(A @ b) for b in B])
                if mode == "row":
                    B = np.conj(np.transpose(B, (0, 2, 1)))  # (ns, z_patch, w_all)
                base_cache[t] = B
            return base_cache[t]

        def T_block(r):
            idx = self.patch(anchor, r)
            if mode == "column":
                return twist_T(self.p, pts[idx][None, :], pts[:, None])
            return twist_T(self.p, pts[None, :], pts[idx][:, None])

        def apply_space(op, B, t, r):
            name = op.split("_")[0]
            mat = self.first_order(t, name)
            on_w = op.endswith("_w")
            if op in local:
                rows, cols = self.patch(anchor, r - 1), self.patch(anchor, r)
                sub = mat[rows][:, cols].toarray()
                if on_w:
                    return B @ sub.T
                return np.einsum("ij,sjk->sik", sub, B)
            if on_w:
                return np.stack([(mat @ b.T).T for b in B])
            return np.stack([mat @ b for b in B])

        def run(pos, t):
            if pos == len(seq):
                return base(t)
            op = seq[pos]
            if op == "M":
                T = T_block(radius[pos])

                def twist(d):
                    return (np.exp(-1j * d * T) * run(pos + 1, t + d)
                            - np.exp(1j * d * T) * run(pos + 1, t - d)) / (2 * d)
                coarse, fine = twist(dtau), twist(dtau / 2)
                if pos == first_m:
                    flags[:] |= _untrusted(coarse, fine).any(axis=local_axis)
                return fine
            return apply_space(op, run(pos + 1, t), t, radius[pos + 1])

        out = run(0, float(tau))
        return out.reshape(len(s_values), g.size), flags


@dataclass
class KernelSamples:
    kind: str
    spec: DerivativeSpec
    k_time: int
    tau: float
    p: object
    s: np.ndarray
    z: np.ndarray
    w: np.ndarray
    value: np.ndarray
    untrusted: np.ndarray
    grid: object

    def __len__(self):
        return len(self.value)

    def subset(self, mask):
        return KernelSamples(self.kind, self.spec, self.k_time, self.tau, self.p, self.s[mask],
                             self.z[mask], self.w[mask], self.value[mask],
                             self.untrusted[mask], self.grid)


def kernel_samples(p, tau, grid, *, kind="H", spec=None, k_time=0, s_values=(1.0,),
                   anchors=(0j,), radius=0.75, mode="column", form=None, method="krylov",
                   floor=1e-12, resolve=0.5, h_resolve=None, evaluator=None):
    """Sample Y^J d_s^k K(s, z, w) with anchors on one side and the grid within
    ``radius`` (sup norm) on the other.

    Values below ``floor`` times the largest magnitude per anchor and s are
    dropped as carrying no information. Samples whose Gaussian exponent
    X = |z-w|^2/s the lattice cannot resolve, X^2 h^2 / (3 s) > ``resolve``,
    are dropped too (``h_resolve`` overrides the spacing so that a refined run
    can keep exactly the regime of a coarser one; ``resolve=None`` keeps all).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    spec = spec or DerivativeSpec()
    ev = evaluator or KernelBlockEvaluator(p, grid, kind, form=form, method=method)
    pts = grid.points
    near = np.flatnonzero((np.abs(pts.real) <= radius + 1e-12) & (np.abs(pts.imag) <= radius + 1e-12))
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    static = kind in ("Szego", "R")
    if static:
        s_values = s_values[:1]
    hr = grid.h if h_resolve is None else float(h_resolve)
    if not static:
        need = truncation_radius(np.concatenate([pts[near], np.atleast_1d(anchors)]), s_values.max())
        if grid.R < need:
            warnings.warn(f"grid half-width {grid.R:g} is below the truncation radius {need:.3g} "
                          "for the largest s; Dirichlet truncation may affect the samples",
                          TruncationWarning, stacklevel=2)
    S, Z, W, V, U = [], [], [], [], []
    for a in anchors:
        ai = grid.nearest_index(a)
        vals, flags = ev.evaluate(spec, ai, s_values, tau, k_time=k_time, mode=mode)
        for j, s in enumerate(s_values):
            v, f = vals[j, near], flags[j, near]
            keep = np.abs(v) > floor * np.max(np.abs(v), initial=0.0)
            if resolve is not None and not static:
                X = np.abs(pts[near] - pts[ai]) ** 2 / s
                keep &= X ** 2 * hr ** 2 / (3 * s) <= resolve
            other = pts[near][keep]
            S.append(np.full(keep.sum(), np.nan if static else s))
            if mode == "column":
                Z.append(other)
                W.append(np.full(keep.sum(), pts[ai]))
            else:
                Z.append(np.full(keep.sum(), pts[ai]))
                W.append(other)
            V.append(v[keep])
            U.append(f[keep])
    cat = np.concatenate
    return KernelSamples(kind, spec, k_time, float(tau), p, cat(S), cat(Z), cat(W), cat(V),
                         cat(U), grid)


# ---------------------------------------------------------------- kernel envelopes

def _scales(ks):
    p, tau = ks.p, ks.tau
    d = np.abs(ks.z - ks.w)
    muz, muw = mu(p, ks.z, 1.0 / tau), mu(p, ks.w, 1.0 / tau)
    return d, muz, muw


def _check(ks):
    if len(ks) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {len(ks)}")


def _sample_dict(ks, mask=None):
    m = slice(None) if mask is None else mask
    return {"s": ks.s[m], "tau": np.full(len(ks.value[m]), ks.tau), "z": ks.z[m], "w": ks.w[m]}


def fit_gaussian_bound(ks, *, tau_decay=False, c_min=C_MIN, kappa=10.0):
    """Heat-kernel envelope C Lambda(., Delta)^n s^{-1-k-l/2} e^{-c(|z-w|^2/s + s/mu_z^2 + s/mu_w^2)}.

    The fit is anchored at z; the w-anchored variant is fitted too and stored
    under ``extra['w_anchor']``. With ``tau_decay`` the factor Lambda^n is
    replaced by tau^{-n}.
    """
    _check(ks)
    if ks.kind in ("Szego", "R"):
        raise ValueError("the heat envelope needs an s-dependent kernel")
    n, ell, k = ks.spec.n, ks.spec.ell, ks.k_time
    d, muz, muw = _scales(ks)
    s = ks.s
    y = np.log(np.abs(ks.value))
    rate = d ** 2 / s + s / muz ** 2 + s / muw ** 2
    t = -(1 + k + 0.5 * ell) * np.log(s)

    def base_for(anchor, mu_a):
        if tau_decay:
            return t - n * np.log(ks.tau)
        Delta = np.minimum(mu_a, np.sqrt(s))
        return t + n * np.log(lambda_big(ks.p, anchor, Delta))

    out = {}
    for name, anchor, mu_a in (("z", ks.z, muz), ("w", ks.w, muw)):
        base = base_for(anchor, mu_a)
        logC, c, bad = fit_envelope(y, base, rate, c_min=c_min, kappa=kappa)
        out[name] = (base, logC, c, bad)
    base, logC, c, bad = out["z"]
    _, logCw, cw, badw = out["w"]
    eid = "heat_H_tau" if tau_decay else "heat_H"
    extra = {"derivative": ks.spec.to_json(), "k_time": k, "tau": ks.tau, "kind": ks.kind,
             "untrusted": int(ks.untrusted.sum()),
             "w_anchor": {"fitted_c": cw, "fitted_C": float(np.exp(logCw)),
                          "verdict": "pass" if (cw >= c_min and not badw) else "fail"}}
    return _report(eid, y, lambda cc: base - cc * rate, c, logC, bad, _sample_dict(ks), c_min, extra)


def fit_gtilde_bound(ks, which=None, *, c_min=C_MIN, kappa=10.0):
    """Envelopes for Htilde, Gtilde, the Szego kernel and R."""
    which = which or ks.kind
    if which not in ("Htilde", "Gtilde", "Szego", "R"):
        raise ValueError("which must be Htilde, Gtilde, Szego or R")
    mask = np.ones(len(ks), bool)
    if which == "R":
        mask = np.abs(ks.z - ks.w) > 0
    ks = ks.subset(mask)
    _check(ks)
    n, ell, J = ks.spec.n, ks.spec.ell, ks.spec.total
    d, muz, muw = _scales(ks)
    s, tau = ks.s, ks.tau
    y = np.log(np.abs(ks.value))
    tn = -n * np.log(tau)
    maxform = None
    if which == "Htilde":
        Delta = np.minimum(muz, np.sqrt(s))
        base = n * np.log(lambda_big(ks.p, ks.z, Delta)) - (2 + ell) * np.log(Delta)
        rate = d ** 2 / s + d / muz + d / muw
    elif which == "Gtilde":
        lin = s / muw ** 2 + s / muz ** 2 + d / muz + d / muw
        heat = -(1 + 0.5 * ell) * np.log(s)
        szego = -(2 + ell) * np.log(muw)
        maxform = lambda c: tn - c * lin + np.maximum(heat - c * d ** 2 / s, szego)
        base = rate = None
    elif which == "Szego":
        base = tn - (2 + ell) * np.log(muz)
        rate = d / muz + d / muw
    else:
        nearby = d <= muz
        base = np.where(nearby, tn - (1 + ell) * np.log(np.where(d > 0, d, 1.0)),
                        tn - (1 + J) * np.log(muz))
        rate = np.where(nearby, 0.0, d / muz + d / muw)
    logC, c, bad = fit_envelope(y, base, rate, maxform=maxform, c_min=c_min, kappa=kappa)
    g = maxform if maxform is not None else (lambda cc: base - cc * rate)
    extra = {"derivative": ks.spec.to_json(), "tau": tau, "kind": ks.kind,
             "untrusted": int(ks.untrusted.sum())}
    return _report(which, y, g, c, logC, bad, _sample_dict(ks), c_min, extra)


def c_stability(c_coarse, c_fine):
    """Relative change of a fitted rate under refinement."""
    return abs(c_fine - c_coarse) / abs(c_coarse)


# ---------------------------------------------------------------- cancellation

def bump(grid, z, delta):
    """exp(-1/(1 - |x - z|^2/delta^2)) on D(z, delta), zero outside."""
    r2 = np.abs(grid.points - z) ** 2 / delta ** 2
    out = np.zeros(grid.size, dtype=complex)
    inside = r2 < 1
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@dataclass
class CancellationResult:
    delta: float
    lhs: float
    rhs: float
    ratio: float
    untrusted: bool


def _norm(grid, f):
    return float(np.sqrt(np.sum(np.abs(f) ** 2) * grid.h ** 2))


def _box_powers(A, phi, kmax):
    out = [phi]
    for _ in range(kmax):
        out.append(A @ out[-1])
    return out


def cancellation_probe(p, tau, grid, z, delta, spec, s, *, phi=None, form="schrodinger",
                       method="krylov", evaluator=None):
    """|Y^J e^{-s Box}[phi](z)| against the size of phi in Box-Sobolev norms.

    ``phi`` defaults to the standard bump on D(z, delta).
    """
    z_idx = grid.nearest_index(z)
    z = grid.points[z_idx]
    muz = float(mu(p, z, 1.0 / tau))
    if not delta <= max(muz, np.sqrt(s)) + 1e-12:
        raise ValueError("need delta <= max(mu_p(z, 1/tau), s^(1/2))")
    if delta < 2 * grid.h:
        raise ValueError("bump radius below two grid spacings is not resolved")
    phi = bump(grid, z, delta) if phi is None else np.asarray(phi, dtype=complex)
    ev = evaluator or KernelBlockEvaluator(p, grid, "H", form=form, method=method)
    ell, n = spec.ell, spec.n
    Delta = min(muz, np.sqrt(s))
    if not np.any(phi):
        return CancellationResult(float(delta), 0.0, 0.0, float("nan"), False)
    row, flags = ev.evaluate(spec, z_idx, [s], tau, mode="row")
    lhs = abs(np.sum(row[0] * phi) * grid.h ** 2)
    A = ev.box(float(tau)).matrix
    pw = _box_powers(A, phi, (ell + 3) // 2 + 1)
    pre = lambda_big(p, z, Delta) ** n / delta
    if ell % 2 == 0:
        rhs = pre * (_norm(grid, pw[ell // 2]) + delta ** 2 * _norm(grid, pw[ell // 2 + 1]))
    else:
        rhs = pre * (delta * _norm(grid, pw[(ell + 1) // 2])
                     + delta ** 3 * _norm(grid, pw[(ell + 3) // 2]))
    return CancellationResult(float(delta), float(lhs), float(rhs), float(lhs / rhs),
                              bool(flags[0].any()))


def cancellation_sweep(p, tau, grid, z, spec, s, factors=(0.25, 0.5, 1.0), **kw):
    """Probe at delta = factor * min(mu_p(z, 1/tau), s^(1/2)); returns (results, max/min)."""
    z = grid.points[grid.nearest_index(z)]
    scale = min(float(mu(p, z, 1.0 / tau)), np.sqrt(s))
    kw.setdefault("evaluator", KernelBlockEvaluator(p, grid, "H", form=kw.pop("form", "schrodinger"),
                                                    method=kw.pop("method", "krylov")))
    res = [cancellation_probe(p, tau, grid, z, f * scale, spec, s, **kw) for f in factors]
    r = np.array([x.ratio for x in res])
    return res, float(r.max() / r.min())


def g_cancellation_probe(p, tau, grid, z, delta, *, form="schrodinger", tol=1e-10):
    """|Box^{-1}[phi](z)| against delta (||phi|| + delta^2 ||Box phi||), with and
    without the factor log(2 mu_p(z, 1/tau) / delta)."""
    z = grid.points[grid.nearest_index(z)]
    op = assemble_box(p, tau, grid, "Box", form)
    phi = bump(grid, z, delta)
    u = box_solve(op, phi, tol=tol)
    lhs = abs(u[grid.nearest_index(z)])
    muz = float(mu(p, z, 1.0 / tau))
    plain = delta * (_norm(grid, phi) + delta ** 2 * _norm(grid, op.matrix @ phi))
    logged = delta * (np.log(2 * muz / delta) * _norm(grid, phi)
                      + delta ** 2 * _norm(grid, op.matrix @ phi))
    return {"delta": float(delta), "lhs": float(lhs), "ratio_plain": float(lhs / plain),
            "ratio_log": float(lhs / logged), "log_factor": float(np.log(2 * muz / delta))}


# ---------------------------------------------------------------- preliminary inequalities

def _grad_abs(fn, w, xi, h=1e-5):
    """Euclidean norm of the real gradient of fn(w, xi) in (Re w, Im w, Re xi, Im xi)."""
    acc = 0.0
    for dw, dx in ((h, 0), (1j * h, 0), (0, h), (0, 1j * h)):
        dfd = (fn(w + dw, xi + dx) - fn(w - dw, xi - dx)) / (2 * h)
        acc = acc + np.abs(dfd) ** 2
    return np.sqrt(acc)


def _grad_lap_abs(p, xi, ell):
    if ell == 0:
        return np.abs(4 * ajk(p, xi, 1, 1))
    if ell == 1:
        return 16 * np.abs(ajk(p, xi, 2, 1))
    raise ValueError("only ell in {0, 1} is supported")


def preliminary_inequalities(p, tau, *, n_samples=400, seed=0, c0=1.0, ell=0, items=None,
                             radius=2.0, c_min=C_MIN, kappa=10.0):
    """Fit the auxiliary size estimates on a seeded sample cloud.

    Items a-d bound e(w, xi) and the derivatives of the Laplacian of p against
    tau^{-1} min{s^{-.}, mu^{-.}} with Gaussian and time factors; items i-ii
    compare e and Lambda at a third point z with |z - w| <= s^{1/2}. The
    left side carries the decay factor with rate ``c0`` and the fitted rate
    is capped at ``c0``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    items = items or ("a", "b", "c", "d", "i", "ii")
    rng = np.random.default_rng(seed)
    m = n_samples
    s = np.exp(rng.uniform(np.log(1e-2), np.log(10.0), m))
    w = radius * np.sqrt(rng.uniform(0, 1, m)) * np.exp(2j * np.pi * rng.uniform(0, 1, m))
    xi = w + np.sqrt(s) * np.abs(rng.normal(0, 1.5, m)) * np.exp(2j * np.pi * rng.uniform(0, 1, m))
    z = w + np.sqrt(s) * np.sqrt(rng.uniform(0, 1, m)) * np.exp(2j * np.pi * rng.uniform(0, 1, m))
    muxi, muw = mu(p, xi, 1.0 / tau), mu(p, w, 1.0 / tau)
    lt = -np.log(tau)
    e_abs = (np.abs(e_fn(p, w, xi)) if ell == 0
             else _grad_abs(lambda a, b: e_fn(p, a, b), w, xi))
    lap = _grad_lap_abs(p, xi, ell)
    gauss = np.abs(xi - w) ** 2 / s
    out = {}
    for it in items:
        if it == "a":
            lhs, X = e_abs, gauss + s / muxi ** 2
            env = lt + np.minimum(-(ell / 2 + 0.5) * np.log(s), -(ell + 1) * np.log(muxi))
        elif it == "b":
            lhs, X = lap, s / muxi ** 2
            env = lt + np.minimum(-(ell / 2 + 1) * np.log(s), -(ell + 2) * np.log(muxi))
        elif it == "c":
            lhs, X = lap, gauss + s / muxi ** 2 + s / muw ** 2
            env = lt + np.minimum(-(ell / 2 + 1) * np.log(s), -(ell + 2) * np.log(muw))
        elif it == "d":
            lhs, X = e_abs, gauss + s / muxi ** 2 + s / muw ** 2
            env = lt + np.minimum(-(ell / 2 + 0.5) * np.log(s), -(ell + 1) * np.log(muw))
        elif it == "i":
            lhs, X = e_abs, np.abs(z - xi) ** 2 / s
            env = -(ell + 1) / 2 * np.log(s) + np.log(lambda_big(p, z, np.sqrt(s)))
        elif it == "ii":
            lhs, X = lambda_big(p, xi, np.sqrt(s)), np.abs(z - xi) ** 2 / s
            env = np.log(lambda_big(p, z, np.sqrt(s)))
        else:
            raise ValueError(f"unknown item {it!r}")
        keep = lhs > 0
        y = np.log(lhs[keep]) - c0 * X[keep]
        base, rate = env[keep], X[keep]
        logC, c, bad = fit_envelope(y, base, rate, c_min=c_min, c_max=c0, kappa=kappa)
        anchor = z if it in ("i", "ii") else xi
        S = {"s": s[keep], "tau": np.full(keep.sum(), tau), "z": anchor[keep], "w": w[keep]}
        out[it] = _report(f"lemma_{it}", y, lambda cc, b=base, r=rate: b - cc * r, c, logC,
                          bad, S, c_min, {"tau": tau, "ell": ell, "c0": c0, "seed": seed})
    return out


def min_identity_check(d, mu_val, n_grid=4001):
    """min over s > 0 of d^2/s + s/mu^2 on a log grid, next to 2 d / mu and d / mu."""
    if d <= 0 or mu_val <= 0:
        raise ValueError("d and mu must be positive")
    s = d * mu_val * np.logspace(-4, 4, n_grid)
    vals = d ** 2 / s + s / mu_val ** 2
    numeric = float(vals.min())
    return {"numeric": numeric, "two_d_over_mu": 2 * d / mu_val, "d_over_mu": d / mu_val,
            "rel_err": abs(numeric - 2 * d / mu_val) / (2 * d / mu_val),
            "resolution": float(np.log(10) * 8 / (n_grid - 1)) ** 2}
