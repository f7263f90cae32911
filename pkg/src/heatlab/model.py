"""Heat kernel of the boundary Laplacian on the model hypersurface Im w = p(z).

The kernel is the inverse partial Fourier transform in tau of the family
H_{tau p}(s, z, w):

    H(s, z, w, t) = (2 pi)^{-1/2} int e^{i t tau} H_{tau p}(s, z, w) d tau.

Slices with tau < 0 come from the mirrored weight: Box_{-|tau| p} is the
x1-mirror of BoxTilde_{|tau| p~} with p~(z) = p(-conj z).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bounds import BoundReport, _report, fit_envelope, C_MIN
from .operators import assemble_box
from .parallel import pmap
from .semigroup import heat_apply, heat_apply_many
from .weights import lambda_big, metric_dM, mu, twist_T

__all__ = [
    "TauQuadrature",
    "TailError",
    "ModelKernel",
    "default_tau_max",
    "boxb_kernel",
    "model_samples",
    "model_decay_check",
    "ibp_check",
    "write_model_csv",
]

RULES = ("trapezoid", "gauss_legendre")
WINDOWS = ("none", "cosine_taper")


class TailError(RuntimeError):
    """The tau-truncation error estimate exceeds the allowed fraction of the result."""


@dataclass(frozen=True)
class TauQuadrature:
    tau_max: float
    nodes: int = 129
    rule: str = "trapezoid"
    window: str = "cosine_taper"
    taper: float = 0.2

    def __post_init__(self):
        if not (np.isfinite(self.tau_max) and self.tau_max > 0):
            raise ValueError("tau_max must be positive")
        if self.nodes < 16:
            raise ValueError("need at least 16 nodes")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}")
        if self.rule == "trapezoid" and self.nodes % 2 == 0:
            raise ValueError("the trapezoid rule uses an odd node count (symmetric, contains 0)")
        if not 0 < self.taper < 1:
            raise ValueError("taper fraction must lie in (0, 1)")

    def points(self):
        """Nodes and weights (window included), symmetric about 0."""
        T = self.tau_max
        if self.rule == "trapezoid":
            x = np.linspace(-T, T, self.nodes)
            wts = np.full(self.nodes, x[1] - x[0])
            wts[[0, -1]] *= 0.5
        else:
            x, wts = np.polynomial.legendre.leggauss(self.nodes)
            x, wts = T * x, T * wts
        x = 0.5 * (x - x[::-1])  # exact symmetry
        return x, wts * self.window_values(x)

    def window_values(self, x):
        if self.window == "none":
            return np.ones_like(x)
        a = np.abs(x) / self.tau_max
        edge = 1 - self.taper
        out = np.ones_like(x)
        roll = a > edge
        out[roll] = 0.5 * (1 + np.cos(np.pi * (a[roll] - edge) / self.taper))
        return out

    def refined(self):
        """Halved node spacing (nested for the trapezoid rule)."""
        n = 2 * self.nodes - 1 if self.rule == "trapezoid" else 2 * self.nodes
        return TauQuadrature(self.tau_max, n, self.rule, self.window, self.taper)

    def to_json(self):
        return {"tau_max": self.tau_max, "nodes": self.nodes, "rule": self.rule,
                "window": self.window, "taper": self.taper}


def default_tau_max(p, z, s, safety=8.0):
    """safety / Lambda(z, s^{1/2}): past this scale the slices are in their
    large-tau regime."""
    return float(safety / lambda_big(p, z, np.sqrt(s)))


class ModelKernel:
    """Evaluates H(s, z, w, t) with per-(tau, source, s) column caching."""

    def __init__(self, p, grid, *, form="schrodinger", method="krylov"):
        self.p, self.grid, self.form, self.method = p, grid, form, method
        self.mirror = p.mirrored()
        N = grid.N
        i1, i2 = np.divmod(np.arange(grid.size), N)
        self._flip = (N - 1 - i1) * N + i2
        self._ops, self._cols = {}, {}

    def _op(self, tau):
        if tau not in self._ops:
            if tau >= 0:
                self._ops[tau] = assemble_box(self.p, tau, self.grid, "Box", self.form)
            else:
                self._ops[tau] = assemble_box(self.mirror, -tau, self.grid, "BoxTilde", self.form)
        return self._ops[tau]

    def column(self, tau, w_idx, s):
        """H_{tau p}(s, ., w) on the whole grid."""
        tau = float(tau)
        key = (tau, int(w_idx), float(s))
        if key not in self._cols:
            g = self.grid
            if tau >= 0:
                col = heat_apply(self._op(tau), g.delta(w_idx), s, self.method)
            else:
                col = heat_apply(self._op(tau), g.delta(self._flip[w_idx]), s, self.method)[self._flip]
            self._cols[key] = col
        return self._cols[key]

    def prefetch(self, taus, w_idx, s_values):
        """Fill the cache for all s at once; one Krylov basis serves every s."""
        s_values = [float(s) for s in s_values]
        w_idx = int(w_idx)
        g = self.grid

        def work(tau):
            tau = float(tau)
            todo = [s for s in s_values if (tau, w_idx, s) not in self._cols]
            if not todo:
                return
            if tau >= 0:
                cols = heat_apply_many(self._op(tau), g.delta(w_idx), todo, self.method)
            else:
                cols = heat_apply_many(self._op(tau), g.delta(self._flip[w_idx]), todo,
                                       self.method)[:, self._flip]
            for s, col in zip(todo, cols):
                self._cols[(tau, w_idx, s)] = col

        for tau in taus:  # operator assembly is cached serially, columns in parallel
            self._op(float(tau))
        pmap(work, list(taus))

    def slices(self, taus, z_idx, w_idx, s):
        return np.array(pmap(lambda t: self.column(t, w_idx, s)[z_idx], list(taus)))

    def twisted_slices(self, taus, z_idx, w_idx, s, dtau=1e-3):
        """M H_{tau p}(s, z, w) at each node by a twisted central difference."""
        g = self.grid
        T = float(twist_T(self.p, g.points[w_idx], g.points[z_idx]))
        taus = np.asarray(taus, dtype=float)
        hp = self.slices(taus + dtau, z_idx, w_idx, s)
        hm = self.slices(taus - dtau, z_idx, w_idx, s)
        return (np.exp(-1j * dtau * T) * hp - np.exp(1j * dtau * T) * hm) / (2 * dtau)


def _fsum_c(v):
    v = np.asarray(v, dtype=complex)
    return complex(math.fsum(v.real), math.fsum(v.imag))


def _tail_estimate(x, vals, edge):
    """Integral of |integrand| over the tapered band |tau| > edge plus its
    extrapolation beyond the last node from the decay across the outer nodes."""
    a_all = np.abs(vals)
    band = np.abs(x) > edge
    total = float(np.sum(a_all[band] * np.gradient(x)[band]))
    for idx in (np.arange(len(x) - 3, len(x)), np.arange(2, -1, -1)):
        a = a_all[idx]  # ordered inward -> outward
        xs = np.abs(x[idx])
        if a[-1] == 0:
            continue
        if a[0] <= a[-1]:
            return math.inf
        L = (xs[-1] - xs[0]) / math.log(a[0] / a[-1])
        total += a[-1] * L
    return total / math.sqrt(2 * math.pi)


def boxb_kernel(p, s, z, w, t, quad, grid, *, kernel=None, check_tail=True, tail_tol=0.01,
                return_info=False):
    """H(s, z, w, t) for one or several t (a scalar t gives a scalar result).

    Raises TailError when the estimated tau-truncation error exceeds
    ``tail_tol`` times the result (tested on the unwindowed integrand).
    """
    if s <= 0:
        raise ValueError("s must be positive")
    km = kernel or ModelKernel(p, grid)
    zi, wi = grid.nearest_index(z), grid.nearest_index(w)
    x, wts = quad.points()
    vals = km.slices(x, zi, wi, s)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([_fsum_c(wts * np.exp(1j * tt * x) * vals) for tt in ts]) / math.sqrt(2 * math.pi)
    edge = quad.tau_max * (1 - quad.taper) if quad.window == "cosine_taper" else quad.tau_max
    tail = _tail_estimate(x, vals, edge)
    if check_tail:
        bad = tail > tail_tol * np.abs(out)
        if np.any(bad):
            raise TailError(f"tau-tail estimate {tail:.3e} exceeds {tail_tol:g} of |H| = "
                            f"{np.abs(out)[bad].min():.3e}; raise tau_max")
    res = out[0] if np.ndim(t) == 0 else out
    if return_info:
        return res, {"tail": tail, "nodes": quad.nodes, "tau_max": quad.tau_max}
    return res


def model_samples(p, grid, quad_for, s_values, pairs, t_values, *, kernel=None, check_tail=True,
                  on_tail="raise", tail_tol=0.01):
    """Rows (s, z, w, t, value) for every s, (z, w) pair and t.

    ``quad_for(s, z, w)`` returns the TauQuadrature to use. With
    ``on_tail="drop"`` rows whose tail estimate exceeds ``tail_tol`` of |H|
    (typically near an oscillation zero in t) are dropped and counted under
    "dropped" instead of raising.
    """
    if on_tail not in ("raise", "drop"):
        raise ValueError("on_tail must be 'raise' or 'drop'")
    km = kernel or ModelKernel(p, grid)
    rows, dropped = [], 0
    for z, w in pairs:
        zi, wi = grid.nearest_index(z), grid.nearest_index(w)
        zg, wg = grid.points[zi], grid.points[wi]
        quads = {float(s): quad_for(s, zg, wg) for s in s_values}
        km.prefetch(sorted({float(x) for q in quads.values() for x in q.points()[0]}), wi,
                    list(quads))
        for s, quad in quads.items():
            vals, info = boxb_kernel(p, s, zg, wg, np.asarray(t_values, float), quad, grid,
                                     kernel=km, check_tail=check_tail and on_tail == "raise",
                                     tail_tol=tail_tol, return_info=True)
            for t, v in zip(t_values, vals):
                if check_tail and on_tail == "drop" and info["tail"] > tail_tol * abs(v):
                    dropped += 1
                    continue
                rows.append((s, zg, wg, float(t), complex(v)))
    if not rows:
        raise TailError("every sample failed the tau-tail check")
    s, z, w, t, v = (np.array(c) for c in zip(*rows))
    return {"s": s, "z": z.astype(complex), "w": w.astype(complex), "t": t,
            "value": v.astype(complex), "dropped": dropped}


def model_decay_check(p, samples, N_exponents=(1, 2), *, c_min=C_MIN, kappa=10.0, gap_min=1e-6):
    """Fit |H| <= C e^{-c|z-w|^2/s} d_M^{-2} Lambda(z, d_M)^{-1} s^N / mu_p(z, |t+T|)^{2N}.

    Returns {N: BoundReport} plus the rational form under key "nagel_stein"
    (s^N / (s^N + d_M^{2N}) for the largest N), which carries no decay rate.
    """
    s, z, w, t = (np.asarray(samples[k]) for k in ("s", "z", "w", "t"))
    v = np.asarray(samples["value"])
    gap = np.abs(t + twist_T(p, w, z))
    keep = (gap >= gap_min) & (np.abs(v) > 0)
    s, z, w, t, v, gap = s[keep], z[keep], w[keep], t[keep], v[keep], gap[keep]
    if len(v) < 20:
        raise ValueError(f"need at least 20 usable samples, got {len(v)}")
    dM = metric_dM(p, z, w, t)
    d2 = np.abs(z - w) ** 2 / s
    y = np.log(np.abs(v))
    common = -2 * np.log(dM) - np.log(lambda_big(p, z, dM))
    S = {"s": s, "tau": np.full(len(s), np.nan), "z": z, "w": w}
    out = {}
    for N in N_exponents:
        base = common + N * np.log(s) - 2 * N * np.log(mu(p, z, gap))
        logC, c, bad = fit_envelope(y, base, d2, c_min=c_min, kappa=kappa)
        out[N] = _report(f"model_N{N}", y, lambda cc, b=base: b - cc * d2, c, logC, bad, S, c_min,
                         {"N": N, "excluded": int((~keep).sum())})
    N = max(N_exponents)
    base = common + N * np.log(s) - np.log(s ** N + dM ** (2 * N))
    logC = float(np.max(y - base))
    samples_ns = {k: np.asarray(val) for k, val in S.items()}
    samples_ns["lhs"] = np.exp(y)
    samples_ns["envelope"] = np.exp(logC + base)
    out["nagel_stein"] = BoundReport("model_nagel_stein", samples_ns, float("nan"),
                                     float(np.exp(logC)), [],
                                     "pass" if np.isfinite(logC) else "fail",
                                     {"N": N, "note": "constant only, no decay rate"})
    return out


def ibp_check(p, s, z, w, t, quad, grid, *, kernel=None, dtau=1e-3):
    """Compare int e^{it tau} H with (i / (t + T)) int e^{it tau} M H.

    Returns (direct, via_M, relative difference).
    """
    km = kernel or ModelKernel(p, grid)
    zi, wi = grid.nearest_index(z), grid.nearest_index(w)
    zg, wg = grid.points[zi], grid.points[wi]
    gap = t + float(twist_T(p, wg, zg))
    if abs(gap) < 1e-6:
        raise ValueError("t + T(w, z) must be bounded away from zero")
    x, wts = quad.points()
    km.prefetch(np.concatenate([x, x + dtau, x - dtau]), wi, [s])
    ph = np.exp(1j * t * x)
    direct = _fsum_c(wts * ph * km.slices(x, zi, wi, s)) / math.sqrt(2 * math.pi)
    viaM = 1j / gap * _fsum_c(wts * ph * km.twisted_slices(x, zi, wi, s, dtau)) / math.sqrt(2 * math.pi)
    return direct, viaM, abs(direct - viaM) / abs(direct)


def write_model_csv(path, samples, p, envelope=None):
    """Rows (s, z, w, t, re, im, d_M, envelope)."""
    s, z, w, t, v = (np.asarray(samples[k]) for k in ("s", "z", "w", "t", "value"))
    dM = metric_dM(p, z, w, t)
    env = np.full(len(s), np.nan) if envelope is None else np.asarray(envelope)
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s", "z_re", "z_im", "w_re", "w_im", "t", "re", "im", "d_M", "envelope"])
        for row in zip(s, z.real, z.imag, w.real, w.imag, t, v.real, v.imag, dM, env):
            wr.writerow([repr(float(x)) for x in row])
    return Path(path)
