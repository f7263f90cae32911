"""Polynomial weights p(z, zbar) and the geometric quantities built from them.

A weight is stored through its Taylor coefficients a_jk about the origin,
p(z) = sum a_jk z^j zbar^k, with a_kj = conj(a_jk) so that p is real.
Every derived quantity (A_jk, Lambda, mu, the twist T, e, r, d_M) is an
exact finite sum over those coefficients.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

__all__ = [
    "WeightPolynomial",
    "ModelPoint",
    "preset",
    "PRESETS",
    "load_weight",
    "random_subharmonic",
    "ajk",
    "ajk_table",
    "reexpand_ajk",
    "laplacian",
    "lambda_big",
    "mu",
    "delta_scale",
    "twist_T",
    "e_fn",
    "e_fn_reexpanded",
    "r_fn",
    "metric_dM",
    "lambda_comparability_constant",
    "random_identity_sweep",
]


def _binom_matrix(d):
    B = np.zeros((d + 1, d + 1))
    for m in range(d + 1):
        for j in range(m + 1):
            B[m, j] = comb(m, j)
    return B


class WeightPolynomial:
    """Real polynomial weight with complex Taylor coefficients.

    Parameters
    ----------
    coeffs : mapping (j, k) -> complex
    check_subharmonic : sample Delta p on a 64x64 grid over |z| <= r_check.
    """

    def __init__(self, coeffs, *, check_subharmonic=True, r_check=8.0,
                 reality_tol=1e-12, name=None):
        clean = {}
        for (j, k), v in dict(coeffs).items():
            j, k = int(j), int(k)
            if j < 0 or k < 0:
                raise ValueError(f"negative exponent ({j},{k})")
            v = complex(v)
            if v != 0:
                clean[(j, k)] = clean.get((j, k), 0) + v
        self.degree = max((j + k for (j, k) in clean), default=0)
        d = self.degree
        a = np.zeros((d + 1, d + 1), dtype=complex)
        for (j, k), v in clean.items():
            a[j, k] = v
        scale = max(1.0, float(np.abs(a).max(initial=0.0)))
        if np.abs(a - a.T.conj()).max(initial=0.0) > reality_tol * scale:
            raise ValueError("coefficients violate a_kj = conj(a_jk); weight is not real")
        if not np.any(a[1:, 1:] != 0):
            raise ValueError("weight is harmonic: no a_jk with j, k >= 1")
        self._a = a
        self._a.setflags(write=False)
        self._binom = _binom_matrix(d)
        self.name = name
        if check_subharmonic:
            self.check_subharmonic(r_check)

    @classmethod
    def from_real_part(cls, coeffs, **kw):
        """Build Re(q) from an arbitrary coefficient map q (reality by symmetrization)."""
        sym = {}
        for (j, k), v in dict(coeffs).items():
            sym[(j, k)] = sym.get((j, k), 0) + complex(v) / 2
            sym[(k, j)] = sym.get((k, j), 0) + complex(v).conjugate() / 2
        return cls(sym, **kw)

    @property
    def a(self):
        return self._a

    @property
    def coeffs(self):
        d = self.degree
        return {(j, k): complex(self._a[j, k]) for j in range(d + 1)
                for k in range(d + 1) if self._a[j, k] != 0}

    def __repr__(self):
        if self.name:
            return f"WeightPolynomial({self.name!r})"
        return f"WeightPolynomial(degree={self.degree}, terms={len(self.coeffs)})"

    def __call__(self, z):
        return ajk(self, z, 0, 0).real

    def check_subharmonic(self, r_check=8.0, n=64, tol=1e-12):
        x = np.linspace(-r_check, r_check, n)
        Z = (x[:, None] + 1j * x[None, :]).ravel()
        Z = Z[np.abs(Z) <= r_check]
        lap = laplacian(self, Z)
        # tolerance scaled by the sampled magnitude of the summands
        scale = max(1.0, float(np.abs(lap).max()))
        if lap.min() < -tol * scale:
            raise ValueError(f"weight is not subharmonic: min Delta p = {lap.min():.3e}")
        return True

    def mirrored(self):
        """Weight p(-x1, x2), i.e. p(-conj z)."""
        d = self.degree
        out = {}
        for j in range(d + 1):
            for k in range(d + 1):
                if self._a[j, k] != 0:
                    out[(k, j)] = (-1) ** (j + k) * self._a[j, k]
        return WeightPolynomial(out, check_subharmonic=False)

    def point_reflected(self):
        """Weight p(-z)."""
        d = self.degree
        out = {(j, k): (-1) ** (j + k) * self._a[j, k]
               for j in range(d + 1) for k in range(d + 1) if self._a[j, k] != 0}
        return WeightPolynomial(out, check_subharmonic=False)

    def to_json(self):
        return {"coeffs": [[j, k, v.real, v.imag] for (j, k), v in sorted(self.coeffs.items())]}


@dataclass(frozen=True)
class ModelPoint:
    z: complex
    t: float

    def __post_init__(self):
        if not (np.isfinite(self.z) and np.isfinite(self.t)):
            raise ValueError("model point must be finite")


PRESETS = {
    "abs2": {(1, 1): 1.0},
    "abs4": {(2, 2): 1.0},
    # |z|^2 + x1^2 x2^2
    "nonradial": {(1, 1): 1.0, (4, 0): -1 / 16, (0, 4): -1 / 16, (2, 2): 1 / 8},
}


def preset(name):
    try:
        return WeightPolynomial(PRESETS[name], name=name)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_weight(spec):
    """Preset name, path to a JSON coefficient file, or an already parsed dict."""
    if isinstance(spec, WeightPolynomial):
        return spec
    if isinstance(spec, str) and spec in PRESETS:
        return preset(spec)
    if isinstance(spec, (str, Path)):
        spec = json.loads(Path(spec).read_text())
    if isinstance(spec, dict) and "preset" in spec:
        return preset(spec["preset"])
    if not isinstance(spec, dict) or "coeffs" not in spec:
        raise ValueError("weight spec must be a preset name or {'coeffs': [[j,k,re,im],...]}")
    raw = {}
    for row in spec["coeffs"]:
        j, k, re, im = row
        raw[(int(j), int(k))] = raw.get((int(j), int(k)), 0) + complex(re, im)
    return WeightPolynomial.from_real_part(raw)


def random_subharmonic(rng, degree=8, n_squares=2, scale=1.0):
    """Random weight sum_i |q_i|^2 + 2 Re h with q_i, h holomorphic.

    Subharmonic because Delta |q|^2 = 4 |q'|^2, nonharmonic when some q_i is
    nonconstant.
    """
    half = degree // 2
    coeffs = {}
    for _ in range(n_squares):
        q = (rng.standard_normal(half + 1) + 1j * rng.standard_normal(half + 1)) * scale
        q[1] += 0.5  # keep q nonconstant
        for a_ in range(half + 1):
            for b_ in range(half + 1):
                coeffs[(a_, b_)] = coeffs.get((a_, b_), 0) + q[a_] * np.conj(q[b_])
    h = (rng.standard_normal(degree + 1) + 1j * rng.standard_normal(degree + 1)) * scale
    for j in range(1, degree + 1):
        coeffs[(j, 0)] = coeffs.get((j, 0), 0) + h[j]
        coeffs[(0, j)] = coeffs.get((0, j), 0) + np.conj(h[j])
    coeffs[(0, 0)] = coeffs.get((0, 0), 0).real
    return WeightPolynomial(coeffs, check_subharmonic=False)


def _powers(z, d):
    z = np.asarray(z, dtype=complex)
    P = np.ones((d + 1,) + z.shape, dtype=complex)
    for m in range(1, d + 1):
        P[m] = P[m - 1] * z
    return P


def ajk_table(p, z, jmax=None):
    """All A_jk(z) for j + k <= degree, shape (d+1, d+1) + z.shape."""
    d = p.degree
    z = np.asarray(z, dtype=complex)
    zp, zbp = _powers(z, d), _powers(np.conj(z), d)
    B, a = p._binom, p.a
    out = np.zeros((d + 1, d + 1) + z.shape, dtype=complex)
    for j in range(d + 1):
        for k in range(d + 1 - j):
            acc = np.zeros(z.shape, dtype=complex)
            for m in range(j, d + 1):
                for n in range(k, d + 1 - m):
                    c = a[m, n]
                    if c != 0:
                        acc = acc + (B[m, j] * B[n, k] * c) * zp[m - j] * zbp[n - k]
            out[j, k] = acc
    return out


def ajk(p, z, j, k):
    """A_jk(z) = (1/(j! k!)) d^{j+k} p / dz^j dzbar^k at z (0 beyond the degree)."""
    if j < 0 or k < 0:
        raise ValueError("j, k must be nonnegative")
    z = np.asarray(z, dtype=complex)
    d = p.degree
    if j + k > d:
        return np.zeros(z.shape, dtype=complex)[()]
    zp, zbp = _powers(z, d), _powers(np.conj(z), d)
    B, a = p._binom, p.a
    acc = np.zeros(z.shape, dtype=complex)
    for m in range(j, d + 1):
        for n in range(k, d + 1 - m):
            c = a[m, n]
            if c != 0:
                acc = acc + (B[m, j] * B[n, k] * c) * zp[m - j] * zbp[n - k]
    return acc[()]


def reexpand_ajk(p, z, w, j, k):
    """A_jk(z) rebuilt from the coefficients A_mn(w) centred at w."""
    d = p.degree
    if j + k > d:
        return 0j
    Aw = ajk_table(p, np.asarray(w, dtype=complex))
    u = complex(z) - complex(w)
    total = 0j
    for m in range(j, d + 1):
        for n in range(k, d + 1 - m):
            total += comb(m, j) * comb(n, k) * Aw[m, n] * u ** (m - j) * np.conj(u) ** (n - k)
    return total


def laplacian(p, z):
    return (4 * ajk(p, z, 1, 1)).real


def _mixed_abs(p, z):
    """|A_jk(z)| for j, k >= 1 as a list of (j+k, values)."""
    T = ajk_table(p, z)
    d = p.degree
    return [(j + k, np.abs(T[j, k])) for j in range(1, d + 1) for k in range(1, d + 1 - j)]


def lambda_big(p, z, delta):
    """Lambda(z, delta) = sum_{j,k>=1} |A_jk(z)| delta^{j+k}."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ValueError("delta must be nonnegative")
    terms = _mixed_abs(p, z)
    return sum(A * delta ** n for n, A in terms)[()]


def mu(p, z, delta):
    """mu_p(z, delta) = min_{j,k>=1, A_jk(z)!=0} |delta / A_jk(z)|^{1/(j+k)}; 0 at delta=0."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ValueError("delta must be nonnegative")
    terms = _mixed_abs(p, z)
    shape = np.broadcast_shapes(np.shape(z), delta.shape)
    best = np.full(shape, np.inf)
    for n, A in terms:
        A = np.broadcast_to(A, shape)
        with np.errstate(divide="ignore"):
            cand = np.where(A > 0, (np.broadcast_to(delta, shape) / np.where(A > 0, A, 1.0)) ** (1.0 / n), np.inf)
        best = np.minimum(best, cand)
    if np.any(~np.isfinite(best)):
        raise ValueError("all mixed coefficients vanish: harmonic weight")
    return best[()]


def delta_scale(p, z, s, tau):
    """Delta = min{mu_p(z, 1/tau), s^{1/2}}."""
    return np.minimum(mu(p, z, 1.0 / tau), np.sqrt(s))


def twist_T(p, w, z):
    """T(w, z) = -2 Im sum_{j>=1} A_j0(z) (w - z)^j."""
    z = np.asarray(z, dtype=complex)
    u = np.asarray(w, dtype=complex) - z
    T = ajk_table(p, z)
    acc = np.zeros(np.broadcast_shapes(z.shape, u.shape), dtype=complex)
    up = np.ones_like(acc)
    for j in range(1, p.degree + 1):
        up = up * u
        acc = acc + T[j, 0] * up
    return (-2 * acc.imag)[()]


def e_fn(p, w, xi):
    """e(w, xi) = sum_{j>=1} A_j1(xi) (w - xi)^j."""
    xi = np.asarray(xi, dtype=complex)
    u = np.asarray(w, dtype=complex) - xi
    T = ajk_table(p, xi)
    acc = np.zeros(np.broadcast_shapes(xi.shape, u.shape), dtype=complex)
    up = np.ones_like(acc)
    for j in range(1, p.degree):
        up = up * u
        acc = acc + T[j, 1] * up
    return acc[()]


def e_fn_reexpanded(p, w, xi):
    """The same quantity expanded about w: -sum_{j>=1,k>=0} (k+1) A_{j,k+1}(w) (xi-w)^j conj(xi-w)^k."""
    w = np.asarray(w, dtype=complex)
    u = np.asarray(xi, dtype=complex) - w
    T = ajk_table(p, w)
    d = p.degree
    acc = np.zeros(np.broadcast_shapes(w.shape, u.shape), dtype=complex)
    for j in range(1, d + 1):
        for k in range(0, d - j):
            acc = acc + (k + 1) * T[j, k + 1] * u ** j * np.conj(u) ** k
    return (-acc)[()]


def r_fn(p, w, xi, z):
    """r(w, xi, z) = 2 Im sum_{j,k>=1} A_jk(xi) (w - xi)^j conj(z - xi)^k."""
    xi = np.asarray(xi, dtype=complex)
    u = np.asarray(w, dtype=complex) - xi
    v = np.conj(np.asarray(z, dtype=complex) - xi)
    T = ajk_table(p, xi)
    d = p.degree
    acc = np.zeros(np.broadcast_shapes(xi.shape, u.shape, v.shape), dtype=complex)
    for j in range(1, d + 1):
        for k in range(1, d + 1 - j):
            acc = acc + T[j, k] * u ** j * v ** k
    return (2 * acc.imag)[()]


def metric_dM(p, z, w, t):
    """d_M = |z - w| + mu_p(z, |t + T(w, z)|)."""
    gap = np.abs(np.asarray(t, dtype=float) + twist_T(p, w, z))
    return (np.abs(np.asarray(z) - np.asarray(w)) + mu(p, z, gap))[()]


def lambda_comparability_constant(p):
    """Sharp constant C_d with Lambda(z, |z-w|) <= C_d Lambda(w, |z-w|).

    Follows from the binomial re-expansion: sum over 1<=j<=m, 1<=k<=n of
    C(m,j) C(n,k) = (2^m - 1)(2^n - 1).
    """
    d = p.degree
    return max((2 ** m - 1) * (2 ** n - 1) for m in range(1, d) for n in range(1, d + 1 - m))



def _rel(a, b, *scale):
    den = max([abs(a), abs(b)] + [abs(x) for x in scale] + [np.finfo(float).tiny])
    return abs(a - b) / den


def _twist_scale(p, w, z):
    """2 sum_j |A_j0(z)| |w - z|^j, the size of the summands of T(w, z)."""
    T, u = ajk_table(p, complex(z)), abs(complex(w) - complex(z))
    return 2 * sum(abs(T[j, 0]) * u ** j for j in range(1, p.degree + 1))


def random_identity_sweep(n_draws=1000, seed=0, max_degree=8, radius=1.0):
    """Largest relative defect of each analytic identity over random draws.

    Each draw picks a random subharmonic weight of even degree <= max_degree
    and points z, xi, w in the disc of the given radius. Defects are measured
    against the summed magnitudes of the terms involved, so cancellation
    inside a sum does not masquerade as an error.
    """
    rng = np.random.default_rng(seed)
    worst = {"T_decomposition": 0.0, "e_symmetry": 0.0, "ajk_reexpansion": 0.0,
             "T_antisymmetry": 0.0}
    for _ in range(n_draws):
        deg = int(rng.choice(np.arange(2, max_degree + 1, 2)))
        p = random_subharmonic(rng, degree=deg, n_squares=int(rng.integers(1, 3)))
        z, xi, w = radius * np.sqrt(rng.uniform(0, 1, 3)) * np.exp(2j * np.pi * rng.uniform(0, 1, 3))
        d = p.degree
        Txi, Tw = ajk_table(p, xi), ajk_table(p, w)
        a, b, r = twist_T(p, w, xi), twist_T(p, xi, z), r_fn(p, w, xi, z)
        u, v = abs(w - xi), abs(z - xi)
        r_sc = 2 * sum(abs(Txi[j, k]) * u ** j * v ** k
                       for j in range(1, d + 1) for k in range(1, d + 1 - j))
        sc = [_twist_scale(p, w, z), _twist_scale(p, w, xi), _twist_scale(p, xi, z), r_sc]
        worst["T_decomposition"] = max(worst["T_decomposition"],
                                       _rel(twist_T(p, w, z), a + b - r, *sc))
        e_sc = sum(abs(Txi[j, 1]) * u ** j for j in range(1, d))
        e_sc += sum((k + 1) * abs(Tw[j, k + 1]) * u ** (j + k)
                    for j in range(1, d + 1) for k in range(d - j))
        worst["e_symmetry"] = max(worst["e_symmetry"],
                                  _rel(e_fn(p, w, xi), e_fn_reexpanded(p, w, xi), e_sc))
        j = int(rng.integers(0, deg + 1))
        k = int(rng.integers(0, deg + 1 - j))
        uz = abs(z - w)
        a_sc = sum(comb(m, j) * comb(n, k) * abs(Tw[m, n]) * uz ** (m + n - j - k)
                   for m in range(j, d + 1) for n in range(k, d + 1 - m))
        worst["ajk_reexpansion"] = max(worst["ajk_reexpansion"],
                                       _rel(complex(ajk(p, z, j, k)), reexpand_ajk(p, z, w, j, k), a_sc))
        worst["T_antisymmetry"] = max(worst["T_antisymmetry"],
                                      _rel(twist_T(p, z, xi), -twist_T(p, xi, z),
                                           _twist_scale(p, z, xi), _twist_scale(p, xi, z)))
    return {k: float(v) for k, v in worst.items()}
