"""Exact integer identities for alternating binomial sums and the gamma table."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

__all__ = [
    "alt_binom_sum",
    "gamma_recursive",
    "gamma_closed",
    "gamma_row_sum",
    "GammaTable",
    "identity_sweep",
]


def _check_nk(n, k):
    if not (isinstance(n, int) and isinstance(k, int)):
        raise TypeError("n and k must be int")
    if n < 0 or k < 0 or k > n:
        raise ValueError(f"need 0 <= k <= n, got n={n}, k={k}")


def _check_nkj(n, k, j):
    _check_nk(n, k)
    if not isinstance(j, int) or j < 0 or j > n - k:
        raise ValueError(f"need 0 <= j <= n-k, got n={n}, k={k}, j={j}")


def alt_binom_sum(n, k):
    """sum_{j=k}^n (-1)^j C(n,j) C(j,k), exactly."""
    _check_nk(n, k)
    return sum((-1) ** j * comb(n, j) * comb(j, k) for j in range(k, n + 1))


@lru_cache(maxsize=None)
def _gamma(n, k, j):
    # zero outside the triangle 0 <= k <= n, 0 <= j <= n - k
    if n < 0 or k < 0 or j < 0 or k > n or j > n - k:
        return 0
    if n == 0:
        return 1
    return _gamma(n - 1, k, j) - _gamma(n - 1, k, j - 1) - _gamma(n - 1, k - 1, j)


def gamma_recursive(n, k, j):
    _check_nkj(n, k, j)
    return _gamma(n, k, j)


def gamma_closed(n, k, j):
    _check_nkj(n, k, j)
    return (-1) ** (j + k) * comb(n, k) * comb(n - k, j)


def gamma_row_sum(n, k):
    """sum_{j=0}^{n-k} gamma_j^{n,k}; equals (-1)^n at k = n and 0 otherwise."""
    _check_nk(n, k)
    return sum(gamma_recursive(n, k, j) for j in range(n - k + 1))


@dataclass
class GammaTable:
    n: int
    entries: dict = field(default_factory=dict)

    @classmethod
    def build(cls, n):
        _check_nk(n, 0)
        return cls(n, {(k, j): gamma_recursive(n, k, j)
                       for k in range(n + 1) for j in range(n - k + 1)})


def identity_sweep(n_max=20):
    """Run every exact identity for n <= n_max; returns a JSON-ready dict."""
    checks = {"alt_binom_sum": True, "gamma_closed_vs_recursive": True,
              "gamma_row_sum": True}
    failures = []
    for n in range(n_max + 1):
        for k in range(n + 1):
            brute = 0
            for j in range(k, n + 1):
                brute += (-1) ** j * comb(n, j) * comb(j, k)
            expect = (-1) ** n if k == n else 0
            if alt_binom_sum(n, k) != brute or brute != expect:
                checks["alt_binom_sum"] = False
                failures.append(["alt_binom_sum", n, k])
            for j in range(n - k + 1):
                if gamma_closed(n, k, j) != gamma_recursive(n, k, j):
                    checks["gamma_closed_vs_recursive"] = False
                    failures.append(["gamma", n, k, j])
            if gamma_row_sum(n, k) != ((-1) ** n if k == n else 0):
                checks["gamma_row_sum"] = False
                failures.append(["gamma_row_sum", n, k])
    return {"n_max": n_max,
            "checks": {k: ("pass" if v else "fail") for k, v in checks.items()},
            "failures": failures}
