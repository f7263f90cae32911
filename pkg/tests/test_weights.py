import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatlab.weights import (PRESETS, ModelPoint, WeightPolynomial, ajk, ajk_table, delta_scale,
                             e_fn, e_fn_reexpanded, lambda_big, lambda_comparability_constant,
                             laplacian, load_weight, metric_dM, mu, preset, r_fn,
                             random_identity_sweep, random_subharmonic, reexpand_ajk, twist_T)

coord = st.floats(-1.5, 1.5, allow_nan=False)
points = st.builds(complex, coord, coord)


def direct_value(p, z):
    """p(z) straight from the stored coefficients about the origin."""
    z = complex(z)
    return sum(v * z ** j * np.conj(z) ** k for (j, k), v in p.coeffs.items()).real


@pytest.mark.parametrize("name, z, expected", [
    ("abs2", 1 + 2j, 5.0),
    ("abs4", 1 + 1j, 4.0),
    ("nonradial", 0.5 + 0.5j, 0.5625),
])
def test_preset_values(name, z, expected):
    assert preset(name)(z) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("name", sorted(PRESETS))
@given(z=points, u=points)
def test_taylor_coefficients_reproduce_translates(name, z, u):
    # p(z + u) = sum_jk A_jk(z) u^j conj(u)^k
    p = preset(name)
    T = ajk_table(p, z)
    d = p.degree
    val = sum(T[j, k] * u ** j * np.conj(u) ** k for j in range(d + 1) for k in range(d + 1 - j))
    assert val.real == pytest.approx(direct_value(p, z + u), rel=1e-11, abs=1e-11)
    assert abs(val.imag) < 1e-10 * max(1.0, abs(val))


@pytest.mark.parametrize("j, k, z, expected", [
    (1, 1, 1.0, 4.0),    # |z|^4: d^2/dz dzbar = 4 |z|^2
    (2, 1, 1.0, 2.0),
    (2, 2, 0.3, 1.0),
    (3, 1, 1.0, 0.0),
    (0, 0, 2.0, 16.0),
])
def test_ajk_frozen_abs4(abs4, j, k, z, expected):
    assert ajk(abs4, z, j, k) == pytest.approx(expected)


def test_ajk_beyond_degree_is_zero(abs2):
    assert ajk(abs2, 0.7, 2, 1) == 0
    assert reexpand_ajk(abs2, 0.7, 0.1, 3, 0) == 0


def test_ajk_rejects_negative_index(abs2):
    with pytest.raises(ValueError):
        ajk(abs2, 0, -1, 0)


@given(z=points, w=points)
def test_reexpansion_about_new_centre(z, w):
    p = preset("nonradial")
    for j in range(3):
        for k in range(3):
            assert reexpand_ajk(p, z, w, j, k) == pytest.approx(complex(ajk(p, z, j, k)), abs=1e-11)


def test_lambda_and_mu_frozen(abs2, abs4):
    assert lambda_big(abs4, 1.0, 1.0) == pytest.approx(9.0)
    assert lambda_big(abs4, 0.0, 1.0) == pytest.approx(1.0)
    assert mu(abs2, 0.3, 0.5) == pytest.approx(np.sqrt(0.5))
    assert mu(abs4, 0.0, 0.5) == pytest.approx(0.5 ** 0.25)
    assert delta_scale(abs2, 0.0, 0.25, 1.0) == pytest.approx(0.5)


def test_lambda_comparability_counterexample(abs4):
    # e^2 is not enough; the binomial constant is, and is attained here
    lhs, rhs = lambda_big(abs4, 1.0, 1.0), lambda_big(abs4, 0.0, 1.0)
    assert lhs > np.e ** 2 * rhs
    assert lambda_comparability_constant(abs4) == 9
    assert lhs <= lambda_comparability_constant(abs4) * rhs + 1e-12


@pytest.mark.parametrize("name", sorted(PRESETS))
@given(z=points, w=points)
def test_lambda_comparability_holds(name, z, w):
    p = preset(name)
    d = abs(z - w)
    C = lambda_comparability_constant(p)
    assert lambda_big(p, z, d) <= C * lambda_big(p, w, d) * (1 + 1e-12) + 1e-300


@pytest.mark.parametrize("name", sorted(PRESETS))
@given(z=points, delta=st.floats(1e-3, 10))
def test_mu_is_approximate_inverse_of_lambda(name, z, delta):
    p = preset(name)
    nterms = sum(1 for j in range(1, p.degree) for k in range(1, p.degree + 1 - j)
                 if abs(ajk(p, z, j, k)) > 0)
    assert mu(p, z, lambda_big(p, z, delta)) >= delta * (1 - 1e-12)
    assert lambda_big(p, z, mu(p, z, delta)) <= nterms * delta * (1 + 1e-12)


@given(z=points, d1=st.floats(0, 5), d2=st.floats(0, 5))
def test_lambda_monotone(z, d1, d2):
    p = preset("abs4")
    lo, hi = sorted((d1, d2))
    assert lambda_big(p, z, lo) <= lambda_big(p, z, hi)


def test_twist_and_e_for_abs2(abs2):
    z, w = 0.3 - 0.4j, -0.7 + 0.2j
    assert twist_T(abs2, w, z) == pytest.approx(-2 * (np.conj(z) * w).imag)
    assert e_fn(abs2, w, z) == pytest.approx(w - z)
    assert twist_T(abs2, z, z) == 0


@given(z=points, xi=points, w=points)
def test_twist_decomposition(z, xi, w):
    p = preset("nonradial")
    lhs = twist_T(p, w, z)
    rhs = twist_T(p, w, xi) + twist_T(p, xi, z) - r_fn(p, w, xi, z)
    assert lhs == pytest.approx(rhs, abs=1e-10)
    assert twist_T(p, z, xi) == pytest.approx(-twist_T(p, xi, z), abs=1e-10)
    assert e_fn(p, w, xi) == pytest.approx(e_fn_reexpanded(p, w, xi), abs=1e-10)


def test_random_identity_sweep_below_threshold():
    worst = random_identity_sweep(200, seed=3)
    assert set(worst) == {"T_decomposition", "e_symmetry", "ajk_reexpansion", "T_antisymmetry"}
    assert max(worst.values()) < 1e-13


def test_metric_dM_for_abs2(abs2):
    z, w, t = 0.5, -0.5j, 0.7
    gap = abs(t + twist_T(abs2, w, z))
    assert metric_dM(abs2, z, w, t) == pytest.approx(abs(z - w) + np.sqrt(gap))


def test_laplacian_abs4(abs4):
    assert laplacian(abs4, 1 + 1j) == pytest.approx(16 * 2)


def test_mirror_weight(abs2):
    q = preset("nonradial").mirrored()
    for z in (0.3 + 0.8j, -1.1 + 0.2j):
        assert q(z) == pytest.approx(preset("nonradial")(-np.conj(z)))


@pytest.mark.parametrize("coeffs, msg", [
    ({(2, 0): 1.0, (0, 2): 1.0}, "harmonic"),
    ({(1, 1): -1.0}, "subharmonic"),
    ({(1, 1): 1.0, (2, 0): 1.0}, "real"),
    ({(-1, 1): 1.0}, "negative"),
])
def test_invalid_weights_rejected(coeffs, msg):
    with pytest.raises(ValueError, match=msg):
        WeightPolynomial(coeffs)


def test_load_weight_forms(tmp_path, abs2):
    path = tmp_path / "w.json"
    path.write_text('{"coeffs": [[1, 1, 1.0, 0.0]]}')
    for spec in ("abs2", {"preset": "abs2"}, {"coeffs": [[1, 1, 1.0, 0.0]]}, path):
        assert load_weight(spec)(1.5 - 0.5j) == pytest.approx(abs2(1.5 - 0.5j))
    with pytest.raises(ValueError):
        load_weight({"nope": 1})
    with pytest.raises(ValueError):
        preset("abs3")


def test_json_round_trip():
    p = preset("nonradial")
    q = load_weight(p.to_json())
    assert q.coeffs == pytest.approx(p.coeffs)


def test_random_subharmonic_is_valid(rng):
    for _ in range(5):
        p = random_subharmonic(rng, degree=6)
        assert p.check_subharmonic()


def test_model_point_rejects_nonfinite():
    with pytest.raises(ValueError):
        ModelPoint(complex(np.nan, 0), 0.0)
