import numpy as np
import pytest

from heatlab.model import (ModelKernel, TailError, TauQuadrature, boxb_kernel, default_tau_max,
                           ibp_check, model_decay_check, model_samples, write_model_csv)
from heatlab.operators import assemble_box, make_grid
from heatlab.semigroup import heat_apply
from heatlab.weights import preset, twist_T

from oracles import landau_heat_abs


@pytest.fixture(scope="module")
def small():
    g = make_grid(3.0, 20)
    p = preset("abs2")
    return p, g, ModelKernel(p, g)


@pytest.mark.parametrize("rule", ["trapezoid", "gauss_legendre"])
def test_quadrature_symmetric_and_exact_for_polynomials(rule):
    q = TauQuadrature(2.0, 33 if rule == "trapezoid" else 32, rule, window="none")
    x, w = q.points()
    assert np.array_equal(x, -x[::-1])
    assert w.sum() == pytest.approx(4.0)
    if rule == "gauss_legendre":
        assert np.sum(w * x ** 4) == pytest.approx(2 * 2.0 ** 5 / 5)


def test_taper_window():
    q = TauQuadrature(10.0, 101, taper=0.2)
    v = q.window_values(np.array([0.0, 7.9, 9.0, 10.0]))
    assert v[0] == 1 and v[1] == 1
    assert v[2] == pytest.approx(0.5)
    assert v[3] == pytest.approx(0.0, abs=1e-15)


def test_refined_is_nested():
    q = TauQuadrature(4.0, 33)
    r = q.refined()
    assert r.nodes == 65
    assert np.all(np.isin(q.points()[0], r.points()[0]))
    assert TauQuadrature(4.0, 32, "gauss_legendre").refined().nodes == 64


@pytest.mark.parametrize("kwargs", [
    {"tau_max": 0.0}, {"tau_max": np.inf}, {"nodes": 8}, {"nodes": 64},
    {"rule": "simpson"}, {"window": "hann"}, {"taper": 1.0},
])
def test_quadrature_validation(kwargs):
    base = dict(tau_max=4.0, nodes=33)
    base.update(kwargs)
    with pytest.raises(ValueError):
        TauQuadrature(**base)


def test_negative_tau_columns_through_mirror(small):
    p, g, km = small
    w = g.nearest_index(0.5 - 0.3j)
    direct = heat_apply(assemble_box(p, -0.8, g, "Box", "schrodinger"), g.delta(w), 0.4)
    assert np.allclose(km.column(-0.8, w, 0.4), direct, rtol=0, atol=1e-8 * np.abs(direct).max())


def test_prefetch_fills_cache(small):
    p, g, km = small
    w = g.nearest_index(0)
    km.prefetch([-1.0, 0.5, 1.0], w, [0.3, 0.6])
    assert all((t, w, s) in km._cols for t in (-1.0, 0.5, 1.0) for s in (0.3, 0.6))
    single = heat_apply(km._op(0.5), g.delta(w), 0.6)
    assert np.allclose(km.column(0.5, w, 0.6), single, atol=1e-9 * np.abs(single).max())


def test_zero_tau_slice_is_free_heat(small):
    # p enters only through tau p, so tau = 0 gives the plain heat kernel of -Delta/4
    p, g, km = small
    w = g.nearest_index(0)
    col = km.column(0.0, w, 0.05)
    # e^{-s(-Delta/4)} is a Gaussian of variance s/2 per axis
    assert col[w].real == pytest.approx(1 / (np.pi * 0.05), rel=0.05)


def test_diagonal_conjugate_symmetry_in_t(small):
    p, g, km = small
    q = TauQuadrature(8.0, 33)
    v = boxb_kernel(p, 0.5, 0.3, 0.3, [-1.0, 1.0], q, g, kernel=km, check_tail=False)
    assert v[0] == pytest.approx(np.conj(v[1]), rel=1e-10)


def test_swap_symmetry(small):
    # H(s, z, w, t) = conj H(s, w, z, -t)
    p, g, km = small
    q = TauQuadrature(8.0, 33)
    a = boxb_kernel(p, 0.5, 0.6, -0.6j, 0.7, q, g, kernel=km, check_tail=False)
    b = boxb_kernel(p, 0.5, -0.6j, 0.6, -0.7, q, g, kernel=km, check_tail=False)
    assert a == pytest.approx(np.conj(b), rel=1e-6)


def test_scalar_and_vector_t(small):
    p, g, km = small
    q = TauQuadrature(8.0, 33)
    a = boxb_kernel(p, 0.5, 0, 0, 0.2, q, g, kernel=km, check_tail=False)
    b = boxb_kernel(p, 0.5, 0, 0, [0.2], q, g, kernel=km, check_tail=False)
    assert np.ndim(a) == 0 and b.shape == (1,) and a == b[0]


def test_short_window_raises_tail_error(small):
    p, g, km = small
    with pytest.raises(TailError):
        boxb_kernel(p, 0.5, 0.6, -0.6, 0.0, TauQuadrature(0.5, 17), g, kernel=km)
    with pytest.raises(ValueError):
        boxb_kernel(p, 0.0, 0, 0, 0.0, TauQuadrature(4.0, 17), g, kernel=km)


def test_model_samples_drop_and_raise(small):
    p, g, km = small
    quad = lambda s, z, w: TauQuadrature(0.5, 17)
    with pytest.raises(TailError):
        model_samples(p, g, quad, [0.5], [(0.6, -0.6)], [0.0], kernel=km)
    with pytest.raises(TailError):
        model_samples(p, g, quad, [0.5], [(0.6, -0.6)], [0.0], kernel=km, on_tail="drop")
    with pytest.raises(ValueError):
        model_samples(p, g, quad, [0.5], [(0.6, -0.6)], [0.0], kernel=km, on_tail="ignore")


def test_model_samples_rows_and_csv(small, tmp_path):
    p, g, km = small
    quad = lambda s, z, w: TauQuadrature(8.0, 33)
    out = model_samples(p, g, quad, [0.5, 1.0], [(0.6, -0.6)], np.linspace(-1, 1, 5),
                        kernel=km, check_tail=False)
    assert len(out["value"]) == 10 and out["dropped"] == 0
    rows = np.loadtxt(write_model_csv(tmp_path / "m.csv", out, p), delimiter=",", skiprows=1)
    assert rows.shape == (10, 10)


def test_decay_check_on_landau_like_samples(rng):
    # synthetic magnitudes with Gaussian decay in |z - w|^2 / s
    p = preset("abs2")
    n = 60
    s = rng.uniform(0.3, 2, n)
    z = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
    w = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
    t = rng.uniform(-3, 3, n) - twist_T(p, w, z)
    v = landau_heat_abs(s, np.abs(z - w), 1.0) / (1 + (t + twist_T(p, w, z)) ** 2)
    reps = model_decay_check(p, {"s": s, "z": z, "w": w, "t": t, "value": v})
    assert set(reps) == {1, 2, "nagel_stein"}
    assert reps[1].verdict == "pass" and reps[1].fitted_c > 0.01
    assert np.isnan(reps["nagel_stein"].fitted_c)
    with pytest.raises(ValueError):
        model_decay_check(p, {"s": s[:5], "z": z[:5], "w": w[:5], "t": t[:5], "value": v[:5]})


def test_ibp_rejects_resonant_t(small):
    p, g, km = small
    with pytest.raises(ValueError):
        ibp_check(p, 0.5, 0.6, 0.6, 0.0, TauQuadrature(8.0, 33), g, kernel=km)


def test_default_tau_max_scales_inversely():
    p = preset("abs2")
    # Lambda(0, r) = r^2 for |z|^2
    for s in (0.25, 1.0, 4.0):
        assert default_tau_max(p, 0, s) == pytest.approx(8.0 / s)
