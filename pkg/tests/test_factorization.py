import numpy as np
import pytest

from heatlab.factorization import (DecoupledWeight, FormIndex, ProductKernel, StateTooLarge,
                                   box_D_apply, component_kind, form_indices, kronecker_factors,
                                   product_kernel, tensor_kernel, write_samples_csv)
from heatlab.operators import assemble_box, make_grid
from heatlab.weights import preset

J_SETS = [(), (1,), (2,), (1, 2)]


@pytest.fixture(scope="module")
def setup2():
    w = DecoupledWeight((preset("abs2"), preset("abs4")), 1.0)
    grids = [make_grid(2.5, 16), make_grid(2.5, 16)]
    return w, grids


@pytest.mark.parametrize("J", J_SETS)
def test_product_matches_tensor_exponential(setup2, J):
    w, grids = setup2
    FI = FormIndex(2, J)
    s = 0.4
    src = (grids[0].nearest_index(0.3 + 0.3j), grids[1].nearest_index(-0.5 + 0j))
    T = tensor_kernel(w, FI, s, src, grids)
    pk = ProductKernel(w, FI, s, grids)
    ws = tuple(g.points[i] for g, i in zip(grids, src))
    worst = 0.0
    for a in range(0, grids[0].size, 7):
        for b in range(0, grids[1].size, 11):
            z = (grids[0].points[a], grids[1].points[b])
            if max(abs(z[0].real), abs(z[0].imag), abs(z[1].real), abs(z[1].imag)) > 2.0:
                continue
            worst = max(worst, abs(pk(z, ws) - T[a, b]))
    assert worst <= 1e-6 * np.abs(T).max()


def test_tensor_kernel_against_eigen_expansion():
    # the Kronecker sum exponentiated through the joint eigenbasis, dense
    p = preset("abs2")
    w = DecoupledWeight((p, p), 0.7)
    grids = [make_grid(2.0, 8), make_grid(2.0, 8)]
    A = assemble_box(p, 0.7, grids[0], "Box", "schrodinger").dense()
    B = assemble_box(p, 0.7, grids[1], "BoxTilde", "factored").dense()
    la, Va = np.linalg.eigh(A)
    lb, Vb = np.linalg.eigh(B)
    src = (10, 20)
    c = np.outer(Va[src[0]].conj(), Vb[src[1]].conj()) / (grids[0].h ** 2 * grids[1].h ** 2)
    ref = Va @ (np.exp(-0.3 * (la[:, None] + lb[None, :])) * c) @ Vb.T
    got = tensor_kernel(w, FormIndex(2, (1,)), 0.3, src, grids)
    assert np.abs(got - ref).max() <= 1e-10 * np.abs(ref).max()


def test_kronecker_factors_commute(setup2):
    w, grids = setup2
    A, B = kronecker_factors(w, FormIndex(2, (2,)), grids)
    assert abs(A @ B - B @ A).max() < 1e-9 * abs(A).max() * abs(B).max()


def test_box_D_apply_matches_tensor(setup2):
    w, grids = setup2
    FI = FormIndex(2, (1,))
    src = (grids[0].nearest_index(0), grids[1].nearest_index(0.4j))
    F = np.zeros((256, 256), dtype=complex)
    F[src] = 1 / (grids[0].h ** 2 * grids[1].h ** 2)
    out = box_D_apply(w, 1, {(1,): F}, 0.4, grids)
    assert set(out) == {(1,), (2,)}
    assert not np.any(out[(2,)])
    T = tensor_kernel(w, FI, 0.4, src, grids)
    assert np.abs(out[(1,)] - T).max() <= 1e-6 * np.abs(T).max()


def test_product_kernel_three_axes():
    p = preset("abs2")
    w = DecoupledWeight((p, p, p), 1.0)
    grids = [make_grid(2.0, 10)] * 3
    z, ws = (0.2, 0.1j, -0.3), (0.0, 0.2, 0.1j)
    val = product_kernel(w, FormIndex(3, (2,)), 0.5, z, ws, grids)
    one = [ProductKernel(DecoupledWeight((p,), 1.0), FormIndex(1, J), 0.5, grids[:1])
           for J in [(), (1,), ()]]
    ref = np.prod([k((zk,), (wk,)) for k, zk, wk in zip(one, z, ws)])
    assert val == pytest.approx(ref, rel=1e-12)


def test_form_indices_and_kinds():
    assert [J.J for J in form_indices(3, 2)] == [(1, 2), (1, 3), (2, 3)]
    J = FormIndex(3, (2,))
    assert [component_kind(J, k) for k in (1, 2, 3)] == ["BoxTilde", "Box", "BoxTilde"]
    with pytest.raises(ValueError):
        component_kind(J, 4)


@pytest.mark.parametrize("n, J", [(2, (2, 1)), (2, (1, 1)), (2, (3,)), (2, (0,))])
def test_form_index_validation(n, J):
    with pytest.raises(ValueError):
        FormIndex(n, J)


def test_decoupled_weight_validation():
    with pytest.raises(ValueError):
        DecoupledWeight((), 1.0)
    with pytest.raises(ValueError):
        DecoupledWeight((preset("abs2"),) * 4, 1.0)
    with pytest.raises(TypeError):
        DecoupledWeight(("abs2",), 1.0)


def test_guards(setup2):
    w, grids = setup2
    with pytest.raises(StateTooLarge):
        tensor_kernel(w, FormIndex(2), 0.1, (0, 0), grids, max_state=1000)
    with pytest.raises(ValueError):
        ProductKernel(w, FormIndex(2), 0.0, grids)
    pk = ProductKernel(w, FormIndex(2), 0.1, grids)
    with pytest.raises(ValueError):
        pk((2.4, 0), (0, 0))
    with pytest.raises(ValueError):
        box_D_apply(w, 1, {(1, 2): np.zeros((256, 256))}, 0.1, grids)


def test_samples_csv(tmp_path):
    path = write_samples_csv(tmp_path / "k.csv", [((0.1j, 1.0), (0, 0.5), 0.25 - 1j)])
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:4] == ["z1_re", "z1_im", "z2_re", "z2_im"]
    assert [float(x) for x in lines[1].split(",")] == [0, 0.1, 1, 0, 0, 0, 0.5, 0, 0.25, -1]
    with pytest.raises(ValueError):
        write_samples_csv(tmp_path / "e.csv", [])
