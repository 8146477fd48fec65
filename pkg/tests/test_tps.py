import math

import numpy as np
import pytest

from oracles import naive_tps_eval, naive_tps_solve
from conftest import jittered_source, perturbed_grid
from tpswarp.geometry import ControlGrid, GeometryError, make_regular_grid
from tpswarp.tps import SingularSystemError, TpsTransform, eval_tps, radial_basis, solve_tps


def test_radial_basis_values():
    assert radial_basis(0.0) == 0.0
    assert radial_basis(1.0) == 0.0
    assert radial_basis(math.e) == pytest.approx(math.e ** 2, rel=1e-14)
    assert np.all(np.isfinite(radial_basis(np.array([0.0, 1e-300, 2.0]))))


def test_identity_pairing():
    g = make_regular_grid(5, 5)
    t = solve_tps(g, g)
    np.testing.assert_allclose(t.affine, [[1, 0, 0], [0, 1, 0]], atol=1e-12)
    assert np.abs(t.weights).max() <= 1e-10


@pytest.mark.parametrize("reg", [0.0, 0.3])
def test_identity_pairing_is_exact(reg):
    g = jittered_source(6, 5, np.random.default_rng(11))
    t = solve_tps(g, g, reg)
    assert not t.weights.any()
    assert np.array_equal(t.affine, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert np.array_equal(eval_tps(t, g), g.points)


def test_translation_absorbed_by_affine():
    g = make_regular_grid(4, 6)
    t = solve_tps(g, ControlGrid(4, 6, g.points + [0.3, -0.2]))
    np.testing.assert_allclose(t.affine, [[1, 0, 0.3], [0, 1, -0.2]], atol=1e-12)
    assert np.abs(t.weights).max() <= 1e-10


def test_random_fit_matches_dense_oracle():
    rng = np.random.default_rng(7)
    src = jittered_source(4, 4, rng)
    dst = ControlGrid(4, 4, src.points + rng.uniform(-0.1, 0.1, (16, 2)))
    t = solve_tps(src, dst)
    assert np.abs(eval_tps(t, src) - dst.points).max() <= 1e-9
    affine, w = naive_tps_solve(src.points.tolist(), dst.points)
    np.testing.assert_allclose(t.affine, affine, atol=1e-9)
    np.testing.assert_allclose(t.weights, w, atol=1e-9)


def test_side_conditions():
    rng = np.random.default_rng(3)
    src = jittered_source(6, 6, rng)
    dst = perturbed_grid(6, 6, rng)
    t = solve_tps(src, dst)
    assert t.side_condition_residual() <= 1e-8


def test_eval_identity_transform():
    t = TpsTransform([[1, 0, 0], [0, 1, 0]], np.zeros((4, 2)), make_regular_grid(2, 2).points)
    q = np.random.default_rng(0).uniform(-2, 2, (50, 2))
    np.testing.assert_allclose(eval_tps(t, q), q, atol=1e-12)


def test_eval_affine_only_matches_matrix_apply():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 3))
    t = TpsTransform(a, np.zeros((9, 2)), make_regular_grid(3, 3).points)
    q = rng.uniform(-1, 1, (100, 2))
    expected = [(a[0, 0] * x + a[0, 1] * y + a[0, 2], a[1, 0] * x + a[1, 1] * y + a[1, 2]) for x, y in q]
    np.testing.assert_allclose(eval_tps(t, q), expected, atol=1e-12)


def test_eval_matches_pointwise_oracle():
    rng = np.random.default_rng(11)
    src = jittered_source(5, 5, rng)
    t = solve_tps(src, perturbed_grid(5, 5, rng))
    q = rng.uniform(-1.2, 1.2, (40, 2))
    expected = [naive_tps_eval(t.affine, t.weights, t.centers, p) for p in q]
    np.testing.assert_allclose(eval_tps(t, q), expected, atol=1e-12)


def test_eval_is_linear_in_batch():
    rng = np.random.default_rng(2)
    t = solve_tps(jittered_source(4, 4, rng), perturbed_grid(4, 4, rng))
    a = rng.uniform(-1, 1, (17, 2))
    b = rng.uniform(-1, 1, (23, 2))
    assert np.array_equal(eval_tps(t, np.vstack([a, b])), np.vstack([eval_tps(t, a), eval_tps(t, b)]))


def test_affine_reproduction():
    rng = np.random.default_rng(9)
    src = jittered_source(6, 6, rng)
    m = rng.normal(size=(2, 2))
    tr = rng.normal(size=2)
    t = solve_tps(src, ControlGrid(6, 6, src.points @ m.T + tr))
    assert np.abs(t.weights).max() <= 1e-8
    q = rng.uniform(-1, 1, (1000, 2))
    assert np.abs(eval_tps(t, q) - (q @ m.T + tr)).max() <= 1e-8


def test_regularization_monotone_residual():
    rng = np.random.default_rng(4)
    src = jittered_source(6, 6, rng)
    dst = perturbed_grid(6, 6, rng, amount=0.2)
    residuals = []
    for reg in (0.0, 1e-6, 1e-3, 1e-1):
        t = solve_tps(src, dst, reg)
        residuals.append(float(((eval_tps(t, src) - dst.points) ** 2).sum()))
        assert t.side_condition_residual() <= 1e-8
    assert all(b >= a for a, b in zip(residuals, residuals[1:]))
    assert residuals[-1] > residuals[0]


def test_deterministic():
    rng = np.random.default_rng(8)
    src, dst = jittered_source(5, 5, rng), perturbed_grid(5, 5, rng)
    a, b = solve_tps(src, dst), solve_tps(src, dst)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.affine, b.affine)


def test_collinear_rejected():
    pts = np.column_stack([np.linspace(-1, 1, 9), np.zeros(9)])
    src = ControlGrid(3, 3, pts)
    with pytest.raises(SingularSystemError, match="singular system"):
        solve_tps(src, src)


def test_coincident_rejected():
    pts = make_regular_grid(3, 3).points.copy()
    pts[4] = pts[0]
    with pytest.raises(SingularSystemError):
        solve_tps(ControlGrid(3, 3, pts), make_regular_grid(3, 3))


def test_size_mismatch_rejected():
    with pytest.raises(GeometryError):
        solve_tps(make_regular_grid(3, 3), make_regular_grid(3, 4))
