import numpy as np
import pytest

from conftest import perturbed_grid
from oracles import bilinear_lattice_point
from tpswarp.geometry import ControlGrid, FeatureMap, GeometryError, make_regular_grid, regular_lattice
from tpswarp.hierarchy import (
    HeadSchedule,
    RecordedPredictor,
    ZeroPredictor,
    compose_head,
    run_cascade,
    upsample_control_points,
    zero_delta,
)


def offset_grid(n, t):
    return ControlGrid(n, n, regular_lattice(n, n) + t)


def test_upsample_identity():
    up = upsample_control_points(make_regular_grid(10, 10), 12, 12)
    assert up.equals(make_regular_grid(12, 12))


def test_upsample_constant_offset():
    up = upsample_control_points(offset_grid(10, [0.07, -0.03]), 12, 12)
    np.testing.assert_allclose(up.displacement(), np.tile([0.07, -0.03], (144, 1)), atol=1e-12)


def test_upsample_random_matches_cell_oracle():
    rng = np.random.default_rng(0)
    g = perturbed_grid(10, 10, rng)
    up = upsample_control_points(g, 16, 16)
    field = g.displacement().reshape(10, 10, 2)
    got = up.displacement().reshape(16, 16, 2)
    for r in range(16):
        for c in range(16):
            np.testing.assert_allclose(got[r, c], bilinear_lattice_point(field, r, c, 16, 16), atol=1e-12)


def test_upsample_exact_on_bilinear_fields():
    lat = regular_lattice(6, 6)
    x, y = lat[:, 0], lat[:, 1]
    disp = np.stack([0.1 + 0.2 * x - 0.05 * y + 0.03 * x * y, -0.04 * x + 0.1 * y * x], axis=1)
    up = upsample_control_points(ControlGrid(6, 6, lat + disp), 11, 13)
    ul = regular_lattice(11, 13)
    ux, uy = ul[:, 0], ul[:, 1]
    expected = np.stack([0.1 + 0.2 * ux - 0.05 * uy + 0.03 * ux * uy, -0.04 * ux + 0.1 * uy * ux], axis=1)
    np.testing.assert_allclose(up.displacement(), expected, atol=1e-12)


def test_upsample_same_size_is_identity():
    g = perturbed_grid(5, 5, np.random.default_rng(1))
    assert upsample_control_points(g, 5, 5).equals(g)


def test_upsample_rejects_downsampling():
    with pytest.raises(GeometryError):
        upsample_control_points(make_regular_grid(10, 10), 8, 8)


def test_compose_zero_delta_is_upsample():
    g = perturbed_grid(10, 10, np.random.default_rng(2))
    assert compose_head(g, zero_delta(12)).equals(upsample_control_points(g, 12, 12))


def test_compose_identity_plus_delta():
    d = ControlGrid(12, 12, np.tile([0.01, 0.02], (144, 1)))
    out = compose_head(make_regular_grid(10, 10), d)
    np.testing.assert_allclose(out.points, regular_lattice(12, 12) + [0.01, 0.02], atol=1e-15)


def test_compose_random_elementwise():
    rng = np.random.default_rng(3)
    prev = perturbed_grid(8, 8, rng)
    delta = ControlGrid(10, 10, rng.normal(0, 0.01, (100, 2)))
    up = upsample_control_points(prev, 10, 10).points
    out = compose_head(prev, delta).points
    for i in range(100):
        for k in range(2):
            assert out[i, k] == up[i, k] + delta.points[i, k]


def test_compose_size_mismatch():
    with pytest.raises(GeometryError):
        compose_head(make_regular_grid(10, 10), zero_delta(8))


def features(seed=0, h=16, w=16, c=3):
    return FeatureMap(np.random.default_rng(seed).normal(size=(h, w, c)))


def test_cascade_zero_predictors_never_move():
    sched = HeadSchedule.default()
    stages = run_cascade(features(), sched, [ZeroPredictor(*s) for s in sched.sizes])
    for s, size in zip(stages, sched.sizes):
        assert s.equals(make_regular_grid(*size))


def test_cascade_constant_offset_propagates():
    sched = HeadSchedule([10, 12, 14, 16])
    t = np.array([0.05, -0.02])
    preds = [ZeroPredictor(10), RecordedPredictor(ControlGrid(12, 12, np.tile(t, (144, 1)))),
             ZeroPredictor(14), ZeroPredictor(16)]
    stages = run_cascade(features(), sched, preds)
    assert stages[0].equals(make_regular_grid(10, 10))
    for s in stages[1:]:
        np.testing.assert_allclose(s.displacement(), np.tile(t, (len(s), 1)), atol=1e-12)


def test_cascade_reference_schedule_sizes():
    rng = np.random.default_rng(4)
    sizes = [10, 12, 14, 16]
    preds = [RecordedPredictor(ControlGrid(n, n, rng.normal(0, 0.01, (n * n, 2)))) for n in sizes]
    stages = run_cascade(features(), HeadSchedule(sizes), preds)
    assert [len(s) for s in stages] == [100, 144, 196, 256]


def test_cascade_passes_warped_features():
    seen = []

    class Spy:
        def __init__(self, n, delta):
            self.n, self.delta = n, delta

        def __call__(self, f):
            seen.append(f.data.copy())
            return ControlGrid(self.n, self.n, np.tile(self.delta, (self.n * self.n, 1)))

    f = features(5)
    run_cascade(f, HeadSchedule([10, 12]), [Spy(10, [0.2, 0.0]), Spy(12, [0.0, 0.0])])
    assert np.array_equal(seen[0], f.data)  # initial identity grid: unwarped
    assert not np.allclose(seen[1], f.data)  # second head sees shifted features


def test_cascade_deterministic():
    rng = np.random.default_rng(5)
    preds = [RecordedPredictor(ControlGrid(n, n, rng.normal(0, 0.02, (n * n, 2)))) for n in (10, 12)]
    a = run_cascade(features(), HeadSchedule([10, 12]), preds)
    b = run_cascade(features(), HeadSchedule([10, 12]), preds)
    assert all(x.equals(y) for x, y in zip(a, b))


def test_cascade_rejects_wrong_size_output():
    with pytest.raises(GeometryError):
        run_cascade(features(), HeadSchedule([10]), [ZeroPredictor(12)])
    with pytest.raises(GeometryError):
        run_cascade(features(), HeadSchedule([10, 12]), [ZeroPredictor(10)])


def test_schedule_validation():
    with pytest.raises(GeometryError):
        HeadSchedule([12, 10])
    with pytest.raises(GeometryError):
        HeadSchedule([1, 4])
    assert HeadSchedule([(4, 6), (6, 6)]).sizes == ((4, 6), (6, 6))
