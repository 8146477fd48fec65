import numpy as np
import pytest

from gradcheck import relative_errors
from oracles import classifier_reference
from tpswarp.classifier import (
    TaskLabel,
    TrainConfig,
    accuracy,
    classifier_backward,
    classifier_forward,
    classifier_logits,
    count_parameters,
    init_params,
    pool_features,
    predict_task,
    train_classifier,
    zero_params,
)
from tpswarp.geometry import ControlGrid, FeatureMap, GeometryError, regular_lattice

SMALL = dict(pointwise_dims=(6, 5, 8), head_dims=(7, 5))
MEDIUM = dict(pointwise_dims=(16, 16, 32), head_dims=(32, 16))


def random_points(rng, n=12):
    return rng.uniform(-1.2, 1.2, (n, 2))


def finite_difference_check(params, points, label, global_feat=None):
    worst, checked, skipped = relative_errors(params, points, label, global_feat)
    assert checked > 0.9 * (checked + skipped)
    return worst


def test_zero_network_gives_uniform_label():
    logits, label = classifier_forward(zero_params(), regular_lattice(4, 4))
    assert np.array_equal(logits, np.zeros(6))
    np.testing.assert_allclose(label.probs, np.full(6, 1 / 6), atol=1e-15)


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    p = init_params(1, **SMALL)
    pts = random_points(rng, 25)
    base = classifier_logits(p, pts)
    for _ in range(20):
        assert np.abs(classifier_logits(p, pts[rng.permutation(25)]) - base).max() <= 1e-12


def test_forward_matches_reference():
    rng = np.random.default_rng(2)
    p = init_params(3, **SMALL)
    pts = random_points(rng)
    np.testing.assert_allclose(classifier_logits(p, pts), classifier_reference(p, pts), atol=1e-10)


def test_forward_with_global_feature_matches_reference():
    rng = np.random.default_rng(4)
    p = init_params(5, **SMALL, global_input_dim=4, global_dim=3)
    pts = random_points(rng)
    g = rng.normal(size=4)
    np.testing.assert_allclose(classifier_logits(p, pts, g), classifier_reference(p, pts, g), atol=1e-10)
    with pytest.raises(GeometryError):
        classifier_logits(p, pts)


def test_full_size_forward_matches_reference():
    rng = np.random.default_rng(6)
    p = init_params(7)
    pts = random_points(rng, 4)
    np.testing.assert_allclose(classifier_logits(p, pts), classifier_reference(p, pts), atol=1e-10)


def test_batched_logits_match_single():
    rng = np.random.default_rng(8)
    p = init_params(9, **SMALL)
    batch = rng.uniform(-1, 1, (5, 10, 2))
    out = classifier_logits(p, batch)
    for i in range(5):
        np.testing.assert_allclose(out[i], classifier_logits(p, batch[i]), atol=1e-13)


def test_zero_network_output_bias_gradient():
    grads = classifier_backward(zero_params(), regular_lattice(3, 3), 2)
    expected = np.full(6, 1 / 6)
    expected[2] -= 1.0
    np.testing.assert_allclose(grads[11], expected, atol=1e-15)  # bias of the last head layer


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    p = init_params(seed, **SMALL)
    for w, b in p.layers():
        b += rng.normal(0, 0.1, b.shape)
    assert finite_difference_check(p, random_points(rng), int(rng.integers(6))) <= 1e-4


def test_kinked_stencils_are_detected():
    # a ReLU input placed inside the stencil: one-sided slopes differ, so it must be skipped
    p = init_params(0, pointwise_dims=(3,), head_dims=(4,))
    pts = np.array([[0.2, -0.4], [0.5, 0.1]])
    w, b = p.pointwise[0]
    b[0] = -(pts[0] @ w[0]) + 2e-6
    b[1:] = 1.0 - np.minimum(pts @ w[1:].T, 0).min(0)  # other units strictly active
    def pick(a):
        return [(0,)] if a is b else []
    worst, checked, skipped = relative_errors(p, pts, 1, pick=pick)
    assert skipped == 1 and checked == 0


def test_gradients_with_global_feature():
    rng = np.random.default_rng(11)
    p = init_params(12, **SMALL, global_input_dim=3, global_dim=2)
    assert finite_difference_check(p, random_points(rng), 4, rng.normal(size=3)) <= 1e-4


def test_tie_break_routes_gradient_to_lowest_index():
    rng = np.random.default_rng(13)
    p = init_params(14, **SMALL)
    pts = random_points(rng, 6)
    dup = np.vstack([pts, pts])  # every max is tied between i and i + 6
    grads_dup = classifier_backward(p, dup, 1)
    grads = classifier_backward(p, pts, 1)
    for a, b in zip(grads_dup, grads):
        np.testing.assert_allclose(a, b, atol=1e-14)
    # the winning copies alone carry the gradient: removing the second half changes nothing
    from tpswarp.classifier import _forward

    _, cache = _forward(p, dup[None], None)
    assert cache["idx"].max() < 6


def test_predict_task_ties_and_shift():
    assert predict_task(zero_params(), regular_lattice(3, 3)) == 0
    assert TaskLabel.one_hot(4).argmax() == 4
    rng = np.random.default_rng(15)
    p = init_params(16, **SMALL)
    pts = random_points(rng)
    shifted = p.copy()
    shifted.head[-1][1][:] += 7.3
    assert predict_task(p, pts) == predict_task(shifted, pts)


def test_task_label_validation():
    with pytest.raises(GeometryError):
        TaskLabel(np.full(6, 0.2))
    with pytest.raises(GeometryError):
        TaskLabel(np.ones(5) / 5)


def test_softmax_valid_for_extreme_logits():
    p = zero_params()
    p.head[-1][1][:] = [800.0, -800.0, 0.0, 1e3, -1e3, 5.0]
    _, label = classifier_forward(p, regular_lattice(2, 2))
    assert label.argmax() == 3


def test_parameter_count():
    p = init_params(0)
    dims = [2, 256, 256, 512]
    head = [512, 512, 256, 6]
    expected = sum(a * b + b for a, b in zip(dims, dims[1:])) + sum(a * b + b for a, b in zip(head, head[1:]))
    assert count_parameters(p) == expected == 593670


def test_pool_features():
    data = np.zeros((3, 3, 2))
    data[1, 2] = [4.0, -1.0]
    assert pool_features(FeatureMap(data)).tolist() == [4.0, 0.0]


def toy_dataset(n, rng, rows=4):
    """Two linearly separable classes: grids shifted left (0) or right (1)."""
    out = []
    for i in range(n):
        label = i % 2
        shift = (-0.4 if label == 0 else 0.4) + rng.uniform(-0.1, 0.1)
        pts = regular_lattice(rows, rows) * 0.5 + [shift, rng.uniform(-0.2, 0.2)]
        out.append((ControlGrid(rows, rows, pts), label))
    return out


def test_train_separable_toy():
    rng = np.random.default_rng(16)
    train, test = toy_dataset(40, rng), toy_dataset(20, rng)
    cfg = TrainConfig(epochs=50, lr=1e-3, batch_size=8, seed=3)
    p, rep = train_classifier(train, cfg, test_set=test, params=init_params(3, **MEDIUM))
    assert accuracy(p, test) == 1.0
    assert rep.final_loss <= rep.initial_loss


def test_train_sgd_reduces_loss():
    rng = np.random.default_rng(17)
    train = toy_dataset(20, rng)
    cfg = TrainConfig(epochs=20, lr=0.05, batch_size=4, optimizer="sgd", cosine=False)
    p, rep = train_classifier(train, cfg, params=init_params(0, **SMALL))
    assert min(rep.epoch_loss) < rep.initial_loss


def test_train_zero_epochs_returns_init():
    rng = np.random.default_rng(18)
    init = init_params(5, **SMALL)
    p, rep = train_classifier(toy_dataset(6, rng), TrainConfig(epochs=0), params=init)
    for a, b in zip(p.flat(), init.flat()):
        assert np.array_equal(a, b)
    assert rep.epoch_loss == []


def test_train_deterministic():
    rng = np.random.default_rng(19)
    data = toy_dataset(12, rng)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=2)
    a, _ = train_classifier(data, cfg, params=init_params(2, **SMALL))
    b, _ = train_classifier(data, cfg, params=init_params(2, **SMALL))
    assert all(np.array_equal(x, y) for x, y in zip(a.flat(), b.flat()))


def test_train_errors():
    with pytest.raises(ValueError):
        train_classifier([])
    rng = np.random.default_rng(20)
    one_class = [item for item in toy_dataset(6, rng) if item[1] == 0]
    with pytest.raises(ValueError):
        train_classifier(one_class, TrainConfig(epochs=1))
