import math

import numpy as np
import pytest

from graddiv import network
from graddiv.network import (
    ActivationKind,
    Dataset,
    NetworkShape,
    WeightStack,
    activation_eval,
    batch_gradients,
    c_sup,
    forward,
    per_example_gradient,
    product_matrix,
    sample_teacher,
)
from graddiv.rng import SeedKey, generator

BOUNDED = (ActivationKind.TANH, ActivationKind.SOFTSIGN, ActivationKind.ARCTAN)
ALL_KINDS = tuple(ActivationKind)


def random_net(kind, key, max_width=4, max_hidden=2):
    gen = generator(key)
    depth = int(gen.integers(1, max_hidden + 2))
    widths = [int(gen.integers(2, max_width + 1)) for _ in range(depth)] + [1]
    shape = NetworkShape(tuple(widths), kind)
    mats = tuple(0.7 * gen.standard_normal(dims) for dims in shape.layer_dims())
    w = WeightStack(mats, shape)
    x = gen.standard_normal(widths[0])
    y = float(gen.standard_normal())
    return w, x, y


def fd_gradient(weights, x, y, h=1e-5):
    flat = weights.flat()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        lu = 0.5 * (forward(weights.replace_flat(up), x) - y) ** 2
        ld = 0.5 * (forward(weights.replace_flat(down), x) - y) ** 2
        grad[i] = (lu - ld) / (2 * h)
    return grad


def test_activation_eval_examples():
    assert activation_eval(ActivationKind.TANH, 0.0) == (0.0, 1.0)
    assert activation_eval(ActivationKind.SOFTSIGN, 1.0) == (0.5, 0.25)
    assert activation_eval(ActivationKind.RELU, -2.0) == (0.0, 0.0)


def test_relu_derivative_at_zero_is_zero():
    assert activation_eval(ActivationKind.RELU, 0.0) == (0.0, 0.0)


def test_odd_symmetry_of_bounded_activations():
    x = np.linspace(-100, 100, 4001)
    for kind in BOUNDED:
        total = network.activation_value(kind, x) + network.activation_value(kind, -x)
        assert np.max(np.abs(total)) < 1e-12


def test_bounds_on_grid():
    x = np.linspace(-100, 100, 20001)
    for kind in BOUNDED:
        values = network.activation_value(kind, x)
        assert np.max(np.abs(values)) <= kind.c_max + 1e-12
        slope_weighted = x * network.activation_derivative(kind, x)
        bound = c_sup(kind)
        assert math.isfinite(bound)
        assert np.max(slope_weighted) <= bound + 1e-12


def test_c_sup_unbounded_kinds():
    assert c_sup(ActivationKind.LINEAR) == math.inf
    assert c_sup(ActivationKind.RELU) == math.inf


def test_forward_hand_case():
    shape = NetworkShape((2, 2, 1), ActivationKind.LINEAR)
    w = WeightStack((np.eye(2), np.array([[1.0, 1.0]])), shape)
    assert forward(w, (3.0, 4.0)) == pytest.approx(7.0)


def test_forward_zero_tanh_net():
    shape = NetworkShape((3, 4, 1), ActivationKind.TANH)
    w = WeightStack((np.zeros((4, 3)), np.zeros((1, 4))), shape)
    assert forward(w, (1.0, -2.0, 0.5)) == 0.0


def test_linear_collapse_to_product_matrix():
    for seed in range(5):
        shape = NetworkShape((4, 3, 5, 1), ActivationKind.LINEAR)
        w = sample_teacher(shape, SeedKey(seed))
        x = generator(SeedKey(seed, 1)).standard_normal(4)
        direct = forward(w, x)
        collapsed = float((product_matrix(w) @ x)[0])
        assert direct == pytest.approx(collapsed, rel=1e-12)


def test_gradient_zero_at_interpolation():
    shape = NetworkShape((2, 2, 1), ActivationKind.LINEAR)
    w = WeightStack((np.eye(2), np.array([[1.0, 0.0]])), shape)
    rec = per_example_gradient(w, (3.0, 4.0), 3.0)  # prediction equals target
    assert rec.loss == 0.0
    assert np.all(rec.gradient == 0.0)


def test_gradient_hand_case():
    # ŷ = 1, y = 0: hidden entry (1,1) gets residual * W2_{1,1} * x_1 = 1,
    # output entry (1,1) gets residual * (W1 x)_1 = 1
    shape = NetworkShape((2, 2, 1), ActivationKind.LINEAR)
    w = WeightStack((np.eye(2), np.array([[1.0, 2.0]])), shape)
    rec = per_example_gradient(w, (1.0, 0.0), 0.0)
    assert rec.prediction == pytest.approx(1.0)
    assert rec.loss == pytest.approx(0.5)
    grad = rec.gradient
    assert grad[0] == pytest.approx(1.0)  # W_{1,1,1}
    assert grad[4] == pytest.approx(1.0)  # W_{2,1,1}
    assert grad[1] == pytest.approx(0.0)  # W_{1,1,2}: x_2 = 0


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
def test_gradient_matches_finite_differences(kind):
    checked = 0
    attempt = 0
    while checked < 10:
        attempt += 1
        assert attempt < 300, "could not find enough well-conditioned configurations"
        w, x, y = random_net(kind, SeedKey(1000 + attempt, hash(kind.value) % 1000))
        if kind is ActivationKind.RELU:
            H, Z, _ = network._forward_pass(w, np.atleast_2d(np.asarray(x)))
            if any(np.min(np.abs(z)) < 1e-4 for z in Z):
                continue
        rec = per_example_gradient(w, x, y)
        fd = fd_gradient(w, x, y)
        if np.min(np.abs(fd)) < 1e-2:
            continue
        rel = np.abs(rec.gradient - fd) / np.abs(fd)
        assert np.max(rel) <= 1e-6
        checked += 1


def test_batch_gradients_semantics():
    shape = NetworkShape((3, 2, 1), ActivationKind.TANH)
    w = sample_teacher(shape, SeedKey(3))
    X = generator(SeedKey(4)).standard_normal((5, 3))
    y = generator(SeedKey(5)).standard_normal(5)
    data = Dataset(X, y)

    assert batch_gradients(w, data, []) == []

    single = batch_gradients(w, data, [2])[0]
    direct = per_example_gradient(w, X[2], float(y[2]))
    assert np.allclose(single.gradient, direct.gradient, rtol=1e-12)
    assert single.loss == pytest.approx(direct.loss)

    dup = batch_gradients(w, data, [1, 1])
    assert np.array_equal(dup[0].gradient, dup[1].gradient)

    with pytest.raises(ValueError):
        batch_gradients(w, data, [5])
    with pytest.raises(ValueError):
        batch_gradients(w, data, [-1])


def test_sample_teacher_deterministic_and_standard():
    shape = NetworkShape((2, 2, 1), ActivationKind.LINEAR)
    a = sample_teacher(shape, SeedKey(9))
    b = sample_teacher(shape, SeedKey(9))
    assert all(np.array_equal(x, y) for x, y in zip(a.matrices, b.matrices))

    entries = np.array([sample_teacher(shape, SeedKey(9).child(i)).matrices[0][0, 0] for i in range(10_000)])
    assert abs(entries.var() - 1.0) < 0.1


def test_gradient_moments_match_explicit_gradients():
    shape = NetworkShape((4, 3, 1), ActivationKind.SOFTSIGN)
    w = sample_teacher(shape, SeedKey(12))
    X = generator(SeedKey(13)).standard_normal((7, 4))
    Y = generator(SeedKey(14)).standard_normal((7, 1))
    losses, grads, _ = network.per_example_flat_gradients(w, X, Y)
    sum_sq, flat_sum, total_loss = network.gradient_moments(w, X, Y, chunk=3)
    assert sum_sq == pytest.approx(float(np.square(grads).sum()), rel=1e-12)
    assert np.allclose(flat_sum, grads.sum(axis=0), rtol=1e-12)
    assert total_loss == pytest.approx(float(losses.sum()), rel=1e-12)


def test_shape_validation():
    with pytest.raises(ValueError):
        NetworkShape((3,), ActivationKind.LINEAR)
    with pytest.raises(ValueError):
        NetworkShape((3, 0, 1), ActivationKind.LINEAR)
    with pytest.raises(ValueError):
        WeightStack((np.zeros((2, 2)),), NetworkShape((2, 2, 1), ActivationKind.LINEAR))
    with pytest.raises(ValueError):
        forward(sample_teacher(NetworkShape((2, 2, 1)), SeedKey(0)), (1.0, 2.0, 3.0))
