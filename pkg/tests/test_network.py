import numpy as np
import pytest

from disguise_id.errors import ContractError, TrainingDivergence
from disguise_id.network import LayerSpec, Regressor, conv, default_layers, init_velocity, sgd_step

from oracles import mini_problem, numeric_gradients, relative_errors


def _fraction(kinks, model):
    return kinks / sum(p[0].size + p[1].size for p in model.params if p is not None)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_float64(seed):
    model, x, up = mini_problem(seed)
    num, kinks = numeric_gradients(model, x, up)
    model.forward(x)
    assert max(relative_errors(model.backward(up), num)) <= 1e-8
    assert _fraction(kinks, model) < 0.1


@pytest.mark.parametrize("seed", [0, 3])
def test_gradients_float32(seed):
    model, x, up = mini_problem(seed)
    num, _ = numeric_gradients(model, x, up)
    m32 = model.astype(np.float32)
    m32.forward(x.astype(np.float32))
    grads = m32.backward(up.astype(np.float32))
    assert all(g is None or g[0].dtype == np.float32 for g in grads)
    assert max(relative_errors(grads, num)) <= 1e-4


def test_default_shape_algebra():
    model = Regressor(default_layers(), (256, 256, 3))
    assert model.output_size == (64, 64, 14)
    assert len(model.conv_indices) == 8
    assert Regressor(default_layers(0.5), (128, 128, 3)).output_size == (32, 32, 14)


def test_default_forward_shape():
    model = Regressor(default_layers(0.25), (256, 256, 3), output_gain=1.0)
    out = model.forward(np.random.default_rng(0).random((1, 256, 256, 3)))
    assert out.shape == (1, 64, 64, 14)


def test_zero_weights_zero_output():
    model = Regressor(default_layers(0.25), (32, 32, 3))
    for p in model.params:
        if p is not None:
            p[0][:] = 0
    assert not model.forward(np.random.default_rng(0).random((2, 32, 32, 3))).any()


def test_forward_deterministic():
    model, x, _ = mini_problem(4)
    assert np.array_equal(model.forward(x), model.forward(x))


def test_wrong_input_shape():
    model, _, _ = mini_problem(0)
    with pytest.raises(ContractError):
        model.forward(np.zeros((1, 9, 8, 2)))


def test_backward_needs_forward():
    model, _, up = mini_problem(0)
    with pytest.raises(ContractError):
        model.backward(up)


def test_zero_upstream_zero_gradients():
    model, x, up = mini_problem(1)
    model.forward(x)
    for g in model.backward(np.zeros_like(up)):
        assert g is None or not (g[0].any() or g[1].any())


def test_gradient_linear_in_upstream():
    model, x, up = mini_problem(2)
    model.forward(x)
    g1 = model.backward(up)
    g2 = model.backward(2 * up)
    for a, b in zip(g1, g2):
        if a is not None:
            np.testing.assert_allclose(b[0], 2 * a[0], rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(b[1], 2 * a[1], rtol=1e-12, atol=1e-12)


def test_architecture_checks():
    with pytest.raises(ContractError):
        Regressor([conv(3, 4, 3), conv(5, 2, 1)], (8, 8, 3))
    with pytest.raises(ContractError):
        Regressor([conv(3, 4, 3), LayerSpec("maxpool")], (7, 8, 3))
    with pytest.raises(ContractError):
        conv(3, 4, 2)
    with pytest.raises(ContractError):
        LayerSpec("dense")


def _one_weight():
    model = Regressor([conv(1, 1, 1)], (1, 1, 1), dtype=np.float64, output_gain=0.0)
    model.params[0][0][:] = 0.0
    return model


def _unit_grad():
    return [(np.ones((1, 1, 1, 1)), np.zeros(1))]


def test_sgd_plain_step():
    model = _one_weight()
    sgd_step(model, _unit_grad(), init_velocity(model), lr=1.0, momentum=0.0)
    assert model.params[0][0].item() == -1.0


def test_sgd_momentum_two_steps():
    model = _one_weight()
    vel = init_velocity(model)
    sgd_step(model, _unit_grad(), vel, lr=1.0, momentum=0.9)
    sgd_step(model, _unit_grad(), vel, lr=1.0, momentum=0.9)
    assert model.params[0][0].item() == pytest.approx(-2.9, abs=1e-15)


def test_sgd_zero_gradient():
    model, _, _ = mini_problem(0)
    before = model.copy()
    zeros = [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1])) for p in model.params]
    sgd_step(model, zeros, init_velocity(model), lr=0.1, momentum=0.9)
    for a, b in zip(model.params, before.params):
        if a is not None:
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_sgd_non_finite_names_layer():
    model, _, _ = mini_problem(0)
    before = model.copy()
    grads = [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1])) for p in model.params]
    grads[3][0][0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergence, match="layer 3"):
        sgd_step(model, grads, init_velocity(model), lr=0.1, momentum=0.9)
    assert np.array_equal(model.params[0][0], before.params[0][0])


def test_scale_output():
    model, x, _ = mini_problem(5)
    np.testing.assert_allclose(model.scale_output(0.5).forward(x), 0.5 * model.forward(x), rtol=1e-12)
