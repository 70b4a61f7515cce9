import numpy as np
import pytest

from momrev.autodiff import finite_diff_loss_grad
from momrev.datasets import make_lista_problem
from momrev.errors import ValidationError
from momrev.models import LinearHead, MomentumModel, RevNetModel, lista_network, mlp_network, revnet_lista
from momrev.momentum_net import Network
from momrev.revarith import Ratio
from momrev.trainer import LassoLoss, LogisticLoss

G = Ratio(9, 10)


class TestLinearHead:
    def test_vjp(self, rng):
        head = LinearHead.random(3, rng)
        x, g = rng.standard_normal((5, 3)), rng.standard_normal(5)
        dx, grads = head.vjp(x, g)
        np.testing.assert_allclose(dx, g[:, None] * head.w)
        fd = finite_diff_loss_grad(lambda q: float(head.with_parameters(q)(x) @ g), head.parameters())
        np.testing.assert_allclose(grads["w"], fd["w"], rtol=1e-7)
        np.testing.assert_allclose(grads["c"], fd["c"], rtol=1e-7)


class TestMomentumModel:
    def test_parameter_names(self, rng):
        untied = MomentumModel(mlp_network(2, 3, 2, G, rng), head=LinearHead.random(2, rng))
        assert sorted(untied.parameters()) == sorted(
            ["block0.W1", "block0.W2", "block0.b", "block1.W1", "block1.W2", "block1.b", "head.w", "head.c"]
        )
        tied = MomentumModel(mlp_network(2, 3, 4, G, rng, tied=True))
        assert sorted(tied.parameters()) == ["block.W1", "block.W2", "block.b"]

    def test_with_parameters_keeps_tying(self, rng):
        model = MomentumModel(mlp_network(2, 3, 4, G, rng, tied=True))
        params = {k: v + 1.0 for k, v in model.parameters().items()}
        rebuilt = model.with_parameters(params)
        assert rebuilt.network.tied
        assert all(b is rebuilt.network.blocks[0] for b in rebuilt.network.blocks)
        np.testing.assert_array_equal(rebuilt.parameters()["block.W1"], params["block.W1"])

    def test_depth_zero_is_head_only(self, rng):
        head = LinearHead.random(2, rng)
        X = rng.standard_normal((6, 2))
        model = MomentumModel(Network(()), head=head, dim=2)
        np.testing.assert_allclose(model.predict(X), head(X), atol=1e-8)
        _, grads = model.loss_and_grad(X, np.array([0, 1, 0, 1, 1, 0]), LogisticLoss())
        assert sorted(grads) == ["head.c", "head.w"]

    def test_depth_zero_needs_dim(self):
        with pytest.raises(ValidationError):
            MomentumModel(Network(()))

    def test_layer_states(self, rng):
        model = MomentumModel(mlp_network(2, 3, 5, G, rng, frac_bits=32))
        X = rng.standard_normal((4, 2))
        states = model.layer_states(X)
        assert len(states) == 6
        np.testing.assert_allclose(states[0], X, atol=2.0 ** -32)
        np.testing.assert_allclose(states[-1], model.transform(X))

    def test_unknown_modes(self, rng):
        net = mlp_network(2, 3, 1, G, rng)
        with pytest.raises(ValidationError):
            MomentumModel(net, backward="checkpointed")
        with pytest.raises(ValidationError):
            MomentumModel(net, input_mode="label")


class TestRevNetLista:
    def test_shapes_and_gradients(self):
        problem = make_lista_problem(d=3, p=4, n_train=5, n_test=5)
        model = RevNetModel(revnet_lista(problem, 2), dim=problem.p, input_mode="context")
        y = problem.y_train[:3]
        assert model.predict(y).shape == (3, 4)
        value, grads = model.loss_and_grad(y, y, LassoLoss(problem))
        assert np.isfinite(value)
        assert set(grads) == set(model.parameters())
        assert "layer1.psi.W2" in grads

    def test_momentum_lista_parameter_count(self):
        problem = make_lista_problem(d=3, p=4, n_train=5, n_test=5)
        lista = MomentumModel(lista_network(problem, 3, G), input_mode="context", backward="stored")
        revnet = RevNetModel(revnet_lista(problem, 3), dim=problem.p, input_mode="context")
        assert 2 * len(lista.parameters()) == len(revnet.parameters())
