import numpy as np
import pytest

from satfusion import autograd as ag
from satfusion.autograd import Parameter, Tensor, backward, tensor

from conftest import finite_difference_check


def param(rng, shape, name="p"):
    return Parameter(name, rng.normal(size=shape))


class TestTensorBasics:
    def test_nonfinite_leaf_rejected(self):
        with pytest.raises(ValueError):
            tensor([1.0, float("inf")])

    def test_backward_requires_scalar(self):
        t = tensor([[1.0, 2.0]], requires_grad=True)
        with pytest.raises(ValueError):
            t.backward()

    def test_backward_twice_without_reset_errors(self):
        t = tensor([3.0], requires_grad=True)
        loss = ag.sum_(t)
        loss.backward()
        with pytest.raises(RuntimeError):
            loss.backward()

    def test_sum_gradient_is_ones(self):
        p = Parameter("p", np.arange(6.0).reshape(2, 3))
        loss = ag.sum_(p.tensor)
        loss.backward()
        np.testing.assert_array_equal(p.gradient, np.ones((2, 3)))

    def test_off_graph_parameter_gets_zero_gradient(self):
        used = Parameter("used", np.ones(3))
        unused = Parameter("unused", np.ones(2))
        loss = ag.sum_(used.tensor)
        backward(loss, [used, unused])
        np.testing.assert_array_equal(unused.gradient, np.zeros(2))
        np.testing.assert_array_equal(used.gradient, np.ones(3))

    def test_bce_gradient_at_even_odds(self):
        # sigmoid(0) = 0.5 with target 1: d(loss)/d(logit) = -0.5.
        logit = Parameter("z", np.zeros(1))
        loss = ag.bce_with_logits(logit.tensor, np.array([1.0]))
        loss.backward()
        np.testing.assert_allclose(logit.gradient, [-0.5], atol=1e-12)

    def test_shared_subexpression_accumulates(self):
        p = Parameter("p", np.array([2.0]))
        loss = ag.sum_(ag.add(ag.mul(p.tensor, p.tensor), p.tensor))  # x^2 + x
        loss.backward()
        np.testing.assert_allclose(p.gradient, [5.0])


class TestOpGradients:
    def test_add_broadcast(self, rng):
        a = param(rng, (4, 3), "a")
        b = param(rng, (3,), "b")
        finite_difference_check([a, b], lambda: ag.sum_(ag.tanh(ag.add(a.tensor, b.tensor))))

    def test_mul(self, rng):
        a = param(rng, (2, 5), "a")
        b = param(rng, (2, 5), "b")
        finite_difference_check([a, b], lambda: ag.sum_(ag.mul(a.tensor, b.tensor)))

    def test_sub_and_scale(self, rng):
        a = param(rng, (3, 2), "a")
        b = param(rng, (3, 2), "b")
        finite_difference_check([a, b], lambda: ag.sum_(ag.scale(ag.sub(a.tensor, b.tensor), 2.5)))

    def test_matmul(self, rng):
        a = param(rng, (4, 3), "a")
        b = param(rng, (3, 2), "b")
        finite_difference_check([a, b], lambda: ag.sum_(ag.tanh(ag.matmul(a.tensor, b.tensor))))

    def test_sigmoid_relu_tanh(self, rng):
        a = param(rng, (3, 3), "a")
        finite_difference_check([a], lambda: ag.sum_(ag.sigmoid(a.tensor)))
        for p in [a]:
            p.zero_grad()
        finite_difference_check([a], lambda: ag.sum_(ag.tanh(a.tensor)))
        shifted = Parameter("s", rng.normal(size=(3, 3)) + 0.5)  # keep away from the relu kink
        finite_difference_check([shifted], lambda: ag.sum_(ag.relu(shifted.tensor)))

    def test_concat_narrow_reshape_transpose(self, rng):
        a = param(rng, (2, 3), "a")
        b = param(rng, (2, 2), "b")

        def forward():
            joined = ag.concat([a.tensor, b.tensor], axis=1)
            piece = ag.narrow(joined, 1, 1, 3)
            return ag.sum_(ag.tanh(ag.transpose(ag.reshape(piece, (3, 2)))))

        finite_difference_check([a, b], forward)

    def test_gather_rows_scatter_adds(self, rng):
        table = param(rng, (5, 3), "t")
        idx = np.array([0, 2, 2, 4])

        def forward():
            return ag.sum_(ag.tanh(ag.gather_rows(table.tensor, idx)))

        finite_difference_check([table], forward)

    def test_softmax_gradient(self, rng):
        a = param(rng, (3, 4), "a")
        weights = rng.normal(size=(3, 4))

        def forward():
            return ag.sum_(ag.mul(ag.softmax(a.tensor, axis=1), Tensor(weights)))

        finite_difference_check([a], forward)

    def test_masked_softmax_zeroes_invalid_positions(self, rng):
        a = param(rng, (2, 4), "a")
        mask = np.array([[1.0, 1.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0]])
        out = ag.softmax(a.tensor, axis=1, mask=mask)
        np.testing.assert_allclose(out.values[mask == 0], 0.0)
        np.testing.assert_allclose(out.values.sum(axis=1), 1.0, atol=1e-12)

    def test_bce_with_logits_matches_finite_differences(self, rng):
        z = param(rng, (6,), "z")
        y = (rng.random(6) > 0.5).astype(float)
        w = rng.uniform(0.5, 2.0, size=6)
        finite_difference_check([z], lambda: ag.bce_with_logits(z.tensor, y, w))

    def test_mean_matches_manual(self, rng):
        a = param(rng, (4, 2), "a")
        finite_difference_check([a], lambda: ag.mean_(ag.mul(a.tensor, a.tensor)))


class TestDeterminism:
    def test_forward_deterministic(self, rng):
        a = tensor(rng.normal(size=(8, 8)))
        b = tensor(rng.normal(size=(8, 8)))
        first = ag.tanh(ag.matmul(a, b)).values
        second = ag.tanh(ag.matmul(a, b)).values
        np.testing.assert_array_equal(first, second)
