"""Tensor and autodiff layer: oracles, hand values, and gradient checks."""

import numpy as np
import pytest

from textspot import autodiff as ad
from textspot.autodiff import (
    Parameter, Tensor, backward, bilinear_sample, conv2d, sgd_momentum_step,
    zero_grads,
)
from fdcheck import check_grads


def conv2d_oracle(x, k, stride=1, padding=0):
    """Naive quadruple-loop convolution, the independent reference."""
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((oh, ow, cout))
    for oy in range(oh):
        for ox in range(ow):
            for i in range(kh):
                for j in range(kw):
                    for ci in range(cin):
                        out[oy, ox, :] += xp[oy * stride + i, ox * stride + j, ci] * k[i, j, ci, :]
    return out


class TestConv2d:
    def test_identity_1x1(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 5, 3))
        k = np.eye(3).reshape(1, 1, 3, 3)
        out = conv2d(Tensor(x), Tensor(k))
        np.testing.assert_allclose(out.data, x, atol=0)

    def test_constant_input_box_kernel(self):
        x = np.full((6, 6, 1), 3.25)
        k = np.full((3, 3, 1, 1), 1.0 / 9.0)
        out = conv2d(Tensor(x), Tensor(k))
        np.testing.assert_allclose(out.data, 3.25, atol=1e-12)

    @pytest.mark.parametrize("shape,kshape,stride,padding", [
        ((5, 5, 2), (3, 3, 2, 3), 1, 0),
        ((8, 6, 3), (3, 3, 3, 4), 2, 1),
        ((7, 7, 1), (5, 5, 1, 2), 1, 2),
        ((6, 9, 2), (2, 4, 2, 2), 3, 0),
        ((5, 5, 2), (1, 1, 2, 5), 2, 0),
    ])
    def test_matches_naive_oracle(self, shape, kshape, stride, padding):
        rng = np.random.default_rng(42)
        x = rng.normal(size=shape)
        k = rng.normal(size=kshape)
        out = conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, k, stride, padding), atol=1e-12)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channel"):
            conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))

    def test_kernel_larger_than_padded_input_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            conv2d(Tensor(np.zeros((2, 2, 1))), Tensor(np.zeros((5, 5, 1, 1))))

    def test_gradients(self):
        rng = np.random.default_rng(7)
        for stride, padding in [(1, 0), (2, 1), (1, 2)]:
            x = rng.normal(size=(5, 6, 2))
            k = rng.normal(size=(3, 3, 2, 2))
            r = rng.normal(size=conv2d(Tensor(x), Tensor(k), stride, padding).shape)
            check_grads(
                lambda xt, kt: (conv2d(xt, kt, stride, padding) * r).sum(),
                [x, k])


class TestBilinearSample:
    def test_integer_grid_exact(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(5, 6, 3))
        out = bilinear_sample(Tensor(m), [(2.0, 3.0)])
        np.testing.assert_array_equal(out.data[0], m[2, 3])

    def test_midpoint_is_mean(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(3, 3, 2))
        out = bilinear_sample(Tensor(m), [(0.0, 0.5)])
        np.testing.assert_allclose(out.data[0], (m[0, 0] + m[0, 1]) / 2, atol=1e-15)

    def test_hand_weights_2x2(self):
        m = np.arange(4, dtype=np.float64).reshape(2, 2, 1)
        out = bilinear_sample(Tensor(m), [(0.25, 0.75)])
        expect = (0.75 * 0.25 * m[0, 0] + 0.75 * 0.75 * m[0, 1]
                  + 0.25 * 0.25 * m[1, 0] + 0.25 * 0.75 * m[1, 1])
        np.testing.assert_allclose(out.data[0], expect, atol=1e-15)

    def test_out_of_bounds_clamps(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(4, 4, 1))
        out = bilinear_sample(Tensor(m), [(-3.0, -5.0), (10.0, 99.0)])
        np.testing.assert_allclose(out.data[0], m[0, 0], atol=1e-15)
        np.testing.assert_allclose(out.data[1], m[3, 3], atol=1e-15)

    def test_empty_points(self):
        out = bilinear_sample(Tensor(np.zeros((3, 3, 2))), [])
        assert out.data.shape == (0, 2)

    def test_gradients_wrt_map(self):
        rng = np.random.default_rng(4)
        m = rng.normal(size=(4, 5, 2))
        pts = np.column_stack([rng.uniform(0.1, 2.7, 6), rng.uniform(0.1, 3.7, 6)])
        r = rng.normal(size=(6, 2))
        check_grads(lambda mt: (bilinear_sample(mt, pts) * r).sum(), [m])


class TestElementwise:
    def test_softmax_uniform(self):
        out = ad.softmax(Tensor(np.full(4, 1.7)))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-12)

    def test_sigmoid_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    def test_softmax_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        e = np.exp(x)
        np.testing.assert_allclose(ad.softmax(Tensor(x)).data, e / e.sum(), atol=1e-12)

    def test_softmax_normalized_random(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(7, 9)) * 10
        y = ad.softmax(Tensor(x)).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)

    def test_incompatible_shapes_rejected(self):
        with pytest.raises(ValueError):
            ad.add(Tensor(np.zeros((3, 2))), Tensor(np.zeros((4,))))

    def test_trailing_broadcast_add(self):
        rng = np.random.default_rng(6)
        x, b = rng.normal(size=(4, 3, 2)), rng.normal(size=(2,))
        out = ad.add(Tensor(x), Tensor(b))
        np.testing.assert_allclose(out.data, x + b, atol=0)

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ad.log(Tensor(np.array([1.0, 0.0])))


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_sum_hand_grad(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=0)

    def test_accumulates_until_zeroed(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        backward(x.sum())
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, [2.0])
        x.zero_grad()
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, [1.0])

    def test_non_scalar_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError):
            backward(x * 2.0)

    def test_diamond_graph(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * 3.0
        backward((y * y + y).sum())
        # d/dx (9x^2 + 3x) = 18x + 3
        np.testing.assert_allclose(x.grad, [39.0], atol=1e-12)

    def test_composed_graphs_match_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a = rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.01
            b = rng.normal(size=(4, 2))
            c = rng.normal(size=(2,))

            def build(at, bt, ct):
                h = ad.relu(ad.matmul(at, bt) + ct)
                return (ad.softmax(h) * ad.sigmoid(h)).sum() + ad.tanh(at).mean()

            check_grads(build, [a, b, c])


class TestShapeOps:
    def test_concat_and_pad_grads(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 4))
        r = rng.normal(size=(2, 5, 6))
        check_grads(
            lambda at, bt: (ad.zero_pad(ad.concat([at, bt], axis=2), ((0, 0), (1, 1), (0, 0))) * r).sum(),
            [a, b])

    def test_gather_rows_repeats_accumulate(self):
        x = Tensor(np.array([[1.0], [2.0], [3.0]]), requires_grad=True)
        out = ad.gather_rows(x, [0, 0, 2])
        backward(out.sum())
        np.testing.assert_array_equal(x.grad, [[2.0], [0.0], [1.0]])

    def test_upsample2x_forward_and_grad(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 3, 2))
        up = ad.upsample2x(Tensor(x))
        assert up.data.shape == (4, 6, 2)
        np.testing.assert_array_equal(up.data[1, 1], x[0, 0])
        r = rng.normal(size=(4, 6, 2))
        check_grads(lambda t: (ad.upsample2x(t) * r).sum(), [x])

    def test_reductions_and_max_grads(self):
        rng = np.random.default_rng(11)
        x = rng.permutation(24).astype(np.float64).reshape(4, 6)  # unique values
        check_grads(lambda t: t.max() * 2.0 + t.mean() + t.sum(axis=1).sum(), [x])
        check_grads(lambda t: t.max(axis=0).sum(), [x])


class TestLossPrimitives:
    def test_smooth_l1_values(self):
        p = Tensor(np.array([0.5, 3.0, -2.0]))
        out = ad.smooth_l1(p, np.zeros(3))
        np.testing.assert_allclose(out.data, [0.125, 2.5, 1.5], atol=1e-12)

    def test_loss_gradients(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(8,)) * 2
        x = x + np.sign(x) * 0.01  # keep away from smooth-l1 kink region edges
        t = rng.normal(size=(8,))
        check_grads(lambda xt: ad.smooth_l1(xt, t).sum(), [x])
        z = (rng.uniform(size=8) > 0.5).astype(float)
        check_grads(lambda xt: ad.bce_with_logits(xt, z).mean(), [x])
        logits = rng.normal(size=(5, 3))
        labels = rng.integers(0, 3, 5)
        check_grads(lambda lt: ad.softmax_cross_entropy(lt, labels).mean(), [logits])
        probs = rng.uniform(0.05, 0.95, size=(9,))
        zz = (rng.uniform(size=9) > 0.5).astype(float)
        check_grads(lambda pt: ad.binary_cross_entropy(pt, zz).mean(), [probs])


class TestSgdMomentum:
    def _param(self, value):
        p = Parameter("w", np.array([value]))
        return p

    def test_plain_gradient_step(self):
        p = self._param(5.0)
        p.tensor.grad = np.array([1.0])
        sgd_momentum_step([p], lr=0.1, momentum=0.0)
        np.testing.assert_allclose(p.tensor.data, [4.9], atol=1e-15)

    def test_momentum_recursion_two_steps(self):
        p = self._param(0.0)
        for expected_v, expected_x in [(-0.1, -0.1), (-0.19, -0.29)]:
            p.tensor.grad = np.array([1.0])
            sgd_momentum_step([p], lr=0.1, momentum=0.9)
            np.testing.assert_allclose(p.velocity, [expected_v], atol=1e-15)
            np.testing.assert_allclose(p.tensor.data, [expected_x], atol=1e-15)

    def test_zero_grad_zero_velocity_is_noop(self):
        p = self._param(1.5)
        p.tensor.grad = np.zeros(1)
        sgd_momentum_step([p], lr=0.1, momentum=0.9)
        np.testing.assert_array_equal(p.tensor.data, [1.5])

    def test_missing_grad_rejected(self):
        p = self._param(1.0)
        with pytest.raises(ValueError, match="no gradient"):
            sgd_momentum_step([p], lr=0.1, momentum=0.9)

    def test_zero_grads(self):
        p = self._param(1.0)
        p.tensor.grad = np.ones(1)
        zero_grads([p])
        assert p.tensor.grad is None


class TestNoGrad:
    def test_no_tape_inside_context(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = (x * x).sum()
        assert not y.requires_grad
        assert y._backward is None
