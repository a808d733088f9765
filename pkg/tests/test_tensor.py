import numpy as np
import pytest

from msrkit import tensor as T
from msrkit.tensor import Tensor, backward, gradcheck, no_grad, zero_grads


def rand(shape, seed=0, lo=-1.5, hi=1.5):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, shape).astype(np.float32)


class TestElementwise:
    def test_add(self):
        out = T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_gelu_fixes_origin(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_mul_self_gradient(self):
        x = Tensor([3.0], requires_grad=True)
        backward(T.mul(x, x).sum())
        assert x.grad[0] == pytest.approx(6.0)
        rep = gradcheck(lambda t: T.mul(t, t).sum(), Tensor([3.0], requires_grad=True))
        assert rep.passed, rep

    def test_broadcast_add_gradient(self):
        x = Tensor(rand((3, 4), 1), requires_grad=True)
        b = Tensor(rand((4,), 2), requires_grad=True)
        out = T.add(x, b).sum()
        backward(out)
        np.testing.assert_allclose(b.grad, np.full(4, 3.0), atol=1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            T.matmul(Tensor(rand((2, 3))), Tensor(rand((2, 3))))

    @pytest.mark.parametrize(
        "name,fn,lo,hi",
        [
            ("add", lambda x: T.add(x, Tensor(rand(x.shape, 9))), -1.5, 1.5),
            ("sub", lambda x: T.sub(x, Tensor(rand(x.shape, 9))), -1.5, 1.5),
            ("mul", lambda x: T.mul(x, Tensor(rand(x.shape, 9))), -1.5, 1.5),
            ("div", lambda x: T.div(x, Tensor(np.full(x.shape, 1.7, np.float32))), -1.5, 1.5),
            ("neg", T.neg, -1.5, 1.5),
            ("relu", T.relu, 0.2, 1.5),
            ("gelu", T.gelu, -1.5, 1.5),
            ("tanh", T.tanh, -1.2, 1.2),
            ("exp", T.exp, -1.0, 1.0),
            ("log", T.log, 0.5, 2.0),
            ("abs", T.absolute, 0.2, 1.5),
            ("sqrt", T.sqrt, 0.5, 2.0),
            ("scale", lambda x: T.scale(x, 0.37), -1.5, 1.5),
            ("sin", T.sin, -1.5, 1.5),
        ],
    )
    def test_elementwise_gradcheck(self, name, fn, lo, hi):
        proj = Tensor(rand((7,), 5, 0.5, 1.5))
        x = Tensor(rand((7,), 3, lo, hi), requires_grad=True)
        rep = gradcheck(lambda t: T.mul(fn(t), proj).sum(), x, h=1e-3, tol=1e-3)
        assert rep.passed, f"{name}: {rep}"


class TestMatmul:
    def test_identity(self):
        x = rand((3, 3), 0)
        out = T.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(x))
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_hand_arithmetic(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_gradient_vs_fd(self):
        b = Tensor(rand((4, 3), 11))
        a = Tensor(rand((2, 4), 12), requires_grad=True)
        rep = gradcheck(lambda t: T.matmul(t, b).sum(), a, h=1e-3, tol=1e-3)
        assert rep.passed, rep
        a2 = Tensor(rand((2, 4), 13))
        b2 = Tensor(rand((4, 3), 14), requires_grad=True)
        rep = gradcheck(lambda t: T.matmul(a2, t).sum(), b2, h=1e-3, tol=1e-3)
        assert rep.passed, rep

    def test_batched_broadcast_gradient(self):
        a = Tensor(rand((5, 2, 3), 15), requires_grad=True)
        b = Tensor(rand((3, 4), 16), requires_grad=True)
        out = T.matmul(a, b)
        assert out.shape == (5, 2, 4)
        backward(out.sum())
        assert a.grad.shape == a.shape and b.grad.shape == b.shape
        rep = gradcheck(lambda t: T.matmul(a.detach(), t).sum(), Tensor(b.data.copy(), requires_grad=True))
        assert rep.passed, rep


class TestReductions:
    def test_sum(self):
        assert Tensor([1.0, 2.0, 3.0]).sum().item() == 6.0

    def test_mean_axis(self):
        out = Tensor(np.ones((2, 3), np.float32)).mean(axis=1)
        np.testing.assert_array_equal(out.data, [1.0, 1.0])

    def test_max_first_argmax_tiebreak(self):
        x = Tensor([1.0, 3.0, 3.0], requires_grad=True)
        backward(x.max())
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError):
            Tensor(np.ones((2, 2), np.float32)).sum(axis=5)

    def test_reduction_gradchecks(self):
        for fn in (lambda t: t.sum(), lambda t: t.mean(), lambda t: t.sum(axis=1).mean(),
                   lambda t: t.mean(axis=0).sum()):
            x = Tensor(rand((3, 5), 21), requires_grad=True)
            rep = gradcheck(fn, x, h=1e-3, tol=1e-3)
            assert rep.passed, rep


class TestLayerNormSoftmax:
    def test_constant_row_gives_bias(self):
        x = Tensor(np.full((2, 4), 3.0, np.float32))
        bias = Tensor(np.arange(4, dtype=np.float32))
        out = T.layer_norm(x, Tensor(np.ones(4, np.float32)), bias)
        np.testing.assert_allclose(out.data, np.tile(np.arange(4, dtype=np.float32), (2, 1)), atol=1e-5)

    def test_already_normalized_row(self):
        x = Tensor(np.array([[-1.0, 1.0]], np.float32))
        out = T.layer_norm(x, Tensor(np.ones(2, np.float32)), Tensor(np.zeros(2, np.float32)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    def test_layer_norm_gradient(self):
        gain = Tensor(rand((8,), 31, 0.5, 1.5))
        bias = Tensor(rand((8,), 32))
        x = Tensor(rand((2, 8), 33), requires_grad=True)
        rep = gradcheck(lambda t: T.mul(T.layer_norm(t, gain, bias), Tensor(rand((2, 8), 34, 0.5, 1.5))).sum(), x)
        assert rep.passed, rep
        g = Tensor(rand((8,), 31, 0.5, 1.5), requires_grad=True)
        x2 = Tensor(rand((2, 8), 33))
        rep = gradcheck(lambda t: T.layer_norm(x2, t, bias).sum(), g)
        assert rep.passed, rep

    def test_softmax_uniform(self):
        out = T.softmax(Tensor(np.zeros((1, 4), np.float32)), axis=-1)
        np.testing.assert_allclose(out.data, np.full((1, 4), 0.25), atol=1e-7)

    def test_softmax_closed_form(self):
        out = T.softmax(Tensor([[0.0, float(np.log(3.0))]]), axis=-1)
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-6)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(40)
        x = rng.normal(size=(3, 6)).astype(np.float32)
        c = np.float32(rng.normal())
        a = T.softmax(Tensor(x), axis=-1).data
        b = T.softmax(Tensor(x + c), axis=-1).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_softmax_gradient(self):
        x = Tensor(rand((2, 5), 41), requires_grad=True)
        proj = Tensor(rand((2, 5), 42, 0.5, 1.5))
        rep = gradcheck(lambda t: T.mul(T.softmax(t, axis=-1), proj).sum(), x)
        assert rep.passed, rep


class TestShapeOps:
    def test_reshape_preserves_order(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        np.testing.assert_array_equal(x.reshape(3, 2).data.reshape(-1), np.arange(6))

    def test_double_transpose_identity(self):
        x = rand((2, 3, 4), 50)
        out = T.transpose(T.transpose(Tensor(x), (2, 0, 1)), (1, 2, 0))
        np.testing.assert_array_equal(out.data, x)

    def test_split_concat_round_trip(self):
        x = Tensor(rand((2, 10), 51), requires_grad=True)
        parts = T.split(x, [3, 3, 4], axis=1)
        out = T.concat(parts, axis=1)
        np.testing.assert_array_equal(out.data, x.data)
        backward(out.sum())
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_shape_op_gradchecks(self):
        x = Tensor(rand((2, 6), 52), requires_grad=True)
        proj = Tensor(rand((3, 4), 53, 0.5, 1.5))
        rep = gradcheck(lambda t: T.mul(t.reshape(3, 4), proj).sum(), x)
        assert rep.passed, rep
        proj2 = Tensor(rand((6, 2), 54, 0.5, 1.5))
        rep = gradcheck(lambda t: T.mul(T.transpose(t, (1, 0)), proj2).sum(), x)
        assert rep.passed, rep
        rep = gradcheck(lambda t: T.narrow(t, 1, 2, 3).sum(), x)
        assert rep.passed, rep

    def test_take_gather_scatter(self):
        x = Tensor(rand((2, 8), 55), requires_grad=True)
        idx = np.array([[0, 1, 2], [2, 3, 0]])
        out = T.take(x, idx)
        assert out.shape == (2, 2, 3)
        proj = Tensor(rand((2, 2, 3), 56, 0.5, 1.5))
        rep = gradcheck(lambda t: T.mul(T.take(t, idx), proj).sum(), Tensor(x.data.copy(), requires_grad=True))
        assert rep.passed, rep

    def test_overlap_add_values_and_gradient(self):
        frames = Tensor(np.ones((2, 3, 4), np.float32), requires_grad=True)
        out = T.overlap_add(frames, hop=2, out_len=8)
        np.testing.assert_array_equal(out.data[0], [1, 1, 2, 2, 2, 2, 1, 1])
        proj = Tensor(rand((2, 8), 57, 0.5, 1.5))
        x = Tensor(rand((2, 3, 4), 58), requires_grad=True)
        rep = gradcheck(lambda t: T.mul(T.overlap_add(t, 2, 8), proj).sum(), x)
        assert rep.passed, rep


class TestFftOps:
    def test_rfft_matches_numpy(self):
        x = rand((3, 16), 60)
        out = T.rfft_pack(Tensor(x))
        ref = np.fft.rfft(x.astype(np.float64), axis=-1)
        np.testing.assert_allclose(out.data[..., 0], ref.real, atol=1e-4)
        np.testing.assert_allclose(out.data[..., 1], ref.imag, atol=1e-4)

    def test_irfft_round_trip(self):
        x = rand((2, 32), 61)
        back_ = T.irfft_pack(T.rfft_pack(Tensor(x)), 32)
        np.testing.assert_allclose(back_.data, x, atol=1e-6)

    def test_rfft_gradient(self):
        x = Tensor(rand((16,), 62), requires_grad=True)
        proj = Tensor(rand((9, 2), 63, 0.5, 1.5))
        rep = gradcheck(lambda t: T.mul(T.rfft_pack(t), proj).sum(), x)
        assert rep.passed, rep

    def test_irfft_gradient(self):
        x = Tensor(rand((9, 2), 64), requires_grad=True)
        proj = Tensor(rand((16,), 65, 0.5, 1.5))
        rep = gradcheck(lambda t: T.mul(T.irfft_pack(t, 16), proj).sum(), x)
        assert rep.passed, rep

    def test_complex_abs_values_and_gradient(self):
        x = Tensor(np.array([[3.0, 4.0], [0.5, -0.5]], np.float32))
        np.testing.assert_allclose(T.complex_abs(x).data, [5.0, np.hypot(0.5, 0.5)], atol=1e-6)
        y = Tensor(rand((5, 2), 66, 0.3, 1.5), requires_grad=True)
        proj = Tensor(rand((5,), 67, 0.5, 1.5))
        rep = gradcheck(lambda t: T.mul(T.complex_abs(t), proj).sum(), y)
        assert rep.passed, rep


class TestBackwardMachinery:
    def test_sum_seeds_ones(self):
        x = Tensor(rand((3,), 70), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(T.mul(x, x).sum())
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_accumulation_doubles(self):
        x = Tensor(rand((4,), 71), requires_grad=True)
        loss = T.mul(x, x).sum()
        backward(loss)
        first = x.grad.copy()
        loss2 = T.mul(x, x).sum()
        backward(loss2)
        np.testing.assert_allclose(x.grad, 2 * first, rtol=1e-6)
        zero_grads([x])
        assert x.grad is None

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError):
            backward(Tensor(rand((3,), 72), requires_grad=True))

    def test_no_mutation_of_inputs(self):
        x = Tensor(rand((3, 3), 73), requires_grad=True)
        snapshot = x.data.copy()
        out = T.gelu(T.matmul(x, Tensor(rand((3, 3), 74))))
        backward(out.sum())
        np.testing.assert_array_equal(x.data, snapshot)

    def test_no_grad_blocks_graph(self):
        x = Tensor(rand((3,), 75), requires_grad=True)
        with no_grad():
            out = T.mul(x, x).sum()
        assert not out.requires_grad
        backward(out)
        assert x.grad is None

    def test_diamond_graph_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = T.add(T.mul(x, x), x)  # x^2 + x -> grad 2x + 1 = 5
        backward(y.sum())
        assert x.grad[0] == pytest.approx(5.0)


class TestGradcheck:
    def test_linear_function_near_exact(self):
        rep = gradcheck(lambda t: t.sum(), Tensor(rand((5,), 80), requires_grad=True))
        assert rep.max_rel_err < 1e-6

    def test_sum_sin_passes_tight_tol(self):
        x = Tensor(rand((3,), 81), requires_grad=True)
        rep = gradcheck(lambda t: T.sin(t).sum(), x, h=1e-3, tol=1e-4)
        assert rep.passed, rep

    def test_planted_bug_fails(self):
        def buggy_relu(a):
            out = np.maximum(a.data, 0.0)
            return Tensor._wrap(out, (a,), lambda g: (g.copy(),))  # wrong: passes grad everywhere

        x = Tensor(rand((9,), 82), requires_grad=True)
        rep = gradcheck(lambda t: buggy_relu(t).sum(), x, h=1e-3, tol=1e-3)
        assert not rep.passed
