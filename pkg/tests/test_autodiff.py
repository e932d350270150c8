import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syn2real import NumericError, ShapeError
from syn2real import autodiff as ad
from syn2real.autodiff import grad_check
from syn2real.autodiff.tensor import _graph_slot


def t64(arr, rg=True):
    return ad.Tensor(np.asarray(arr), dtype=np.float64, requires_grad=rg)


class TestWorkedExamples:
    def test_conv2d_identity_diagonal(self):
        x = ad.Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = ad.Tensor([[[[1.0, 0.0], [0.0, 1.0]]]])
        y = ad.conv2d(x, w)
        assert y.shape == (1, 1, 1, 1)
        assert y.item() == 5.0

    def test_conv2d_is_cross_correlation_not_flipped(self):
        # kernel with a single 1 at (0, 1): cross-correlation picks x[0, 1],
        # a flipped convolution would pick x[1, 0]
        x = ad.Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = ad.Tensor([[[[0.0, 1.0], [0.0, 0.0]]]])
        assert ad.conv2d(x, w).item() == 2.0

    def test_conv_transpose_broadcast_single_pixel(self):
        x = ad.Tensor(np.full((1, 1, 1, 1), 2.0))
        w = ad.Tensor(np.ones((1, 1, 2, 2)))
        y = ad.conv_transpose2d(x, w)
        assert np.array_equal(y.data, np.full((1, 1, 2, 2), 2.0, dtype=np.float32))

    def test_conv_transpose_overlap_adds(self):
        x = ad.Tensor(np.ones((1, 1, 2, 2)))
        w = ad.Tensor(np.ones((1, 1, 2, 2)))
        y = ad.conv_transpose2d(x, w, stride=1)
        expect = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float32)
        assert np.array_equal(y.data[0, 0], expect)

    def test_conv_transpose_output_size(self):
        x = ad.Tensor(np.zeros((1, 3, 5, 7)))
        w = ad.Tensor(np.zeros((3, 2, 4, 4)))
        y = ad.conv_transpose2d(x, w, stride=2, padding=1)
        assert y.shape == (1, 2, (5 - 1) * 2 - 2 + 4, (7 - 1) * 2 - 2 + 4)

    def test_linear(self):
        x = ad.Tensor([[1.0, 2.0]])
        w = ad.Tensor([[1.0, 1.0], [1.0, -1.0]])
        y = ad.linear(x, w)
        assert np.array_equal(y.data, np.array([[3.0, -1.0]], dtype=np.float32))

    def test_max_pool_tie_takes_first_in_row_major_order(self):
        x = t64([[[[1.0, 1.0], [1.0, 0.0]]]])
        y = ad.max_pool2d(x, 2)
        assert y.item() == 1.0
        ad.backward(y.sum())
        assert np.array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])


class TestAdjointness:
    @pytest.mark.parametrize("geom", [
        # (N, Cin, H, W, Cout, k, stride, padding) with (H + 2p - k) % stride == 0
        (2, 3, 7, 7, 4, 3, 2, 1),
        (1, 2, 8, 8, 3, 2, 2, 0),
        (3, 1, 6, 5, 2, 3, 1, 1),
        (1, 4, 9, 9, 1, 5, 2, 2),
    ])
    def test_conv_and_transpose_are_adjoint(self, geom):
        n, cin, h, w, cout, k, s, p = geom
        rng = np.random.default_rng(hash(geom) % 2**32)
        x = rng.normal(size=(n, cin, h, w))
        kern = rng.normal(size=(cout, cin, k, k))
        cx = ad.conv2d(ad.Tensor(x, dtype=np.float64), ad.Tensor(kern, dtype=np.float64),
                       stride=s, padding=p).data
        y = rng.normal(size=cx.shape)
        cty = ad.conv_transpose2d(ad.Tensor(y, dtype=np.float64),
                                  ad.Tensor(kern, dtype=np.float64),
                                  stride=s, padding=p).data
        lhs = float(np.sum(cx * y))
        rhs = float(np.sum(cty * x))
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


class TestGradChecks:
    def test_elementwise_ops(self):
        rng = np.random.default_rng(11)
        a = t64(rng.normal(size=(3, 4)))
        b = t64(rng.normal(size=(3, 4)))
        pos = t64(rng.uniform(0.5, 2.0, size=(3, 4)))
        cases = [
            (lambda x, y: (x + y).square().sum(), [a, b]),
            (lambda x, y: (x - y).square().sum(), [a, b]),
            (lambda x, y: (x * y).sum(), [a, b]),
            (lambda x, y: ad.div(x, y).sum(), [a, pos]),
            (lambda x: ad.exp(x).sum(), [a]),
            (lambda x: ad.log(x).sum(), [pos]),
            (lambda x: ad.sigmoid(x).square().sum(), [a]),
            (lambda x: x.square().mean(), [a]),
            (lambda x: (-x).sum(), [a]),
            (lambda x: ad.mul(x, 2.5).sum(), [a]),
            (lambda x: ad.add(x, 0.7).square().sum(), [a]),
        ]
        for fn, inputs in cases:
            rep = grad_check(fn, inputs)
            assert rep.max_rel_err < 1e-5, fn

    def test_kinked_ops_away_from_kinks(self):
        rng = np.random.default_rng(12)
        raw = rng.normal(size=(4, 5))
        raw = np.where(np.abs(raw) < 0.1, raw + 0.25, raw)  # keep clear of 0
        x = t64(raw)
        rep = grad_check(lambda v: ad.relu(v).square().sum(), [x])
        assert rep.max_rel_err < 1e-5
        far = t64(rng.uniform(0.2, 0.8, size=(3, 3)))
        rep = grad_check(lambda v: ad.clamp(v, 0.3, 0.7).square().sum(), [far], eps=1e-4)
        assert rep.max_rel_err < 1e-3
        y = t64(raw.T + 0.5)
        rep = grad_check(lambda u, v: ad.maximum(u, v).square().sum(), [t64(raw.T), y])
        assert rep.max_rel_err < 1e-5

    def test_reductions_and_shape_ops(self):
        rng = np.random.default_rng(13)
        x = t64(rng.normal(size=(2, 3, 4)))
        for fn in [
            lambda v: v.sum(),
            lambda v: v.sum(axis=1).square().sum(),
            lambda v: v.sum(axis=-1, keepdims=True).square().sum(),
            lambda v: v.mean(),
            lambda v: v.mean(axis=0).square().sum(),
            lambda v: v.reshape(6, 4).square().sum(),
            lambda v: ad.narrow(v, 1, 1, 2).square().sum(),
        ]:
            rep = grad_check(fn, [x])
            assert rep.max_rel_err < 1e-5

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(14)
        logits = t64(rng.normal(size=(5, 4)))
        labels = np.array([0, 3, 1, 1, 2])
        rep = grad_check(lambda z: ad.softmax_cross_entropy(z, labels), [logits])
        assert rep.max_rel_err < 1e-5
        # value oracle: uniform logits over K classes cost ln K
        flat = ad.Tensor(np.zeros((3, 4)), dtype=np.float64)
        assert ad.softmax_cross_entropy(flat, np.array([0, 1, 2])).item() == pytest.approx(np.log(4.0), abs=1e-12)

    @pytest.mark.parametrize("shape,kshape,stride,padding,bias", [
        ((2, 2, 5, 5), (3, 2, 3, 3), 1, 1, True),
        ((1, 3, 6, 6), (2, 3, 2, 2), 2, 0, False),
        ((2, 1, 7, 7), (1, 1, 3, 3), 3, 2, True),
    ])
    def test_conv2d_grads(self, shape, kshape, stride, padding, bias):
        rng = np.random.default_rng(hash((shape, stride)) % 2**32)
        x = t64(rng.normal(size=shape))
        w = t64(rng.normal(size=kshape) * 0.5)
        inputs = [x, w]
        b = None
        if bias:
            b = t64(rng.normal(size=(kshape[0],)))
            inputs.append(b)

        def fn(*args):
            return ad.conv2d(args[0], args[1], args[2] if bias else None,
                             stride=stride, padding=padding).square().sum()

        rep = grad_check(fn, inputs)
        assert rep.max_rel_err < 1e-5

    @pytest.mark.parametrize("shape,kshape,stride,padding,bias", [
        ((2, 3, 3, 3), (3, 2, 3, 3), 2, 1, True),
        ((1, 2, 4, 4), (2, 3, 2, 2), 1, 0, False),
        ((2, 1, 3, 4), (1, 2, 4, 4), 3, 2, True),
    ])
    def test_conv_transpose2d_grads(self, shape, kshape, stride, padding, bias):
        rng = np.random.default_rng(hash((shape, stride, 1)) % 2**32)
        x = t64(rng.normal(size=shape))
        w = t64(rng.normal(size=kshape) * 0.5)
        inputs = [x, w]
        b = None
        if bias:
            b = t64(rng.normal(size=(kshape[1],)))
            inputs.append(b)

        def fn(*args):
            return ad.conv_transpose2d(args[0], args[1], args[2] if bias else None,
                                       stride=stride, padding=padding).square().sum()

        rep = grad_check(fn, inputs)
        assert rep.max_rel_err < 1e-5

    def test_linear_grads(self):
        rng = np.random.default_rng(15)
        x = t64(rng.normal(size=(4, 6)))
        w = t64(rng.normal(size=(3, 6)))
        b = t64(rng.normal(size=(3,)))
        rep = grad_check(lambda *a: ad.linear(*a).square().sum(), [x, w, b])
        assert rep.max_rel_err < 1e-5

    @pytest.mark.parametrize("window,stride", [(2, 2), (3, 3), (2, 1), (3, 2)])
    def test_max_pool_grads(self, window, stride):
        rng = np.random.default_rng(16)
        # well-separated values so epsilon nudges cannot reorder a window
        vals = rng.permutation(np.arange(2 * 2 * 6 * 6, dtype=np.float64))
        x = t64(vals.reshape(2, 2, 6, 6))
        rep = grad_check(lambda v: ad.max_pool2d(v, window, stride).square().sum(), [x])
        assert rep.max_rel_err < 1e-5


class TestTapeSemantics:
    def test_two_consumers_accumulate(self):
        x = t64([2.0])
        y = (x * 3.0) + x.square()
        ad.backward(y.sum())
        assert x.grad == pytest.approx([3.0 + 4.0])

    def test_repeated_operand(self):
        a = t64([1.0, 2.0, 3.0])
        ad.backward(ad.mul(a, a).sum())
        assert np.allclose(a.grad, [2.0, 4.0, 6.0])

    def test_backward_requires_scalar(self):
        a = t64([1.0, 2.0])
        with pytest.raises(ShapeError):
            ad.backward(a * 2.0)
        _graph_slot().nodes.clear()

    def test_backward_clears_tape(self):
        a = t64([1.0])
        ad.backward((a * 2.0).sum())
        assert _graph_slot() is None or not _graph_slot().nodes
        a.grad = None
        ad.backward((a * 5.0).sum())
        assert a.grad == pytest.approx([5.0])

    def test_grad_accumulates_across_backwards(self):
        a = t64([1.0])
        ad.backward((a * 2.0).sum())
        ad.backward((a * 3.0).sum())
        assert a.grad == pytest.approx([5.0])

    def test_no_grad_blocks_recording(self):
        a = t64([1.0, 2.0])
        with ad.no_grad():
            y = a.square().sum()
        assert not y.requires_grad
        g = _graph_slot()
        assert g is None or not g.nodes

    def test_detach_cuts_graph(self):
        a = t64([3.0])
        d = a.detach()
        assert not d.requires_grad
        y = (d * 2.0).sum()
        assert not y.requires_grad

    def test_dead_branch_gets_no_grad(self):
        a = t64([1.0])
        b = t64([1.0])
        _ = a * 7.0  # never reaches the loss
        loss = (b * 2.0).sum()
        ad.backward(loss)
        assert a.grad is None
        assert b.grad == pytest.approx([2.0])

    def test_explicit_graph_scope(self):
        a = t64([2.0])
        with ad.Graph():
            inner = (a * 3.0).sum()
            ad.backward(inner)
        assert a.grad == pytest.approx([3.0])

    def test_deterministic_gradients_bitwise(self):
        def run():
            rng = np.random.default_rng(99)
            x = ad.Tensor(rng.normal(size=(4, 3, 8, 8)).astype(np.float32))
            w1 = ad.Tensor(rng.normal(size=(5, 3, 3, 3)).astype(np.float32) * 0.1,
                           requires_grad=True)
            w2 = ad.Tensor(rng.normal(size=(2, 5 * 4 * 4)).astype(np.float32) * 0.1,
                           requires_grad=True)
            h = ad.max_pool2d(ad.relu(ad.conv2d(x, w1, padding=1)), 2)
            z = ad.linear(h.reshape(4, -1), w2)
            ad.backward(ad.softmax_cross_entropy(z, np.array([0, 1, 0, 1])))
            return w1.grad.tobytes(), w2.grad.tobytes()

        assert run() == run()


class TestStrictness:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ad.add(ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0, 3.0]))

    def test_dtype_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ad.add(ad.Tensor([1.0], dtype=np.float32), ad.Tensor([1.0], dtype=np.float64))

    def test_no_implicit_broadcast(self):
        a = ad.Tensor(np.ones((2, 3)))
        row = ad.Tensor(np.ones((1, 3)))
        with pytest.raises(ShapeError):
            ad.add(a, row)

    def test_nonfinite_input_rejected(self):
        with pytest.raises(NumericError):
            ad.Tensor([1.0, np.inf])
        with pytest.raises(NumericError):
            ad.Tensor([np.nan])

    def test_overflow_is_hard_error(self):
        big = ad.Tensor(np.array([1000.0]))
        with pytest.raises(NumericError):
            ad.exp(big)

    def test_division_by_zero_is_hard_error(self):
        a = ad.Tensor([1.0])
        z = ad.Tensor([0.0])
        with pytest.raises(NumericError):
            ad.div(a, z)
        with pytest.raises(NumericError):
            ad.div(a, 0.0)

    def test_log_domain(self):
        with pytest.raises(NumericError):
            ad.log(ad.Tensor([0.5, -1.0]))

    def test_conv_channel_mismatch(self):
        x = ad.Tensor(np.zeros((1, 3, 5, 5)))
        w = ad.Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, w)

    def test_conv_kernel_too_large(self):
        x = ad.Tensor(np.zeros((1, 1, 3, 3)))
        w = ad.Tensor(np.zeros((1, 1, 5, 5)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, w)

    def test_narrow_bounds(self):
        x = ad.Tensor(np.zeros((2, 4)))
        with pytest.raises(ShapeError):
            ad.narrow(x, 1, 3, 2)

    def test_int_input_stored_as_float32(self):
        t = ad.Tensor([1, 2, 3])
        assert t.dtype == np.float32


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 3), cin=st.integers(1, 3), cout=st.integers(1, 3),
    k=st.integers(1, 3), stride=st.integers(1, 3), padding=st.integers(0, 2),
    extra=st.integers(0, 4), seed=st.integers(0, 2**31),
)
def test_conv_grad_input_equals_transpose_forward(n, cin, cout, k, stride, padding, extra, seed):
    # grad_input of conv2d must equal conv_transpose2d forward with the same kernel
    h = k + stride * extra
    if (h + 2 * padding - k) % stride != 0 or h + 2 * padding < k:
        return  # geometry does not round-trip; transpose output would be smaller
    rng = np.random.default_rng(seed)
    oh = (h + 2 * padding - k) // stride + 1
    gy = rng.normal(size=(n, cout, oh, oh))
    w = rng.normal(size=(cout, cin, k, k))
    from syn2real.autodiff import kernels
    gi = kernels.conv2d_grad_input(gy, w, stride, padding, (h, h))
    ct = kernels.conv_transpose2d_forward(gy, w, stride, padding)
    assert gi.shape == ct.shape
    assert np.allclose(gi, ct, rtol=1e-10, atol=1e-12)
