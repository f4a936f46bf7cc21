"""Forward semantics and structural invariants of the tensor engine."""

import numpy as np
import pytest

from mirrorfusion import tensor as T
from mirrorfusion.errors import ShapeError
from mirrorfusion.tensor import Tensor


class TestElementwise:
    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([0.0])).item() == pytest.approx(0.5)

    def test_relu(self):
        out = T.relu(Tensor([-3.0, 3.0]))
        assert out.data.tolist() == [0.0, 3.0]

    def test_mul_identity_bitwise(self, rng):
        x = Tensor(rng.standard_normal((3, 4)).astype(np.float32))
        out = x * Tensor(np.ones((3, 4), dtype=np.float32))
        assert np.array_equal(out.data, x.data)

    def test_clamp(self):
        out = T.clamp(Tensor([-2.0, 0.3, 5.0]), -1.0, 1.0)
        assert out.data == pytest.approx([-1.0, 0.3, 1.0])

    def test_broadcast_trailing_and_singleton(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32))
        spatial = Tensor(rng.standard_normal((1, 3, 4)).astype(np.float32))
        channel = Tensor(rng.standard_normal((2, 1, 1)).astype(np.float32))
        assert (a * spatial).shape == (2, 3, 4)
        assert (a * channel).shape == (2, 3, 4)

    def test_broadcast_rejects_rank_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) * Tensor(np.zeros((3,)))

    def test_broadcast_rejects_incompatible(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((2, 4)))


class TestMatmul:
    def test_identity(self, rng):
        x = rng.standard_normal((3, 5)).astype(np.float32)
        out = T.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(x))
        assert np.allclose(out.data, x)

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert out.data.tolist() == [[3.0], [7.0]]

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestConv2d:
    def test_ones_hand_count(self):
        x = Tensor(np.ones((1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = T.conv2d(x, w, padding=1)
        assert out.data[0, 1, 1] == 9.0
        assert out.data[0, 0, 0] == 4.0

    def test_delta_kernel_identity(self, rng):
        x = rng.standard_normal((2, 5, 5)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        out = T.conv2d(Tensor(x), Tensor(w), padding=1)
        assert np.allclose(out.data, x)

    def test_dilation_shape(self, rng):
        x = Tensor(rng.standard_normal((1, 5, 5)).astype(np.float32))
        w = Tensor(rng.standard_normal((1, 1, 3, 3)).astype(np.float32))
        assert T.conv2d(x, w, padding=2, dilation=2).shape == (1, 5, 5)

    def test_bad_output_size(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0]), axis=0)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_shift_invariance(self, rng):
        x = rng.standard_normal(7).astype(np.float32)
        a = T.softmax(Tensor(x), axis=0).data
        b = T.softmax(Tensor(x + 3.7), axis=0).data
        assert np.allclose(a, b, atol=1e-6)

    def test_stabilized_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0]), axis=0)
        assert np.isfinite(out.data).all()
        assert out.data[0] == pytest.approx(1.0)

    def test_rows_sum_to_one_positive(self, rng):
        x = Tensor(rng.standard_normal((5, 9)).astype(np.float32) * 10)
        out = T.softmax(x, axis=1)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        assert (out.data > 0).all()


class TestStructural:
    def test_concat_shapes(self):
        out = T.concat([Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((3, 2, 2)))], axis=0)
        assert out.shape == (4, 2, 2)

    def test_reshape_roundtrip_bitwise(self, rng):
        x = Tensor(rng.standard_normal((3, 4, 5)).astype(np.float32))
        back = x.reshape(60).reshape(3, 4, 5)
        assert np.array_equal(back.data, x.data)

    def test_slice_out_of_range(self):
        with pytest.raises(IndexError):
            T.slice_axis(Tensor(np.zeros((2, 3))), 1, 2, 5)

    def test_gather_out_of_range(self):
        with pytest.raises(IndexError):
            T.gather(Tensor(np.zeros((2, 3))), 1, np.array([0, 3]))

    def test_gather_scatter_count_mask(self):
        # grad of sum(gather(x, idx)) counts how often each slot was taken
        x = Tensor(np.arange(5, dtype=np.float32), requires_grad=True)
        idx = np.array([0, 0, 3])
        T.gather(x, 0, idx).sum().backward()
        assert x.grad.tolist() == [2.0, 0.0, 0.0, 1.0, 0.0]

    def test_upsample_constant_field(self):
        x = Tensor(np.full((2, 3, 3), 1.75, dtype=np.float32))
        out = T.upsample_bilinear(x, 12, 12)
        assert np.allclose(out.data, 1.75, atol=1e-6)

    def test_global_avg_pool(self, rng):
        x = rng.standard_normal((4, 6, 5)).astype(np.float32)
        out = T.global_avg_pool(Tensor(x))
        assert out.shape == (4, 1, 1)
        assert np.allclose(out.data[:, 0, 0], x.mean(axis=(1, 2)), atol=1e-6)


class TestBackward:
    def test_sum_of_squares(self, rng):
        x = Tensor(rng.standard_normal(6).astype(np.float32), requires_grad=True)
        (x * x).sum().backward()
        assert np.allclose(x.grad, 2 * x.data)

    def test_independent_leaf_zero_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(np.ones(3), requires_grad=True)
        (y * y).sum().backward()
        assert x.grad is None

    def test_repeated_backward_accumulates(self, rng):
        x = Tensor(rng.standard_normal(4).astype(np.float32), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        loss.backward()
        assert np.allclose(x.grad, 4 * x.data)

    def test_nonscalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * x).backward()

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = (x * x).sum()
        assert not y.requires_grad


class TestTapeAndModes:
    def test_tape_topological_order_and_clear(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.Tape() as tape:
            y = x * 2.0
            z = (y + x).sum()
        order = {id(t): i for i, t in enumerate(tape.records)}
        for node in tape.records:
            for parent in node._parents:
                if id(parent) in order:
                    assert order[id(parent)] < order[id(node)]
        tape.clear()
        assert all(t._backward is None for t in (y, z))

    def test_precision_mode(self):
        with T.precision(np.float64):
            x = Tensor([1.0])
            assert x.data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_forward_determinism(self, rng):
        x = rng.standard_normal((3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        a = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        assert np.array_equal(a, b)

    def test_nan_check_toggle(self):
        T.set_nan_check(True)
        try:
            with pytest.raises(FloatingPointError):
                T.log(Tensor([-1.0]))
        finally:
            T.set_nan_check(False)
