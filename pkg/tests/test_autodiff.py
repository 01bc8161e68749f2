import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphseq import autodiff as ad


def t64(values):
    return ad.Tensor(np.asarray(values, dtype=np.float64))


def rand64(rng, shape, scale=0.8):
    return ad.Tensor(rng.uniform(-scale, scale, shape))


class TestForwardValues:
    def test_softmax_of_zeros_is_uniform(self):
        out = ad.softmax(ad.tensor([0.0, 0.0, 0.0])).data
        np.testing.assert_allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-7)

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(ad.tensor(0.0)).item() == pytest.approx(0.5)

    def test_matmul_shape_algebra(self):
        out = ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((3, 1))))
        assert out.shape == (2, 1)

    def test_matmul_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(4, 1\)"):
            ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((4, 1))))

    def test_add_shape_mismatch(self):
        with pytest.raises(ad.ShapeError, match="add"):
            ad.add(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((4,))))

    def test_non_finite_result_rejected(self):
        big = ad.tensor(np.full(3, 1e38, dtype=np.float32))
        with np.errstate(over="ignore"), pytest.raises(ad.NonFiniteError, match="mul"):
            ad.mul(big, big)

    def test_ops_without_tape_do_not_record(self):
        with ad.Tape() as tape:
            pass
        ad.add(ad.tensor([1.0]), ad.tensor([2.0]))
        assert len(tape) == 0

    @given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_softmax_rows_are_distributions(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        y = ad.softmax(ad.Tensor(rng.normal(size=(rows, cols)) * 5)).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), np.ones(rows), atol=1e-6)


class TestBackward:
    def test_grad_of_sum_is_ones(self):
        x = t64([1.0, 2.0, 3.0])
        with ad.Tape() as tape:
            loss = ad.reduce_sum(x)
        grads = tape.backward(loss)
        np.testing.assert_array_equal(grads[x], [1.0, 1.0, 1.0])

    def test_grad_of_sum_of_squares(self):
        x = t64([1.0, 2.0])
        with ad.Tape() as tape:
            loss = ad.reduce_sum(ad.mul(x, x))
        grads = tape.backward(loss)
        np.testing.assert_allclose(grads[x], [2.0, 4.0])

    def test_loss_gradient_wrt_itself_is_one(self):
        x = t64([3.0])
        with ad.Tape() as tape:
            loss = ad.reduce_sum(x)
        grads = tape.backward(loss)
        np.testing.assert_array_equal(grads[loss], np.ones(()))

    def test_fanout_accumulates_sum_of_partials(self):
        x = t64([1.0, 2.0])

        def single(v):
            return ad.reduce_sum(ad.mul(v, v))

        def doubled(v):
            branch = ad.mul(v, v)
            return ad.reduce_sum(ad.add(branch, ad.mul(v, v)))

        with ad.Tape() as tape:
            loss = single(x)
        g1 = tape.backward(loss)[x]
        with ad.Tape() as tape:
            loss = doubled(x)
        g2 = tape.backward(loss)[x]
        np.testing.assert_allclose(g2, 2 * g1)

    def test_gradients_populated_for_all_ancestors(self):
        x = t64([1.0, 2.0])
        with ad.Tape() as tape:
            y = ad.mul(x, x)
            z = ad.tanh(y)
            loss = ad.reduce_sum(z)
        grads = tape.backward(loss)
        for node in (x, y, z, loss):
            assert node in grads
            assert grads[node].shape == node.shape

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0])
        with ad.Tape() as tape:
            y = ad.mul(x, x)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)

    def test_loss_off_tape_rejected(self):
        x = t64([1.0])
        with ad.Tape():
            pass
        with ad.Tape() as other:
            pass
        loss = ad.reduce_sum(x)  # built with no active tape
        with pytest.raises(ValueError, match="not a node"):
            other.backward(loss)


OP_CASES = {
    "add_broadcast": (
        lambda a, b: ad.reduce_sum(ad.tanh(ad.add(a, b))),
        [(3, 4), (4,)],
    ),
    "mul_broadcast": (
        lambda a, b: ad.reduce_sum(ad.mul(a, b)),
        [(2, 3, 4), (2, 1, 4)],
    ),
    "matmul_mat_mat": (
        lambda a, b: ad.reduce_sum(ad.tanh(ad.matmul(a, b))),
        [(3, 4), (4, 2)],
    ),
    "matmul_mat_vec": (
        lambda a, b: ad.reduce_sum(ad.tanh(ad.matmul(a, b))),
        [(3, 4), (4,)],
    ),
    "matmul_vec_mat": (
        lambda a, b: ad.reduce_sum(ad.tanh(ad.matmul(a, b))),
        [(4,), (4, 2)],
    ),
    "tanh": (lambda a: ad.reduce_sum(ad.mul(ad.tanh(a), ad.tanh(a))), [(3, 3)]),
    "sigmoid": (lambda a: ad.reduce_sum(ad.mul(ad.sigmoid(a), ad.sigmoid(a))), [(5,)]),
    "softmax": (
        lambda a: ad.reduce_sum(ad.mul(ad.softmax(a), np.arange(12.0).reshape(3, 4))),
        [(3, 4)],
    ),
    "concat": (
        lambda a, b: ad.reduce_sum(ad.tanh(ad.concat([a, b], axis=-1))),
        [(2, 3), (2, 2)],
    ),
    "lookup": (
        lambda tb: ad.reduce_sum(ad.mul(ad.lookup(tb, [0, 2, 2]), ad.lookup(tb, [0, 2, 2]))),
        [(4, 3)],
    ),
    "mean": (lambda a: ad.reduce_mean(ad.mul(a, a)), [(3, 4)]),
    "slice_last": (
        lambda a: ad.reduce_sum(ad.mul(ad.slice_last(a, 1, 3), ad.slice_last(a, 0, 2))),
        [(2, 4)],
    ),
    "reshape": (lambda a: ad.reduce_sum(ad.tanh(ad.reshape(a, (6,)))), [(2, 3)]),
    "stack": (
        lambda a, b: ad.reduce_sum(ad.tanh(ad.stack([a, b], axis=1))),
        [(2, 3), (2, 3)],
    ),
    "dot_last": (
        lambda x, v: ad.reduce_sum(ad.tanh(ad.dot_last(x, v))),
        [(2, 3, 4), (4,)],
    ),
    "attn_mix": (
        lambda h, w: ad.reduce_sum(ad.tanh(ad.attn_mix(h, w))),
        [(2, 3, 4), (2, 3)],
    ),
    "softmax_xent": (
        lambda l: ad.reduce_sum(ad.softmax_xent(l, [1, 0, 3])),
        [(3, 4)],
    ),
    "bce_logits": (
        lambda l: ad.reduce_sum(
            ad.bce_logits(l, np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]))
        ),
        [(2, 3)],
    ),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    fn, shapes = OP_CASES[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    inputs = [rand64(rng, s) for s in shapes]
    assert ad.grad_check(fn, inputs) < 1e-6


class TestGradCheck:
    def test_sum_of_squares_error_is_tiny(self):
        err = ad.grad_check(lambda a: ad.reduce_sum(ad.mul(a, a)), [t64([1.0, 2.0, 3.0])])
        assert err < 1e-7

    def test_constant_function_has_zero_error(self):
        err = ad.grad_check(lambda a: ad.reduce_sum(ad.mul(a, np.zeros(3))), [t64([1.0, 2.0, 3.0])])
        assert err == 0.0

    def test_rejects_float32_inputs(self):
        with pytest.raises(ValueError, match="float64"):
            ad.grad_check(lambda a: ad.reduce_sum(a), [ad.tensor([1.0, 2.0])])

    def test_composite_lstm_like_loss(self):
        rng = np.random.default_rng(0)
        x, h, c = rand64(rng, (2, 3)), rand64(rng, (2, 4)), rand64(rng, (2, 4))
        wx, wh, b = rand64(rng, (3, 16)), rand64(rng, (4, 16)), rand64(rng, (16,))

        def f(x, h, c, wx, wh, b):
            z = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
            i = ad.sigmoid(ad.slice_last(z, 0, 4))
            fg = ad.sigmoid(ad.slice_last(z, 4, 8))
            g = ad.tanh(ad.slice_last(z, 8, 12))
            o = ad.sigmoid(ad.slice_last(z, 12, 16))
            c_new = ad.add(ad.mul(fg, c), ad.mul(i, g))
            h_new = ad.mul(o, ad.tanh(c_new))
            return ad.reduce_sum(ad.mul(h_new, h_new))

        assert ad.grad_check(f, [x, h, c, wx, wh, b]) < 1e-4
