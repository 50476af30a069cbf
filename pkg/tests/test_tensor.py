import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisent import tensor as T


def t(arr, rg=False):
    return T.Tensor(np.asarray(arr, dtype=np.float32), requires_grad=rg)


def rand(shape, rng, lo=-1.0, hi=1.0, rg=False):
    return T.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=rg)


class TestForwardShapes:
    def test_matmul_shape_algebra(self):
        rng = np.random.default_rng(0)
        out = T.matmul(rand((2, 3), rng), rand((3, 4), rng))
        assert out.shape == (2, 4)

    def test_matmul_batched(self):
        rng = np.random.default_rng(0)
        out = T.matmul(rand((5, 2, 3), rng), rand((5, 3, 4), rng))
        assert out.shape == (5, 2, 4)

    def test_matmul_inner_mismatch_names_shapes(self):
        rng = np.random.default_rng(0)
        with pytest.raises(T.ShapeError, match=r"matmul.*\(2, 3\).*\(4, 2\)"):
            T.matmul(rand((2, 3), rng), rand((4, 2), rng))

    def test_add_broadcast_mismatch(self):
        with pytest.raises(T.ShapeError, match="add"):
            T.add(t(np.ones((2, 3))), t(np.ones((4,))))

    def test_softmax_uniform(self):
        out = T.softmax(t([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_dropout_p0_identity(self):
        x = t([[1.0, 2.0], [3.0, 4.0]])
        assert T.dropout(x, 0.0, seed=7) is x

    def test_dropout_eval_identity(self):
        x = t([[1.0, 2.0]])
        assert T.dropout(x, 0.5, seed=7, train=False) is x

    def test_dropout_scaling_and_determinism(self):
        x = t(np.ones((4, 4)))
        a = T.dropout(x, 0.5, seed=3)
        b = T.dropout(x, 0.5, seed=3)
        assert np.array_equal(a.data, b.data)
        kept = a.data[a.data != 0]
        np.testing.assert_allclose(kept, 2.0)

    def test_dropout_zero_fraction_matches_p(self):
        x = t(np.ones(100_000))
        for p in (0.1, 0.5):
            out = T.dropout(x, p, seed=11)
            frac = float((out.data == 0).mean())
            # binomial std at n=1e5 is ~0.0016 for p=0.5
            assert abs(frac - p) < 0.01

    def test_dropout_bad_p(self):
        with pytest.raises(ValueError):
            T.dropout(t([1.0]), 1.0, seed=0)

    def test_concat_and_slice_roundtrip(self):
        rng = np.random.default_rng(1)
        a, b = rand((2, 3), rng), rand((2, 5), rng)
        cat = T.concat_last([a, b])
        assert cat.shape == (2, 8)
        back = T.slice_axis(cat, -1, 3, 8)
        np.testing.assert_array_equal(back.data, b.data)

    def test_transpose_last2(self):
        rng = np.random.default_rng(1)
        x = rand((4, 2, 3), rng)
        assert T.transpose_last2(x).shape == (4, 3, 2)

    def test_embedding_gather(self):
        table = t(np.arange(12).reshape(4, 3))
        out = T.embedding(table, np.array([[0, 2], [3, 3]]))
        assert out.shape == (2, 2, 3)
        np.testing.assert_array_equal(out.data[0, 1], [6, 7, 8])

    def test_embedding_out_of_range(self):
        with pytest.raises(IndexError):
            T.embedding(t(np.zeros((4, 3))), np.array([4]))

    def test_layer_norm_normalizes(self):
        rng = np.random.default_rng(2)
        x = rand((6, 8), rng, -3, 3)
        out = T.layer_norm(x, t(np.ones(8)), t(np.zeros(8)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-2)

    def test_cosine_similarity_values(self):
        a = t([[1.0, 0.0], [1.0, 1.0]])
        b = t([[0.0, 1.0], [1.0, 1.0]])
        out = T.cosine_similarity(a, b)
        np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-6)

    def test_cosine_similarity_zero_norm(self):
        with pytest.raises(ValueError, match="zero-norm"):
            T.cosine_similarity(t([[0.0, 0.0]]), t([[1.0, 0.0]]))

    def test_debug_nan_check(self):
        with pytest.raises(T.NumericsError, match="log"):
            T.log(t([-1.0]))


class TestBackward:
    def test_square_gradient(self):
        x = t([3.0], rg=True)
        T.backward(T.tsum(T.mul(x, x)))
        np.testing.assert_allclose(x.grad, [6.0])

    def test_tanh_gradient_at_zero(self):
        x = t([0.0], rg=True)
        T.backward(T.tsum(T.tanh(x)))
        np.testing.assert_allclose(x.grad, [1.0])

    def test_two_path_accumulation(self):
        x = t([1.5], rg=True)
        T.backward(T.tsum(T.add(x, x)))
        np.testing.assert_allclose(x.grad, [2.0])

    def test_non_scalar_loss_rejected(self):
        x = t([1.0, 2.0], rg=True)
        y = T.mul(x, x)
        with pytest.raises(ValueError, match="scalar"):
            T.backward(y)

    def test_second_backward_fails(self):
        x = t([2.0], rg=True)
        loss = T.tsum(T.mul(x, x))
        T.backward(loss)
        with pytest.raises(T.TapeError):
            T.backward(loss)

    def test_no_grad_disables_recording(self):
        x = t([2.0], rg=True)
        with T.no_grad():
            y = T.mul(x, x)
        assert not y.requires_grad
        assert len(T.active_tape()) == 0

    def test_grad_reaches_all_leaves(self):
        rng = np.random.default_rng(3)
        a = rand((2, 2), rng, rg=True)
        b = rand((2, 2), rng, rg=True)
        T.backward(T.tmean(T.matmul(a, b)))
        assert a.grad is not None and b.grad is not None
        assert a.grad.shape == a.shape and b.grad.shape == b.shape


class TestGradCheck:
    """Central finite differences (h=1e-3) vs the tape, per kernel."""

    def test_sum_is_exact(self):
        x = t(np.random.default_rng(0).normal(size=(3, 4)), rg=True)
        assert T.grad_check(lambda v: T.tsum(v), x) == 0.0

    def test_matmul_relu_mean_composite(self):
        rng = np.random.default_rng(5)
        w = rand((4, 5), rng, rg=True)
        x = rand((5, 1), rng, lo=0.2, hi=1.0)  # keep relu away from kinks
        err = T.grad_check(lambda v: T.tmean(T.relu(T.matmul(v, x))), w)
        assert err < 1e-4

    @pytest.mark.parametrize("name,fn", [
        ("tanh", T.tanh),
        ("sigmoid", T.sigmoid),
        ("exp", T.exp),
        ("gelu", T.gelu),
        ("softmax", T.softmax),
        ("power2", lambda v: T.power(v, 2.0)),
    ])
    def test_unary_kernels(self, name, fn):
        rng = np.random.default_rng(hash(name) % 2**32)
        x = rand((3, 4), rng, rg=True)
        err = T.grad_check(lambda v: T.tmean(fn(v)), x)
        assert err < 1e-4, name

    def test_log_on_positive(self):
        rng = np.random.default_rng(9)
        x = rand((3, 3), rng, lo=0.5, hi=2.0, rg=True)
        assert T.grad_check(lambda v: T.tmean(T.log(v)), x) < 1e-4

    def test_layer_norm_all_inputs(self):
        rng = np.random.default_rng(11)
        x = rand((4, 6), rng, rg=True)
        g = rand((6,), rng, lo=0.5, hi=1.5, rg=True)
        b = rand((6,), rng, rg=True)
        assert T.grad_check(lambda v: T.tmean(T.layer_norm(v, g, b)), x) < 1e-4
        assert T.grad_check(lambda v: T.tmean(T.layer_norm(x, v, b)), g) < 1e-4
        assert T.grad_check(lambda v: T.tmean(T.layer_norm(x, g, v)), b) < 1e-4

    def test_dropout_frozen_mask(self):
        rng = np.random.default_rng(13)
        x = rand((4, 4), rng, rg=True)
        err = T.grad_check(lambda v: T.tmean(T.dropout(v, 0.3, seed=21)), x)
        assert err < 1e-4

    def test_embedding_table(self):
        rng = np.random.default_rng(15)
        table = rand((6, 4), rng, rg=True)
        ids = np.array([[0, 2, 2], [5, 1, 0]])
        err = T.grad_check(lambda v: T.tmean(T.embedding(v, ids)), table)
        assert err < 1e-4

    def test_cosine_similarity_grad(self):
        rng = np.random.default_rng(17)
        a = rand((3, 5), rng, lo=0.3, hi=1.0, rg=True)
        b = rand((3, 5), rng, lo=0.3, hi=1.0)
        err = T.grad_check(lambda v: T.tmean(T.cosine_similarity(v, b)), a)
        assert err < 1e-4

    def test_nondeterministic_function_rejected(self):
        state = {"n": 0}

        def f(x):
            state["n"] += 1
            return T.tsum(T.scale(x, float(state["n"])))

        x = t([1.0], rg=True)
        with pytest.raises(RuntimeError, match="deterministic"):
            T.grad_check(f, x)


class TestProperties:
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_broadcast_add_commutative(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        a = t(rng.normal(size=(rows, cols)))
        b = t(rng.normal(size=(cols,)))
        np.testing.assert_array_equal(T.add(a, b).data, T.add(b, a).data)

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 4),
           st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matmul_shapes(self, a, b, c, seed):
        rng = np.random.default_rng(seed)
        out = T.matmul(t(rng.normal(size=(a, b))), t(rng.normal(size=(b, c))))
        assert out.shape == (a, c)

    @given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_softmax_rows_sum_to_one(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        out = T.softmax(t(rng.normal(size=(rows, cols)) * 5))
        assert ((out.data >= 0) & (out.data <= 1)).all()
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
