import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgfnet import tensor as T
from hgfnet.errors import DomainError, ShapeError, TapeError
from hgfnet.tensor import ComplexTensor, Tape, Tensor, backward

from conftest import assert_grads_match, make_tensor


class TestElementwise:
    def test_add_example(self):
        out = T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_gelu_at_zero(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_gelu_at_one_matches_erf_oracle(self):
        # Phi(1) from the scalar erf in the stdlib, independent of the op.
        expected = 1.0 * 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        got = T.gelu(Tensor([1.0])).data[0]
        assert got == pytest.approx(0.841345, abs=1e-6)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_gelu_f32_matches_f64(self, rng):
        x = rng.normal(size=4096).astype(np.float32)
        g32 = T.gelu(Tensor(x)).data.astype(np.float64)
        g64 = T.gelu(Tensor(x.astype(np.float64))).data
        assert np.abs(g32 - g64).max() < 1e-6

    def test_log_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            T.log(Tensor([1.0, 0.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_dispatcher_names(self):
        out = T.elementwise("mul", Tensor([2.0]), Tensor([3.0]))
        assert out.data[0] == 6.0
        with pytest.raises(ValueError):
            T.elementwise("nope", Tensor([1.0]))
        with pytest.raises(ShapeError):
            T.elementwise("add", Tensor([1.0]))

    def test_scalar_operand_keeps_f32(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        assert (x + 1.0).dtype == np.float32
        assert (2.0 * x).dtype == np.float32


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_inner_extent_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros((3, 5))), Tensor(np.zeros((4, 2))))


class TestReduce:
    def test_examples(self):
        assert T.mean(Tensor([1.0, 3.0])).item() == 2.0
        assert T.std(Tensor([1.0, 3.0])).item() == 1.0
        assert T.tensor_sum(Tensor(np.ones((2, 3)))).item() == 6.0

    def test_population_std(self, rng):
        x = rng.normal(size=(4, 5))
        got = T.std(Tensor(x), axes=(1,)).data
        np.testing.assert_allclose(got, x.std(axis=1), atol=1e-12)

    def test_empty_extent(self):
        with pytest.raises(DomainError):
            T.mean(Tensor(np.zeros((0, 3))), axes=(0,))

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            T.mean(Tensor(np.zeros((2, 3))), axes=(2,))


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor([5.0, 6.0, 7.0], requires_grad=True)
        with Tape():
            loss = T.tensor_sum(x)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_rule(self):
        x = Tensor([1.0, 2.0], requires_grad=True)

        def build():
            return T.tensor_sum(T.mul(x, x))

        assert_grads_match(build, [x])
        np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-12)

    def test_mean_grad(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        with Tape():
            loss = T.mean(x)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [0.25] * 4)

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = T.mul(x, x)
        with pytest.raises(ShapeError):
            backward(y)

    def test_detached_loss(self):
        x = Tensor([1.0], requires_grad=True)
        y = T.tensor_sum(x)  # no tape active
        with pytest.raises(TapeError):
            backward(y)

    def test_backward_twice_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            loss = T.tensor_sum(x)
        backward(loss)
        backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_zero_then_backward_is_idempotent(self, rng):
        x = make_tensor(rng, (5,))
        y = make_tensor(rng, (5,))

        def run_once():
            x.zero_grad()
            y.zero_grad()
            with Tape():
                loss = T.tensor_sum(T.mul(T.gelu(x), T.exp(y)))
            backward(loss)
            return x.grad.copy(), y.grad.copy()

        gx1, gy1 = run_once()
        gx2, gy2 = run_once()
        assert np.array_equal(gx1, gx2) and np.array_equal(gy1, gy2)


UNARY_CASES = {
    "neg": (T.neg, 0.0),
    "exp": (T.exp, 0.0),
    "log": (T.log, 3.0),     # shifted into the domain
    "relu": (T.relu, 0.7),   # away from the kink
    "gelu": (T.gelu, 0.0),
}


@pytest.mark.parametrize("name", sorted(UNARY_CASES))
def test_unary_gradients(name, rng):
    fn, offset = UNARY_CASES[name]
    x = make_tensor(rng, (3, 4), scale=0.5, offset=offset)

    def build():
        return T.tensor_sum(T.mul(fn(x), fn(x)))

    assert_grads_match(build, [x])


BINARY_OPS = {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}


@pytest.mark.parametrize("name", sorted(BINARY_OPS))
@pytest.mark.parametrize("shapes", [((2, 3), (2, 3)), ((2, 3), (3,)), ((4, 1, 2), (3, 2))])
def test_binary_gradients_with_broadcast(name, shapes, rng):
    fn = BINARY_OPS[name]
    a = make_tensor(rng, shapes[0], offset=2.0)
    b = make_tensor(rng, shapes[1], offset=2.0)

    def build():
        return T.tensor_sum(fn(a, b))

    assert_grads_match(build, [a, b])


@pytest.mark.parametrize("axes,keepdims", [(None, False), ((0,), False), ((1,), True), ((0, 2), False)])
@pytest.mark.parametrize("op", ["sum", "mean", "std"])
def test_reduce_gradients(op, axes, keepdims, rng):
    x = make_tensor(rng, (3, 4, 2))

    def build():
        r = T.reduce(op, x, axes, keepdims)
        return T.tensor_sum(T.mul(r, r))

    assert_grads_match(build, [x])


def test_matmul_gradients(rng):
    a = make_tensor(rng, (4, 3))
    b = make_tensor(rng, (3, 5))

    def build():
        c = T.matmul(a, b)
        return T.tensor_sum(T.mul(c, c))

    assert_grads_match(build, [a, b])


def test_shape_op_gradients(rng):
    x = make_tensor(rng, (2, 3, 4))

    def build():
        y = T.moveaxis(T.reshape(x, (6, 4)), 0, 1)
        return T.tensor_sum(T.mul(y, y))

    assert_grads_match(build, [x])


def test_gather_gradients(rng):
    x = make_tensor(rng, (5, 3))
    idx = np.array([0, 2, 1, 2, 0])

    def build():
        p = T.gather(x, idx)
        return T.tensor_sum(T.mul(p, p))

    assert_grads_match(build, [x])
    with pytest.raises(ShapeError):
        T.gather(x, np.array([0, 1]))


def test_pow_const_and_clamp_gradients(rng):
    x = make_tensor(rng, (6,), scale=0.2, offset=0.5)
    exponents = np.array([0.0, 1.0, 2.0, 3.0, 2.0, 4.0])

    def build():
        return T.tensor_sum(T.pow_const(x, exponents))

    assert_grads_match(build, [x])

    y = make_tensor(rng, (5,), scale=0.1, offset=0.5)

    def build2():
        return T.tensor_sum(T.mul(T.clamp(y, 0.2, 0.8), y))

    assert_grads_match(build2, [y])


def test_complex_op_gradients(rng):
    re = make_tensor(rng, (4,))
    im = make_tensor(rng, (4,))
    other = ComplexTensor(rng.normal(size=4) + 1j * rng.normal(size=4))

    def build():
        z = T.complex_mul(T.make_complex(re, im), other)
        r = T.real_part(z)
        return T.tensor_sum(T.mul(r, r))

    assert_grads_match(build, [re, im])


def test_complex_tensor_invariants(rng):
    z = ComplexTensor(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))
    assert z.re.shape == z.im.shape == z.shape
    assert z.size == 6
    with pytest.raises(ShapeError):
        ComplexTensor(np.zeros(3), np.zeros(4))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=3),
    st.integers(min_value=0, max_value=2 ** 30),
)
def test_broadcast_equals_explicit_tile(shape, seed):
    r = np.random.default_rng(seed)
    full = tuple(shape)
    # drop leading axes and squash random ones to 1 for the broadcast operand
    keep = len(full) if len(full) == 1 else int(r.integers(1, len(full) + 1))
    small = tuple(1 if r.integers(0, 2) else s for s in full[-keep:])
    a = r.normal(size=full)
    b = r.normal(size=small)
    got = T.add(Tensor(a), Tensor(b)).data
    tiled = np.broadcast_to(b, full)
    np.testing.assert_array_equal(got, a + tiled)


def test_leaf_accumulation_when_reused(rng):
    # the same tensor feeding two ops receives the summed gradient
    x = Tensor([2.0], requires_grad=True)
    with Tape():
        loss = T.add(T.mul(x, x), T.mul(x, Tensor([3.0])))
        loss = T.tensor_sum(loss)
    backward(loss)
    np.testing.assert_allclose(x.grad, [7.0], rtol=1e-12)
