"""Dense N-D real/complex tensors with reverse-mode autodiff on an explicit tape.

Values are numpy arrays (row-major, float32/float64 for real data, the
matching complex dtype for complex data). Differentiable ops record a node on
the currently active :class:`Tape`; :func:`backward` replays the nodes in
exact reverse creation order and accumulates gradients additively on leaf
tensors. Complex gradients use the real-pair convention: ``grad`` holds
``dL/d(re) + 1j * dL/d(im)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import DomainError, ShapeError, TapeError

DTYPES = {"f32": np.float32, "f64": np.float64}
_REAL_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_COMPLEX_DTYPES = (np.dtype(np.complex64), np.dtype(np.complex128))
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tape:
    """Ordered record of op nodes; usable as a context manager.

    Ops record onto the innermost active tape only when some input requires a
    gradient. Creation order is the topological order. Nodes reference their
    tensors and tensors reference the tape, so call :meth:`release` once a
    training step is done with its gradients: it breaks the cycle (freeing
    activations promptly) and returns pooled work buffers.
    """

    __slots__ = ("nodes", "_buffers")

    def __init__(self):
        self.nodes = []
        self._buffers = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack.pop()
        return False

    def own_buffer(self, arr):
        self._buffers.append(arr)

    def release(self):
        self.nodes = []
        for arr in self._buffers:
            pool_give(arr)
        self._buffers = []


_tape_stack: list[Tape] = []


def active_tape():
    return _tape_stack[-1] if _tape_stack else None


class Node:
    __slots__ = ("inputs", "outputs", "run_backward")

    def __init__(self, inputs, outputs, run_backward):
        self.inputs = inputs
        self.outputs = outputs
        self.run_backward = run_backward


class Tensor:
    """Real N-D array plus gradient slot and tape attachment."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "_leaf")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(DTYPES.get(dtype, dtype), copy=False)
        elif arr.dtype not in _REAL_DTYPES:
            arr = arr.astype(np.float64)
        # ascontiguousarray would promote 0-d arrays to 1-d; keep scalars 0-d.
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims=False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce("mean", self, axes, keepdims)

    def std(self, axes=None, keepdims=False):
        return reduce("std", self, axes, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


class ComplexTensor:
    """Complex N-D array stored as interleaved re/im pairs (numpy complex)."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "_leaf")

    def __init__(self, data, im=None, requires_grad=False):
        if im is not None:
            re_arr = np.asarray(data)
            im_arr = np.asarray(im)
            if re_arr.shape != im_arr.shape:
                raise ShapeError(f"re/im shapes differ: {re_arr.shape} vs {im_arr.shape}")
            ctype = np.complex64 if re_arr.dtype == np.float32 and im_arr.dtype == np.float32 else np.complex128
            arr = re_arr.astype(ctype) + 1j * im_arr.astype(ctype)
        else:
            arr = np.asarray(data)
            if arr.dtype not in _COMPLEX_DTYPES:
                arr = arr.astype(np.complex64 if arr.dtype == np.float32 else np.complex128)
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None
        self._leaf = True

    @property
    def re(self):
        return self.data.real

    @property
    def im(self):
        return self.data.imag

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape}, dtype={self.data.dtype.name})"


def _record(inputs, outputs, run_backward):
    """Register a node if a tape is active and some input needs gradients."""
    tape = active_tape()
    if tape is None:
        return
    if not any(t.requires_grad for t in inputs):
        return
    for out in outputs:
        out.requires_grad = True
        out.tape = tape
        out._leaf = False
    tape.nodes.append(Node(tuple(inputs), tuple(outputs), run_backward))


def _as_tensor(x, ref_dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if ref_dtype is not None and arr.dtype != ref_dtype:
        arr = arr.astype(ref_dtype)
    return Tensor(arr)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of trailing-dim broadcast)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squash = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if squash:
        g = g.sum(axis=squash, keepdims=True)
    return g.reshape(shape)


_buffer_pool: dict = {}


def pool_take(shape, dtype) -> np.ndarray:
    """Borrow a work buffer; large fresh allocations page-fault every step,
    so hot ops recycle their scratch arrays through this pool."""
    key = (tuple(shape), np.dtype(dtype))
    stack = _buffer_pool.get(key)
    if stack:
        return stack.pop()
    return np.empty(shape, dtype)


def pool_give(arr: np.ndarray):
    key = (arr.shape, arr.dtype)
    stack = _buffer_pool.setdefault(key, [])
    if len(stack) < 2:
        stack.append(arr)


def _accumulate(grad_map, t, g):
    # Out-of-place addition: pending grads may alias each other, so no entry
    # is ever mutated in place.
    key = id(t)
    if key in grad_map:
        grad_map[key][1] = grad_map[key][1] + g
    else:
        grad_map[key] = [t, g]


def _binary(a, b, fwd, bwd_a, bwd_b):
    # Non-tensor operands adopt the tensor operand's dtype so that python
    # scalars never upcast an f32 computation.
    if isinstance(a, Tensor):
        b = _as_tensor(b, ref_dtype=a.dtype)
    elif isinstance(b, Tensor):
        a = _as_tensor(a, ref_dtype=b.dtype)
    else:
        a = _as_tensor(a)
        b = _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(str(e)) from e
    out = Tensor(fwd(a.data, b.data))

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        if a.requires_grad:
            acc(a, _unbroadcast(bwd_a(g, a.data, b.data), a.shape).astype(a.dtype, copy=False))
        if b.requires_grad:
            acc(b, _unbroadcast(bwd_b(g, a.data, b.data), b.shape).astype(b.dtype, copy=False))

    _record((a, b), (out,), run)
    return out


def add(a, b) -> Tensor:
    """Elementwise a + b with trailing-dimension broadcast."""
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    """Elementwise a - b with trailing-dimension broadcast."""
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    """Elementwise Hadamard product with trailing-dimension broadcast."""
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    """Elementwise a / b with trailing-dimension broadcast."""
    return _binary(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def _unary(a, fwd, bwd):
    a = _as_tensor(a)
    out = Tensor(fwd(a.data))

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        acc(a, bwd(g, a.data, out.data))

    _record((a,), (out,), run)
    return out


def neg(a) -> Tensor:
    """Elementwise negation."""
    return _unary(a, lambda x: -x, lambda g, x, y: -g)


def exp(a) -> Tensor:
    """Elementwise natural exponential."""
    return _unary(a, np.exp, lambda g, x, y: g * y)


def log(a) -> Tensor:
    """Elementwise natural log; raises DomainError on non-positive input."""
    a = _as_tensor(a)
    if not (a.data > 0).all():
        raise DomainError("log requires strictly positive input")
    return _unary(a, np.log, lambda g, x, y: g / x)


def relu(a) -> Tensor:
    """Elementwise max(0, x)."""
    return _unary(a, lambda x: np.maximum(x, 0), lambda g, x, y: g * (x > 0))


def _erf32(x):
    # Rational erf for float32 data (|error| < 1.5e-7, about one f32 ulp);
    # float64 keeps the library erf. In-place Horner steps: this sits on the
    # training hot path.
    ax = np.abs(x)
    t = 0.3275911 * ax
    t += 1.0
    np.reciprocal(t, out=t)
    poly = 1.061405429 * t
    poly -= 1.453152027
    poly *= t
    poly += 1.421413741
    poly *= t
    poly -= 0.284496736
    poly *= t
    poly += 0.254829592
    poly *= t
    ax *= ax
    np.negative(ax, out=ax)
    np.exp(ax, out=ax)
    poly *= ax
    np.subtract(1.0, poly, out=poly)
    return np.copysign(poly, x, out=poly)


def _gauss_cdf(x):
    scaled = x * _INV_SQRT2
    e = erf(scaled) if x.dtype == np.float64 else _erf32(scaled)
    return 0.5 * (1.0 + e)


def gelu(a) -> Tensor:
    """GELU from the Gaussian CDF: x * Phi(x), Phi evaluated through erf."""
    a = _as_tensor(a)
    x = a.data
    cdf = _gauss_cdf(x)
    out = Tensor(x * cdf)

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        pdf = np.exp(-0.5 * x * x)
        pdf *= _INV_SQRT_2PI
        acc(a, g * (cdf + x * pdf))

    _record((a,), (out,), run)
    return out


def pow_const(a, exponent) -> Tensor:
    """Elementwise a ** exponent for a constant (non-differentiated) exponent."""
    a = _as_tensor(a)
    e = np.asarray(exponent, dtype=a.dtype)

    def bwd(g, x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = e * np.power(x, e - 1.0)
        return g * np.where(e == 0, 0.0, d)

    return _unary(a, lambda x: np.power(x, e), bwd)


def clamp(a, lo, hi) -> Tensor:
    """Clip values into [lo, hi]; gradient passes only inside the interval."""
    return _unary(
        a,
        lambda x: np.clip(x, lo, hi),
        lambda g, x, y: g * ((x >= lo) & (x <= hi)),
    )


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "relu": relu,
    "gelu": gelu,
}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name (binary ops require b)."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    if op in ("add", "sub", "mul", "div"):
        if b is None:
            raise ShapeError(f"{op} requires two operands")
        return fn(a, b)
    if b is not None:
        raise ShapeError(f"{op} takes a single operand")
    return fn(a)


def matmul(a, b) -> Tensor:
    """2-D matrix product; backward is dA = dC @ B^T, dB = A^T @ dC."""
    a = _as_tensor(a)
    b = _as_tensor(b, ref_dtype=a.dtype)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        if a.requires_grad:
            acc(a, (g @ b.data.T).astype(a.dtype, copy=False))
        if b.requires_grad:
            acc(b, (a.data.T @ g).astype(b.dtype, copy=False))

    _record((a, b), (out,), run)
    return out


def _normalize_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for ndim {ndim}")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def reduce(op: str, a, axes=None, keepdims=False) -> Tensor:
    """Reduce over the given axes: sum, mean, or population std."""
    a = _as_tensor(a)
    axes = _normalize_axes(axes, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    if n == 0:
        raise DomainError(f"cannot {op} over an empty extent")

    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def expand(g):
        return g.reshape(kept_shape)

    if op == "sum":
        out = Tensor(a.data.sum(axis=axes, keepdims=keepdims))

        def run(node, grad_map, acc):
            g = expand(grad_map[id(out)][1])
            acc(a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))

    elif op == "mean":
        out = Tensor(a.data.mean(axis=axes, keepdims=keepdims))

        def run(node, grad_map, acc):
            g = expand(grad_map[id(out)][1]) / n
            acc(a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))

    elif op == "std":
        # Population definition: sqrt(mean((x - mu)^2)), no Bessel correction.
        mu = a.data.mean(axis=axes, keepdims=True)
        dev = a.data - mu
        s_keep = np.sqrt(np.square(dev).mean(axis=axes, keepdims=True))
        out = Tensor(s_keep if keepdims else s_keep.reshape(
            tuple(d for i, d in enumerate(a.shape) if i not in axes)))

        def run(node, grad_map, acc):
            g = expand(grad_map[id(out)][1])
            safe = np.where(s_keep > 0, s_keep, 1.0)
            acc(a, np.where(s_keep > 0, g * dev / (n * safe), 0.0).astype(a.dtype, copy=False))

    else:
        raise ValueError(f"unknown reduce op {op!r}")

    _record((a,), (out,), run)
    return out


def mean(a, axes=None, keepdims=False) -> Tensor:
    return reduce("mean", a, axes, keepdims)


def std(a, axes=None, keepdims=False) -> Tensor:
    return reduce("std", a, axes, keepdims)


def tensor_sum(a, axes=None, keepdims=False) -> Tensor:
    return reduce("sum", a, axes, keepdims)


def reshape(a, shape) -> Tensor:
    """View a under a new shape (same element count)."""
    a = _as_tensor(a)
    try:
        out_data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from e
    out = Tensor(out_data)

    def run(node, grad_map, acc):
        acc(a, grad_map[id(out)][1].reshape(a.shape))

    _record((a,), (out,), run)
    return out


def moveaxis(a, src: int, dst: int) -> Tensor:
    """Move one axis to a new position (copying to keep row-major layout)."""
    a = _as_tensor(a)
    out = Tensor(np.ascontiguousarray(np.moveaxis(a.data, src, dst)))

    def run(node, grad_map, acc):
        acc(a, np.ascontiguousarray(np.moveaxis(grad_map[id(out)][1], dst, src)))

    _record((a,), (out,), run)
    return out


def gather(a, index) -> Tensor:
    """Pick one entry per row along the last axis: out[i...] = a[i..., index[i...]]."""
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise ShapeError(f"index shape {idx.shape} must match leading shape {a.shape[:-1]}")
    out = Tensor(np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0])

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None].astype(a.dtype), axis=-1)
        acc(a, full)

    _record((a,), (out,), run)
    return out


def make_complex(re, im=None) -> ComplexTensor:
    """Combine real tensors into a complex tensor (im defaults to zero)."""
    re = _as_tensor(re)
    im_t = _as_tensor(im, ref_dtype=re.dtype) if im is not None else None
    if im_t is not None and im_t.shape != re.shape:
        raise ShapeError(f"re/im shapes differ: {re.shape} vs {im_t.shape}")
    ctype = np.complex64 if re.dtype == np.float32 else np.complex128
    data = re.data.astype(ctype)
    if im_t is not None:
        data = data + 1j * im_t.data.astype(ctype)
    out = ComplexTensor(data)

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        if re.requires_grad:
            acc(re, np.ascontiguousarray(g.real).astype(re.dtype, copy=False))
        if im_t is not None and im_t.requires_grad:
            acc(im_t, np.ascontiguousarray(g.imag).astype(im_t.dtype, copy=False))

    _record((re,) if im_t is None else (re, im_t), (out,), run)
    return out


def real_part(z: ComplexTensor) -> Tensor:
    """Extract the real plane; gradient flows back only through it."""
    out = Tensor(np.ascontiguousarray(z.data.real))

    def run(node, grad_map, acc):
        acc(z, grad_map[id(out)][1].astype(out.dtype, copy=False) + 0j)

    _record((z,), (out,), run)
    return out


def complex_mul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Elementwise complex product with trailing-dimension broadcast.

    The adjoint multiplies the cotangent by the other operand's conjugate
    (real-pair convention), summed back over any broadcast axes.
    """
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(str(e)) from e
    out = ComplexTensor(a.data * b.data)

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        if a.requires_grad:
            acc(a, _unbroadcast(np.conj(b.data) * g, a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(np.conj(a.data) * g, b.shape))

    _record((a, b), (out,), run)
    return out


def backward(loss: Tensor):
    """Reverse-mode pass from a scalar loss; grads accumulate on leaf tensors."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
    if not np.isfinite(loss.data).all():
        raise DomainError("loss is not finite")
    if loss.tape is None:
        raise TapeError("loss is not attached to a tape")

    grad_map: dict[int, list] = {}
    grad_map[id(loss)] = [loss, np.ones_like(loss.data)]

    def acc(t, g):
        _accumulate(grad_map, t, g)

    for node in reversed(loss.tape.nodes):
        if not any(id(o) in grad_map for o in node.outputs):
            continue
        node.run_backward(node, grad_map, acc)
        # Output grads are fully consumed once their producing node ran.
        for o in node.outputs:
            entry = grad_map.pop(id(o), None)
            if entry is not None and o._leaf:
                o.grad = entry[1] if o.grad is None else o.grad + entry[1]

    for entry in grad_map.values():
        t, g = entry
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()
