"""Shared fixtures and the finite-difference gradient oracle.

Thread caps are pinned before numpy loads so wall-time-sensitive tests run
single-core and BLAS results stay reproducible.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from hgfnet.tensor import ComplexTensor, Tape, Tensor, backward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(build_loss, leaf, h=1e-5):
    """Central-difference gradient of build_loss() w.r.t. one leaf tensor.

    For complex leaves the real and imaginary planes are perturbed
    independently and packed as re-grad + 1j * im-grad.
    """
    if isinstance(leaf, ComplexTensor):
        grad = np.zeros(leaf.shape, dtype=np.complex128)
        for plane, view in (("re", leaf.data.real), ("im", leaf.data.imag)):
            flat = view.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = build_loss().item()
                flat[i] = orig - h
                down = build_loss().item()
                flat[i] = orig
                delta = (up - down) / (2 * h)
                gflat[i] += delta if plane == "re" else 1j * delta
        return grad
    grad = np.zeros(leaf.shape, dtype=np.float64)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = build_loss().item()
        flat[i] = orig - h
        down = build_loss().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def assert_grads_match(build_loss, leaves, h=1e-5, rtol=1e-4):
    """Tape gradients vs central differences, elementwise relative error with
    denominator max(|g|, 1e-8).

    Central differences of a loss of magnitude L carry ~eps*L/(2h) roundoff;
    elements whose discrepancy sits below that noise floor (exactly-zero true
    gradients) are accepted regardless of the ratio.
    """
    for leaf in leaves:
        leaf.zero_grad()
    with Tape():
        loss = build_loss()
    backward(loss)
    fd_noise = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / (2.0 * h)
    for leaf in leaves:
        assert leaf.grad is not None, "leaf received no gradient"
        fd = numeric_grad(build_loss, leaf, h)
        got = np.asarray(leaf.grad, dtype=fd.dtype)
        diff = np.abs(got - fd)
        rel = diff / np.maximum(np.abs(fd), 1e-8)
        bad = (rel >= rtol) & (diff >= fd_noise)
        assert not bad.any(), (
            f"gradient mismatch: rel {rel.max():.3e}, diff {diff.max():.3e}")


def dft_reference(x, axes=None):
    """Literal definition sum, written with explicit loops over 1-D slices.

    Independent of hgfnet.fft internals; complex128 accumulation.
    """
    arr = np.asarray(x, dtype=np.complex128)
    if axes is None:
        axes = tuple(range(arr.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    for ax in axes:
        arr = np.moveaxis(arr, ax, -1)
        n = arr.shape[-1]
        flat = arr.reshape(-1, n)
        out = np.zeros_like(flat)
        for row in range(flat.shape[0]):
            for k in range(n):
                acc = 0.0 + 0.0j
                for m in range(n):
                    acc += flat[row, m] * np.exp(-2j * np.pi * k * m / n)
                out[row, k] = acc
        arr = np.moveaxis(out.reshape(arr.shape), -1, ax)
    return arr


def make_tensor(rng, shape, requires_grad=True, scale=1.0, offset=0.0):
    return Tensor(offset + scale * rng.normal(size=shape), dtype="f64",
                  requires_grad=requires_grad)
