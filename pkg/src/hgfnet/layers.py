"""Neural building blocks: 3D convolution, feature normalization, linear,
dropout, and softmax, each with a tape-registered backward rule."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor, _record


class Conv3dLayer:
    """Stride-1, same-padding 3D convolution (cross-correlation, no flip).

    weight: (filters, in_channels, kd, kh, kw) with odd kernel extents;
    bias: (filters,).
    """

    def __init__(self, weight: Tensor, bias: Tensor):
        if weight.ndim != 5:
            raise ShapeError(f"conv weight must be 5-D, got {weight.shape}")
        if any(k % 2 == 0 for k in weight.shape[2:]):
            raise ConfigError(f"kernel extents must be odd, got {weight.shape[2:]}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} filters")
        self.weight = weight
        self.bias = bias

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]


def conv3d(layer: Conv3dLayer, x: Tensor) -> Tensor:
    """Convolve (B, C_in, D, H, W) -> (B, F, D, H, W), preserving extents.

    Evaluated as im2col + one BLAS matmul; the naive five-loop definition is
    the test oracle.
    """
    w, b = layer.weight, layer.bias
    if x.ndim != 5:
        raise ShapeError(f"conv3d input must be 5-D, got {x.shape}")
    if x.shape[1] != layer.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    nb, cin, d, h, wd = x.shape
    f = layer.out_channels
    kd, kh, kw = w.shape[2:]
    pd, ph, pw = kd // 2, kh // 2, kw // 2

    # Batch-last layout keeps every im2col slice copy running over contiguous
    # batch-sized spans; channel-major columns then flatten straight into the
    # (cin*k3, voxels*batch) operand of one BLAS product per pass.
    xt = np.ascontiguousarray(np.moveaxis(x.data, 0, 4))
    padded = np.pad(xt, ((0, 0), (pd, pd), (ph, ph), (pw, pw), (0, 0)))
    k3 = kd * kh * kw
    m = d * h * wd * nb
    offsets = [(a, bb, c) for a in range(kd) for bb in range(kh) for c in range(kw)]
    cols = T.pool_take((cin, k3, d, h, wd, nb), x.dtype)
    for ci in range(cin):
        for i, (a, bb, c) in enumerate(offsets):
            cols[ci, i] = padded[ci, a:a + d, bb:bb + h, c:c + wd]
    cols2 = cols.reshape(cin * k3, m)
    wmat = w.data.reshape(f, cin * k3)
    out2 = wmat @ cols2
    out2 += b.data[:, None]
    out = Tensor(np.ascontiguousarray(np.moveaxis(out2.reshape(f, d, h, wd, nb), 4, 0)))

    tape = T.active_tape()
    recording = tape is not None and any(t.requires_grad for t in (x, w, b))
    if not recording:
        T.pool_give(cols)
        return out
    tape.own_buffer(cols)

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        g2 = np.ascontiguousarray(np.moveaxis(g, 0, 4)).reshape(f, m)
        if b.requires_grad:
            acc(b, g2.sum(axis=1))
        if w.requires_grad:
            acc(w, (g2 @ cols2.T).reshape(w.shape))
        if x.requires_grad:
            dcols = T.pool_take((cin * k3, m), x.dtype)
            np.matmul(wmat.T, g2, out=dcols)
            dview = dcols.reshape(cin, k3, d, h, wd, nb)
            gpad = np.zeros_like(padded)
            for ci in range(cin):
                for i, (a, bb, c) in enumerate(offsets):
                    gpad[ci, a:a + d, bb:bb + h, c:c + wd] += dview[ci, i]
            T.pool_give(dcols)
            crop = gpad[:, pd:pd + d, ph:ph + h, pw:pw + wd]
            acc(x, np.ascontiguousarray(np.moveaxis(crop, 4, 0)))

    _record((x, w, b), (out,), run)
    return out


def feature_norm(x: Tensor, axes, eps: float = 1e-5) -> Tensor:
    """Standardize x over the given axes: (x - mean) / (population std + eps)."""
    mu = T.mean(x, axes, keepdims=True)
    sigma = T.std(x, axes, keepdims=True)
    return T.div(T.sub(x, mu), T.add(sigma, eps))


class LinearLayer:
    """Affine map on the trailing axis: weight (out, in), bias (out,)."""

    def __init__(self, weight: Tensor, bias: Tensor):
        if weight.ndim != 2:
            raise ShapeError(f"linear weight must be 2-D, got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
        self.weight = weight
        self.bias = bias

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]


def linear(layer: LinearLayer, x: Tensor) -> Tensor:
    """Apply y = x W^T + b over the trailing axis, preserving leading axes."""
    if x.shape[-1] != layer.in_features:
        raise ShapeError(
            f"trailing extent {x.shape[-1]} does not match layer input {layer.in_features}")
    lead = x.shape[:-1]
    x2 = T.reshape(x, (-1, layer.in_features))
    y2 = T.add(T.matmul(x2, T.moveaxis(layer.weight, 0, 1)), layer.bias)
    return T.reshape(y2, lead + (layer.out_features,))


class DropoutState:
    """Inverted dropout: train mode zeroes with probability `rate` and
    rescales survivors by 1/(1-rate); eval mode is the identity."""

    def __init__(self, rate: float, mode: str = "train", rng=None, stream: str = "dropout"):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        if mode not in ("train", "eval"):
            raise ConfigError(f"dropout mode must be train|eval, got {mode!r}")
        self.rate = float(rate)
        self.mode = mode
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.stream = stream


def dropout(state: DropoutState, x: Tensor) -> Tensor:
    if state.rate >= 1.0:
        raise ConfigError(f"dropout rate must be < 1, got {state.rate}")
    if state.mode == "eval" or state.rate == 0.0:
        return x
    keep = 1.0 - state.rate
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    mask = (state.rng.random(x.shape, dtype=draw_dtype) >= state.rate).astype(x.dtype)
    mask /= keep
    out = Tensor(x.data * mask)

    def run(node, grad_map, acc):
        acc(x, grad_map[id(out)][1] * mask)

    _record((x,), (out,), run)
    return out


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the trailing axis with max-subtraction."""
    if not np.isfinite(x.data).all():
        raise DomainError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def run(node, grad_map, acc):
        g = grad_map[id(out)][1]
        acc(x, (y * (g - (g * y).sum(axis=-1, keepdims=True))).astype(x.dtype, copy=False))

    _record((x,), (out,), run)
    return out
