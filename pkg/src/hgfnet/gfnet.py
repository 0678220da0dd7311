"""Frequency-domain global-filter block: normalize, transform (spectral,
spatial, or joint), apply a learnable or binary frequency mask, invert,
feed-forward, and add the residual from the normalized input."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .fft import fft_diff
from .layers import DropoutState, LinearLayer, dropout, linear
from .tensor import ComplexTensor, Tensor, complex_mul, make_complex, real_part


@dataclass(frozen=True)
class TransformMode:
    """Which axes of a (B, F, D, H, W) feature map are Fourier-transformed."""

    name: str
    axes: tuple

    @staticmethod
    def from_name(name: str) -> "TransformMode":
        axes = _TRANSFORM_AXES.get(name)
        if axes is None:
            raise ConfigError(f"transform mode must be one of {sorted(_TRANSFORM_AXES)}, got {name!r}")
        return TransformMode(name, axes)


# sft: 1D over the spectral (depth) axis; spft: 2D over height/width;
# ssft: 3D jointly over depth, height, and width.
_TRANSFORM_AXES = {"sft": (2,), "spft": (3, 4), "ssft": (2, 3, 4)}

SFT = TransformMode.from_name("sft")
SPFT = TransformMode.from_name("spft")
SSFT = TransformMode.from_name("ssft")


class FrequencyMask:
    """Per-frequency multiplicative filter over a (F, D, H, W) feature map.

    Learnable mode holds trainable real/imaginary planes; binary mode holds a
    fixed {0,1} low-pass gate and is never trained.
    """

    def __init__(self, mode: str, re: Tensor = None, im: Tensor = None, gate: np.ndarray = None):
        if mode == "learnable":
            if re is None or im is None or re.shape != im.shape:
                raise ShapeError("learnable mask needs matching re/im planes")
            self.re, self.im = re, im
            self.gate = None
            self.trainable = True
        elif mode == "binary":
            if gate is None:
                raise ConfigError("binary mask needs a gate array")
            if not np.isin(gate, (0.0, 1.0)).all():
                raise ConfigError("binary mask may contain only 0/1 entries")
            self.re = self.im = None
            self.gate = gate
            self.trainable = False
        else:
            raise ConfigError(f"mask mode must be learnable|binary, got {mode!r}")
        self.mode = mode

    @property
    def shape(self):
        return self.re.shape if self.mode == "learnable" else self.gate.shape

    def values(self) -> ComplexTensor:
        """Current filter as a complex tensor (tape-attached when learnable)."""
        if self.mode == "learnable":
            return make_complex(self.re, self.im)
        return ComplexTensor(self.gate.astype(np.complex64 if self.gate.dtype == np.float32 else np.complex128))

    def parameters(self):
        if self.mode == "learnable":
            return [("mask_re", self.re), ("mask_im", self.im)]
        return []


def _lowpass_keep(n: int, keep_fraction: float) -> np.ndarray:
    """0/1 vector keeping the ceil(rho*n) lowest |frequency| bins.

    Bin k carries signed frequency k for k <= n//2 and k-n otherwise; ties
    between +f and -f resolve toward the positive bin.
    """
    k = math.ceil(keep_fraction * n)
    idx = np.arange(n)
    freq = np.where(idx <= n // 2, idx, idx - n)
    order = np.lexsort((freq < 0, np.abs(freq)))
    keep = np.zeros(n)
    keep[order[:k]] = 1.0
    return keep


def mask_init(shape, mode: str, keep_fraction: float = 0.5, transform_axes=None,
              dtype: str = "f32") -> FrequencyMask:
    """Build the block's initial filter.

    Learnable masks start at 1+0i everywhere (identity filter). Binary masks
    are an axis-aligned low-pass box over the transformed axes with
    `keep_fraction` of the bins retained per axis, DC-centered and wrap-aware.
    """
    shape = tuple(shape)
    if mode == "learnable":
        return FrequencyMask(
            "learnable",
            re=Tensor(np.ones(shape), dtype=dtype, requires_grad=True),
            im=Tensor(np.zeros(shape), dtype=dtype, requires_grad=True),
        )
    if mode == "binary":
        if not 0.0 < keep_fraction <= 1.0:
            raise ConfigError(f"keep fraction must lie in (0, 1], got {keep_fraction}")
        axes = tuple(transform_axes) if transform_axes is not None else tuple(range(len(shape)))
        gate = np.ones(shape)
        for ax in axes:
            vec = _lowpass_keep(shape[ax], keep_fraction)
            expand = [1] * len(shape)
            expand[ax] = shape[ax]
            gate = gate * vec.reshape(expand)
        return FrequencyMask("binary", gate=gate.astype(T.DTYPES.get(dtype, dtype)))
    raise ConfigError(f"mask mode must be learnable|binary, got {mode!r}")


def apply_mask(x_ft: ComplexTensor, mask: FrequencyMask) -> ComplexTensor:
    """Hadamard-filter a spectrum; gradients reach learnable mask planes."""
    if x_ft.shape[-len(mask.shape):] != mask.shape and x_ft.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match spectrum {x_ft.shape}")
    return complex_mul(x_ft, mask.values())


class GfnetBlock:
    """One global-filter block over (B, F, D, H, W) feature maps."""

    def __init__(self, mask: FrequencyMask, ffn_in: LinearLayer, ffn_out: LinearLayer,
                 drop: DropoutState, mode: TransformMode):
        d = mask.shape[0]
        if ffn_in.in_features != d or ffn_out.out_features != d:
            raise ShapeError(
                f"FFN width {ffn_in.in_features}->{ffn_out.out_features} does not match {d} channels")
        if ffn_in.out_features != ffn_out.in_features:
            raise ShapeError("FFN hidden extents disagree")
        if ffn_in.out_features < d:
            raise ConfigError("FFN hidden width must be at least the channel count")
        self.mask = mask
        self.ffn_in = ffn_in
        self.ffn_out = ffn_out
        self.dropout = drop
        self.mode = mode

    def parameters(self):
        params = list(self.mask.parameters())
        params += [("ffn_in.weight", self.ffn_in.weight), ("ffn_in.bias", self.ffn_in.bias),
                   ("ffn_out.weight", self.ffn_out.weight), ("ffn_out.bias", self.ffn_out.bias)]
        return params


def gfnet_block_forward(block: GfnetBlock, x: Tensor) -> Tensor:
    """normalize -> FFT -> mask -> inverse FFT -> channelwise FFN -> residual.

    The residual adds the normalized input (not the raw input) to the FFN
    output; the inverse transform plus real-part extraction sits between the
    frequency filter and the FFN so the FFN sees real features.
    """
    if x.ndim != 5:
        raise ShapeError(f"block input must be (B, F, D, H, W), got {x.shape}")
    if tuple(x.shape[1:]) != tuple(block.mask.shape):
        raise ShapeError(f"input trailing shape {x.shape[1:]} does not match mask {block.mask.shape}")
    from .layers import feature_norm

    x_norm = feature_norm(x, axes=(1, 2, 3, 4))
    x_ft = fft_diff(x_norm, block.mode.axes, "forward")
    filtered = apply_mask(x_ft, block.mask)
    x_sp = real_part(fft_diff(filtered, block.mode.axes, "inverse"))

    h = T.moveaxis(x_sp, 1, 4)
    h = linear(block.ffn_in, h)
    h = T.gelu(h)
    h = dropout(block.dropout, h)
    h = linear(block.ffn_out, h)
    x_ffn = T.moveaxis(h, 4, 1)
    return T.add(x_norm, x_ffn)
