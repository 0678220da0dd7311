"""HGFNet assembly: 3D conv stem with GELU, stacked global-filter blocks, and
a flattened fully connected head sized from the feature dimensions, plus
deterministic initialization, parameter accounting, and checkpoint I/O."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, ShapeError
from .gfnet import GfnetBlock, TransformMode, gfnet_block_forward, mask_init
from .layers import Conv3dLayer, DropoutState, LinearLayer, conv3d, dropout, linear, softmax
from .tensor import Tensor

_CHECKPOINT_MAGIC = b"HGFC\x01"


@dataclass
class ModelConfig:
    """All architecture hyperparameters for one model build."""

    bands: int
    patch_h: int
    patch_w: int
    num_classes: int
    stem_channels: list = field(default_factory=lambda: [8, 16, 32])
    stem_kernel: int = 3
    num_blocks: int = 4
    transform_mode: str = "ssft"
    mask_mode: str = "learnable"
    mask_keep_fraction: float = 0.5
    ffn_ratio: int = 2
    head_widths: list = field(default_factory=lambda: [256, 128])
    dropout: float = 0.1
    head_activation: str = "relu"
    dtype: str = "f32"
    seed: int = 0

    def validate(self):
        if self.bands < 1 or self.patch_h < 1 or self.patch_w < 1:
            raise ConfigError(f"invalid input extents {self.bands}x{self.patch_h}x{self.patch_w}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if not self.stem_channels:
            raise ConfigError("stem_channels must not be empty")
        if self.stem_kernel % 2 == 0 or self.stem_kernel < 1:
            raise ConfigError(f"stem kernel must be odd, got {self.stem_kernel}")
        if self.num_blocks < 1:
            raise ConfigError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.ffn_ratio < 1:
            raise ConfigError(f"ffn_ratio must be >= 1, got {self.ffn_ratio}")
        if not self.head_widths:
            raise ConfigError("head_widths must not be empty")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.mask_mode not in ("learnable", "binary"):
            raise ConfigError(f"mask_mode must be learnable|binary, got {self.mask_mode!r}")
        if self.head_activation not in ("relu", "gelu"):
            raise ConfigError(f"head_activation must be relu|gelu, got {self.head_activation!r}")
        if self.dtype not in T.DTYPES:
            raise ConfigError(f"dtype must be f32|f64, got {self.dtype!r}")
        TransformMode.from_name(self.transform_mode)

    @property
    def feature_channels(self):
        return self.stem_channels[-1]

    @property
    def flat_features(self):
        return self.feature_channels * self.bands * self.patch_h * self.patch_w


class HgfnetModel:
    """Built model: conv stem, filter blocks, fully connected head."""

    def __init__(self, config: ModelConfig, stem, blocks, head, dropouts):
        self.config = config
        self.stem = stem
        self.blocks = blocks
        self.head = head
        self._dropouts = dropouts
        self.mode = "eval"

    def set_mode(self, mode: str):
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be train|eval, got {mode!r}")
        self.mode = mode
        for state in self._dropouts:
            state.mode = mode

    def set_dropout_rng(self, rng):
        for state in self._dropouts:
            state.rng = rng

    def parameters(self):
        """(name, Tensor) pairs in a stable order."""
        params = []
        for i, layer in enumerate(self.stem):
            params.append((f"stem.{i}.weight", layer.weight))
            params.append((f"stem.{i}.bias", layer.bias))
        for i, block in enumerate(self.blocks):
            for name, p in block.parameters():
                params.append((f"blocks.{i}.{name}", p))
        for i, layer in enumerate(self.head):
            params.append((f"head.{i}.weight", layer.weight))
            params.append((f"head.{i}.bias", layer.bias))
        return params


def _glorot(rng, shape, fan_in, fan_out, dtype):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-s, s, size=shape), dtype=dtype, requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape), dtype=dtype, requires_grad=True)


def build(config: ModelConfig) -> HgfnetModel:
    """Construct a model with seeded Glorot-uniform weights and zero biases.

    The same seed yields bit-identical parameters.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    dt = config.dtype
    k = config.stem_kernel
    mode = TransformMode.from_name(config.transform_mode)

    stem = []
    cin = 1
    for cout in config.stem_channels:
        fan = cin * k ** 3, cout * k ** 3
        stem.append(Conv3dLayer(_glorot(rng, (cout, cin, k, k, k), *fan, dt), _zeros(cout, dt)))
        cin = cout

    dropouts = []
    blocks = []
    f = config.feature_channels
    d_h = config.ffn_ratio * f
    mask_shape = (f, config.bands, config.patch_h, config.patch_w)
    for _ in range(config.num_blocks):
        mask = mask_init(mask_shape, config.mask_mode, config.mask_keep_fraction,
                         transform_axes=tuple(ax - 1 for ax in mode.axes), dtype=dt)
        ffn_in = LinearLayer(_glorot(rng, (d_h, f), f, d_h, dt), _zeros(d_h, dt))
        ffn_out = LinearLayer(_glorot(rng, (f, d_h), d_h, f, dt), _zeros(f, dt))
        drop = DropoutState(config.dropout, "eval")
        dropouts.append(drop)
        blocks.append(GfnetBlock(mask, ffn_in, ffn_out, drop, mode))

    head = []
    widths = [config.flat_features] + list(config.head_widths) + [config.num_classes]
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        head.append(LinearLayer(_glorot(rng, (w_out, w_in), w_in, w_out, dt), _zeros(w_out, dt)))
    for _ in config.head_widths:
        dropouts.append(DropoutState(config.dropout, "eval"))

    return HgfnetModel(config, stem, blocks, head, dropouts)


def forward(model: HgfnetModel, x: Tensor, mode: str = None) -> Tensor:
    """Full pipeline from (B, 1, D, H, W) patches to (B, K) class probabilities."""
    cfg = model.config
    if mode is not None:
        model.set_mode(mode)
    if x.ndim != 5 or tuple(x.shape[1:]) != (1, cfg.bands, cfg.patch_h, cfg.patch_w):
        raise ShapeError(
            f"input shape {x.shape} does not match (B, 1, {cfg.bands}, {cfg.patch_h}, {cfg.patch_w})")

    h = x
    for layer in model.stem:
        h = T.gelu(conv3d(layer, h))
    for block in model.blocks:
        h = gfnet_block_forward(block, h)
    h = T.reshape(h, (x.shape[0], cfg.flat_features))
    act = T.relu if cfg.head_activation == "relu" else T.gelu
    n_hidden = len(model.head) - 1
    head_drops = model._dropouts[len(model.blocks):]
    for i in range(n_hidden):
        h = act(linear(model.head[i], h))
        h = dropout(head_drops[i], h)
    logits = linear(model.head[-1], h)
    return softmax(logits)


def parameter_count(model: HgfnetModel) -> int:
    """Total scalar parameters (a complex mask entry counts two scalars)."""
    return sum(p.size for _, p in model.parameters())


def save_checkpoint(model: HgfnetModel, path, extra: dict = None):
    """Write config JSON plus raw little-endian parameter tensors.

    `extra` rides along in the JSON header (run provenance, data recipe).
    """
    meta = {"config": asdict(model.config)}
    if extra:
        meta["extra"] = extra
    header = json.dumps(meta).encode("utf-8")
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            raw = name.encode("utf-8")
            code = b"<f4" if p.dtype == np.float32 else b"<f8"
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(code)
            fh.write(struct.pack("<B", p.ndim))
            for extent in p.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(p.data, dtype=p.dtype.newbyteorder("<")).tobytes())


def checkpoint_meta(path) -> dict:
    """Read just the JSON header of a checkpoint."""
    with open(path, "rb") as fh:
        head = fh.read(9)
        if head[:5] != _CHECKPOINT_MAGIC:
            raise FormatError(f"{path} is not a model checkpoint")
        (hlen,) = struct.unpack("<I", head[5:])
        return json.loads(fh.read(hlen).decode("utf-8"))


def load_checkpoint(path) -> HgfnetModel:
    """Rebuild a model from a checkpoint, bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != _CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a model checkpoint")
    off = 5
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    config = ModelConfig(**meta["config"])
    model = build(config)
    params = dict(model.parameters())
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    if count != len(params):
        raise FormatError(f"checkpoint has {count} tensors, model expects {len(params)}")
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        code = blob[off:off + 3].decode("ascii")
        off += 3
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dtype = np.dtype(code)
        nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
        target = params.get(name)
        if target is None:
            raise FormatError(f"unexpected tensor {name!r} in checkpoint")
        if tuple(shape) != target.shape:
            raise FormatError(f"tensor {name!r} shape {shape} does not match model {target.shape}")
        arr = np.frombuffer(blob[off:off + nbytes], dtype=dtype).reshape(shape)
        off += nbytes
        target.data = np.ascontiguousarray(arr.astype(target.dtype, copy=False))
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes in checkpoint")
    return model
