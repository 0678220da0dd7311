"""HGFNet: hybrid 3D-convolution + frequency-domain global-filter
classification for hyperspectral cubes, on an in-repo differentiable tensor
and FFT engine.

Submodules load lazily so the CLI can pin thread environment variables
before numpy is imported.
"""

__version__ = "0.1.0"

_SUBMODULES = ("cli", "data", "errors", "fft", "gfnet", "layers", "metrics",
               "model", "report", "tensor", "training")

_EXPORTS = {
    "Tensor": "tensor",
    "ComplexTensor": "tensor",
    "Tape": "tensor",
    "backward": "tensor",
    "fft": "fft",
    "ifft": "fft",
    "dft_naive": "fft",
    "fft_diff": "fft",
    "ModelConfig": "model",
    "HgfnetModel": "model",
    "build": "model",
    "forward": "model",
    "parameter_count": "model",
    "save_checkpoint": "model",
    "load_checkpoint": "model",
    "HsiCube": "data",
    "PatchDataset": "data",
    "SplitSpec": "data",
    "synthesize_cube": "data",
    "ClassStats": "training",
    "class_stats": "training",
    "afl_loss": "training",
    "focal_loss": "training",
    "cross_entropy": "training",
    "fit": "training",
    "confusion": "metrics",
    "scores": "metrics",
}


def __getattr__(name):
    import importlib

    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    owner = _EXPORTS.get(name)
    if owner is not None:
        return getattr(importlib.import_module(f".{owner}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(_SUBMODULES) + list(_EXPORTS) + ["__version__"])
