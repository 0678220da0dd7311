"""Hyperspectral cube ingestion, per-band standardization, mirror-padded
patch extraction, stratified splitting, and a synthetic scene generator for
desk-scale experiments.

On-disk cube layout: a JSON header naming a raw little-endian float32 data
file (band-major: band, then row, then column) and a raw little-endian int32
ground-truth file (row-major, 0 = unlabeled, 1..K = classes).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError


@dataclass
class HsiCube:
    """A scene: float values (bands, height, width) plus an integer gt map."""

    values: np.ndarray
    gt: np.ndarray
    classes: int
    wavelengths: list = None

    def __post_init__(self):
        if self.values.ndim != 3:
            raise FormatError(f"cube values must be 3-D, got {self.values.shape}")
        if self.gt.shape != self.values.shape[1:]:
            raise FormatError(
                f"gt extents {self.gt.shape} do not match scene {self.values.shape[1:]}")
        if self.wavelengths is not None and len(self.wavelengths) != self.values.shape[0]:
            raise FormatError("wavelength list length must equal the band count")

    @property
    def bands(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]


@dataclass
class PatchDataset:
    """Labeled patches (N, 1, bands, p, p) with labels, pixel coords, and
    per-sample train|val|test tags (empty string before splitting)."""

    patches: np.ndarray
    labels: np.ndarray
    coords: np.ndarray
    split: np.ndarray = None

    def __post_init__(self):
        n = len(self.patches)
        if self.split is None:
            self.split = np.full(n, "", dtype="<U5")
        if not (len(self.labels) == len(self.coords) == len(self.split) == n):
            raise DataError("patches, labels, coords, and split must align")

    def __len__(self):
        return len(self.patches)

    def subset(self, tag: str):
        """(patches, labels) for one split tag."""
        idx = np.nonzero(self.split == tag)[0]
        return self.patches[idx], self.labels[idx]


@dataclass
class SplitSpec:
    """Stratified split fractions (train, val, test) and the shuffle seed."""

    fractions: tuple = (0.25, 0.25, 0.50)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.fractions}")
        if any(f <= 0 for f in self.fractions):
            raise ConfigError(f"split fractions must be positive, got {self.fractions}")


def load_cube(header_path) -> HsiCube:
    """Read a cube from its JSON header; byte counts must match exactly."""
    try:
        with open(header_path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read cube header {header_path}: {e}") from e
    for key in ("bands", "height", "width", "dtype", "data_file", "gt_file", "classes"):
        if key not in header:
            raise FormatError(f"cube header missing field {key!r}")
    if header["dtype"] != "f32":
        raise FormatError(f"cube dtype must be f32, got {header['dtype']!r}")
    bands, height, width = header["bands"], header["height"], header["width"]
    classes = header["classes"]
    base = os.path.dirname(os.path.abspath(header_path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    def read_exact(path, dtype, count, what):
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as e:
            raise FormatError(f"cannot read {what} file: {e}") from e
        expected = count * np.dtype(dtype).itemsize
        if len(blob) != expected:
            raise FormatError(f"{what} file holds {len(blob)} bytes, header declares {expected}")
        return np.frombuffer(blob, dtype=dtype)

    raw = read_exact(resolve(header["data_file"]), "<f4", bands * height * width, "data")
    gt_raw = read_exact(resolve(header["gt_file"]), "<i4", height * width, "gt")
    gt = gt_raw.reshape(height, width).astype(np.int64)
    if gt.min() < 0 or gt.max() > classes:
        raise FormatError(f"gt labels must lie in 0..{classes}, found {gt.min()}..{gt.max()}")
    return HsiCube(
        values=raw.reshape(bands, height, width).astype(np.float32),
        gt=gt,
        classes=classes,
        wavelengths=header.get("wavelengths"),
    )


def save_cube(cube: HsiCube, header_path) -> None:
    """Write the header + raw pair next to header_path; round-trips bit-exactly."""
    base, name = os.path.split(os.path.abspath(header_path))
    stem = os.path.splitext(name)[0]
    data_file = f"{stem}.f32"
    gt_file = f"{stem}.gt.i32"
    header = {
        "bands": cube.bands, "height": cube.height, "width": cube.width,
        "dtype": "f32", "data_file": data_file, "gt_file": gt_file,
        "classes": cube.classes,
    }
    if cube.wavelengths is not None:
        header["wavelengths"] = list(cube.wavelengths)
    cube.values.astype("<f4").tofile(os.path.join(base, data_file))
    cube.gt.astype("<i4").tofile(os.path.join(base, gt_file))
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh)


def normalize_cube(cube: HsiCube) -> HsiCube:
    """Standardize each band to mean 0, population std 1 (constant bands -> 0)."""
    v = cube.values.astype(np.float64)
    mu = v.mean(axis=(1, 2), keepdims=True)
    sigma = v.std(axis=(1, 2), keepdims=True)
    out = np.where(sigma > 0, (v - mu) / np.where(sigma > 0, sigma, 1.0), 0.0)
    return HsiCube(values=out.astype(np.float32), gt=cube.gt, classes=cube.classes,
                   wavelengths=cube.wavelengths)


def extract_patches(cube: HsiCube, patch: int) -> PatchDataset:
    """One (1, bands, patch, patch) sample per labeled pixel, centered on it.

    Scene borders are mirror-reflected (edge pixel not repeated), so the
    patch must satisfy patch <= 2*min(height, width) - 1.
    """
    if patch % 2 == 0 or patch < 1:
        raise ConfigError(f"patch extent must be odd and positive, got {patch}")
    if patch > 2 * min(cube.height, cube.width) - 1:
        raise ConfigError(
            f"patch {patch} exceeds mirror-padding limit for a "
            f"{cube.height}x{cube.width} scene")
    half = patch // 2
    padded = np.pad(cube.values, ((0, 0), (half, half), (half, half)), mode="reflect")
    rows, cols = np.nonzero(cube.gt > 0)
    n = len(rows)
    patches = np.empty((n, 1, cube.bands, patch, patch), dtype=np.float32)
    for i, (r, c) in enumerate(zip(rows, cols)):
        patches[i, 0] = padded[:, r:r + patch, c:c + patch]
    labels = cube.gt[rows, cols].astype(np.int64)
    coords = np.stack([rows, cols], axis=1).astype(np.int64)
    return PatchDataset(patches=patches, labels=labels, coords=coords)


def split(dataset: PatchDataset, spec: SplitSpec) -> PatchDataset:
    """Assign stratified train/val/test tags in place and return the dataset.

    Per class: floor(f_train*n) to train, floor(f_val*n) to val, the rest to
    test, then one test sample is promoted into any empty train/val bucket so
    every class reaches every split.
    """
    labels = dataset.labels
    rng = np.random.default_rng(spec.seed)
    tags = np.full(len(dataset), "", dtype="<U5")
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        if len(idx) < 3:
            raise DataError(f"class {cls} has only {len(idx)} samples; need at least 3")
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(spec.fractions[0] * len(idx))
        n_val = int(spec.fractions[1] * len(idx))
        tags[idx[:n_tr]] = "train"
        tags[idx[n_tr:n_tr + n_val]] = "val"
        tags[idx[n_tr + n_val:]] = "test"
        test_pool = idx[n_tr + n_val:]
        promoted = 0
        if n_tr == 0:
            tags[test_pool[promoted]] = "train"
            promoted += 1
        if n_val == 0:
            tags[test_pool[promoted]] = "val"
            promoted += 1
        if len(test_pool) - promoted < 1:
            raise DataError(f"class {cls} would leave the test split empty")
    dataset.split = tags
    return dataset


def synthesize_cube(num_classes: int, bands: int, height: int, width: int,
                    imbalance_ratio: float = 1.0, noise_std: float = 0.1,
                    seed: int = 0) -> HsiCube:
    """Fully labeled synthetic scene for desk-scale experiments.

    Each class gets a smooth spectral signature (2-4 random-phase sinusoids
    over the band axis). The layout is a capacity-constrained Voronoi
    partition around seeded class centers whose target areas follow a
    geometric series with ratio imbalance_ratio between the most and least
    frequent class. Pixels carry signature + iid Gaussian noise.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if imbalance_ratio < 1.0:
        raise ConfigError(f"imbalance_ratio must be >= 1, got {imbalance_ratio}")
    rng = np.random.default_rng(seed)

    # Smooth per-class signatures.
    t = np.linspace(0.0, 1.0, bands)
    signatures = np.zeros((num_classes, bands))
    for k in range(num_classes):
        for _ in range(rng.integers(2, 5)):
            amp = rng.uniform(0.4, 1.2)
            freq = rng.uniform(0.5, 3.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            signatures[k] += amp * np.sin(2.0 * np.pi * freq * t + phase)

    # Geometric target areas, largest class = imbalance_ratio * smallest.
    r = imbalance_ratio ** (1.0 / (num_classes - 1))
    weights = r ** np.arange(num_classes)
    targets = weights / weights.sum() * (height * width)
    capacities = np.floor(targets).astype(np.int64)
    for i in np.argsort(targets - capacities)[::-1][: height * width - capacities.sum()]:
        capacities[i] += 1
    if (capacities < 1).any():
        raise ConfigError(
            f"area allocation leaves a class empty for {num_classes} classes on "
            f"{height}x{width}; lower imbalance_ratio or enlarge the scene")

    centers = np.stack([rng.uniform(0, height, num_classes),
                        rng.uniform(0, width, num_classes)], axis=1)
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    pix = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    dists = ((pix[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    # Nearest-center assignment with capacities: closest claims first.
    order = np.argsort(dists.min(axis=1), kind="stable")
    remaining = capacities.copy()
    assign = np.zeros(height * width, dtype=np.int64)
    for p in order:
        for k in np.argsort(dists[p], kind="stable"):
            if remaining[k] > 0:
                assign[p] = k + 1
                remaining[k] -= 1
                break
    gt = assign.reshape(height, width)

    values = signatures[gt.ravel() - 1].T.reshape(bands, height, width).astype(np.float64)
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=values.shape)
    return HsiCube(values=values.astype(np.float32), gt=gt, classes=num_classes)


def band_subsample(cube: HsiCube, stride: int) -> HsiCube:
    """Keep bands 0, stride, 2*stride, ...; wavelengths follow in lockstep."""
    if stride < 1:
        raise ConfigError(f"band stride must be >= 1, got {stride}")
    wl = cube.wavelengths[::stride] if cube.wavelengths is not None else None
    return HsiCube(values=cube.values[::stride].copy(), gt=cube.gt,
                   classes=cube.classes, wavelengths=wl)
