import json

import numpy as np
import pytest

from hgfnet.data import (HsiCube, SplitSpec, band_subsample, extract_patches,
                         load_cube, normalize_cube, save_cube, split,
                         synthesize_cube)
from hgfnet.errors import ConfigError, DataError, FormatError


def write_cube(tmp_path, values, gt, classes, name="cube.json", wavelengths=None):
    values = np.asarray(values, dtype="<f4")
    gt = np.asarray(gt, dtype="<i4")
    bands, height, width = values.shape
    values.tofile(tmp_path / "cube.f32")
    gt.tofile(tmp_path / "cube.gt.i32")
    header = {"bands": bands, "height": height, "width": width, "dtype": "f32",
              "data_file": "cube.f32", "gt_file": "cube.gt.i32", "classes": classes}
    if wavelengths is not None:
        header["wavelengths"] = wavelengths
    path = tmp_path / name
    path.write_text(json.dumps(header))
    return path


class TestLoadCube:
    def test_byte_arithmetic_case(self, tmp_path, rng):
        # 2 bands x 2 x 2: 32 data bytes, 16 gt bytes
        values = rng.normal(size=(2, 2, 2)).astype(np.float32)
        gt = np.array([[1, 2], [0, 1]])
        path = write_cube(tmp_path, values, gt, classes=2)
        assert (tmp_path / "cube.f32").stat().st_size == 32
        assert (tmp_path / "cube.gt.i32").stat().st_size == 16
        cube = load_cube(path)
        np.testing.assert_array_equal(cube.values, values)
        np.testing.assert_array_equal(cube.gt, gt)

    def test_truncated_data_file(self, tmp_path, rng):
        path = write_cube(tmp_path, rng.normal(size=(2, 2, 2)), np.ones((2, 2)), 1)
        blob = (tmp_path / "cube.f32").read_bytes()
        (tmp_path / "cube.f32").write_bytes(blob[:-4])
        with pytest.raises(FormatError):
            load_cube(path)

    def test_trailing_partial_element(self, tmp_path, rng):
        path = write_cube(tmp_path, rng.normal(size=(2, 2, 2)), np.ones((2, 2)), 1)
        blob = (tmp_path / "cube.f32").read_bytes()
        (tmp_path / "cube.f32").write_bytes(blob + b"\x00\x00")
        with pytest.raises(FormatError):
            load_cube(path)

    def test_class_id_above_declared(self, tmp_path, rng):
        path = write_cube(tmp_path, rng.normal(size=(2, 2, 2)), np.full((2, 2), 7), 3)
        with pytest.raises(FormatError):
            load_cube(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            load_cube(tmp_path / "absent.json")

    def test_save_load_round_trip(self, tmp_path, rng):
        cube = synthesize_cube(3, 5, 6, 7, seed=2)
        path = tmp_path / "scene.json"
        save_cube(cube, path)
        back = load_cube(path)
        assert np.array_equal(back.values, cube.values)
        assert np.array_equal(back.gt, cube.gt)
        assert back.classes == cube.classes


class TestNormalize:
    def test_constant_band_maps_to_zero(self):
        values = np.stack([np.full((3, 3), 5.0), np.arange(9.0).reshape(3, 3)])
        cube = HsiCube(values=values.astype(np.float32), gt=np.ones((3, 3), dtype=np.int64), classes=1)
        out = normalize_cube(cube)
        np.testing.assert_array_equal(out.values[0], 0.0)

    def test_two_value_band(self):
        values = np.array([[[1.0, 3.0]]])
        cube = HsiCube(values=values.astype(np.float32), gt=np.ones((1, 2), dtype=np.int64), classes=1)
        out = normalize_cube(cube)
        np.testing.assert_allclose(out.values[0], [[-1.0, 1.0]], atol=1e-6)

    def test_idempotent(self, rng):
        cube = synthesize_cube(3, 6, 8, 8, noise_std=0.4, seed=3)
        once = normalize_cube(cube)
        twice = normalize_cube(once)
        assert np.abs(once.values - twice.values).max() < 1e-5

    def test_moments(self, rng):
        cube = normalize_cube(synthesize_cube(3, 6, 10, 10, noise_std=0.4, seed=4))
        v = cube.values.astype(np.float64)
        np.testing.assert_allclose(v.mean(axis=(1, 2)), 0.0, atol=1e-6)
        np.testing.assert_allclose(v.std(axis=(1, 2)), 1.0, atol=1e-5)


def reflect_index(i, n):
    """Mirror reflection without edge repetition, period 2(n-1)."""
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


class TestExtractPatches:
    def test_fully_labeled_count(self, rng):
        cube = HsiCube(values=rng.normal(size=(3, 5, 5)).astype(np.float32),
                       gt=np.ones((5, 5), dtype=np.int64), classes=1)
        ds = extract_patches(cube, 3)
        assert len(ds) == 25
        assert ds.patches.shape == (25, 1, 3, 3, 3)

    def test_unlabeled_scene_is_empty(self, rng):
        cube = HsiCube(values=rng.normal(size=(2, 4, 4)).astype(np.float32),
                       gt=np.zeros((4, 4), dtype=np.int64), classes=1)
        assert len(extract_patches(cube, 3)) == 0

    def test_corner_patch_matches_hand_reflection(self, rng):
        cube = HsiCube(values=rng.normal(size=(2, 5, 6)).astype(np.float32),
                       gt=np.ones((5, 6), dtype=np.int64), classes=1)
        patch = 5
        ds = extract_patches(cube, patch)
        corner = np.nonzero((ds.coords == [0, 0]).all(axis=1))[0][0]
        got = ds.patches[corner, 0]
        half = patch // 2
        expected = np.empty_like(got)
        for rr in range(patch):
            for cc in range(patch):
                r = reflect_index(rr - half, 5)
                c = reflect_index(cc - half, 6)
                expected[:, rr, cc] = cube.values[:, r, c]
        np.testing.assert_array_equal(got, expected)

    def test_center_value_equals_cube(self, rng):
        cube = synthesize_cube(3, 4, 7, 7, seed=5)
        ds = extract_patches(cube, 3)
        half = 1
        for i in range(len(ds)):
            r, c = ds.coords[i]
            np.testing.assert_array_equal(ds.patches[i, 0, :, half, half], cube.values[:, r, c])
            assert ds.labels[i] == cube.gt[r, c]

    def test_even_patch_rejected(self, rng):
        cube = synthesize_cube(2, 3, 6, 6, seed=0)
        with pytest.raises(ConfigError):
            extract_patches(cube, 4)

    def test_patch_too_large_for_mirror(self, rng):
        cube = synthesize_cube(2, 3, 4, 4, seed=0)
        with pytest.raises(ConfigError):
            extract_patches(cube, 9)


class TestSplit:
    def make_ds(self, counts, seed=0):
        labels = np.concatenate([np.full(n, k + 1) for k, n in enumerate(counts)])
        n = len(labels)
        return type("DS", (), {})() or None

    def split_counts(self, class_size, seed=0):
        cube_labels = np.full(class_size, 1, dtype=np.int64)
        from hgfnet.data import PatchDataset
        ds = PatchDataset(
            patches=np.zeros((class_size, 1, 2, 1, 1), dtype=np.float32),
            labels=cube_labels,
            coords=np.zeros((class_size, 2), dtype=np.int64),
        )
        # need 2 classes minimum to be realistic; add a second balanced class
        ds2 = PatchDataset(
            patches=np.zeros((2 * class_size, 1, 2, 1, 1), dtype=np.float32),
            labels=np.concatenate([cube_labels, np.full(class_size, 2)]),
            coords=np.zeros((2 * class_size, 2), dtype=np.int64),
        )
        out = split(ds2, SplitSpec(seed=seed))
        tags = out.split[:class_size]
        return {t: int((tags == t).sum()) for t in ("train", "val", "test")}

    def test_exact_quarters(self):
        counts = self.split_counts(40)
        assert counts == {"train": 10, "val": 10, "test": 20}

    def test_floor_rule(self):
        counts = self.split_counts(10)
        assert counts == {"train": 2, "val": 2, "test": 6}

    def test_promotion_rule(self):
        counts = self.split_counts(3)
        assert counts == {"train": 1, "val": 1, "test": 1}

    def test_small_class_rejected(self):
        from hgfnet.data import PatchDataset
        ds = PatchDataset(
            patches=np.zeros((5, 1, 2, 1, 1), dtype=np.float32),
            labels=np.array([1, 1, 1, 2, 2]),
            coords=np.zeros((5, 2), dtype=np.int64),
        )
        with pytest.raises(DataError):
            split(ds, SplitSpec(seed=0))

    def test_partition_and_fraction_bounds(self, rng):
        cube = synthesize_cube(4, 3, 24, 24, imbalance_ratio=4.0, seed=9)
        ds = split(extract_patches(cube, 3), SplitSpec(seed=9))
        assert set(ds.split.tolist()) == {"train", "val", "test"}
        for cls in range(1, 5):
            mask = ds.labels == cls
            n = mask.sum()
            frac = (ds.split[mask] == "train").sum() / n
            assert 0.25 - 1.0 / n <= frac <= 0.25 + 1.0 / n

    def test_deterministic(self):
        cube = synthesize_cube(3, 3, 12, 12, seed=4)
        a = split(extract_patches(cube, 3), SplitSpec(seed=5)).split.copy()
        b = split(extract_patches(cube, 3), SplitSpec(seed=5)).split.copy()
        assert np.array_equal(a, b)

    def test_fractions_validated(self):
        with pytest.raises(ConfigError):
            SplitSpec(fractions=(0.5, 0.5, 0.5))


class TestSynthesize:
    def test_balanced_areas(self):
        cube = synthesize_cube(4, 6, 20, 20, imbalance_ratio=1.0, seed=1)
        counts = np.bincount(cube.gt.ravel())[1:]
        assert counts.sum() == 400
        assert counts.max() <= 1.1 * counts.min()

    def test_imbalance_ratio_between_extremes(self):
        cube = synthesize_cube(5, 4, 40, 40, imbalance_ratio=50.0, seed=2)
        counts = np.bincount(cube.gt.ravel(), minlength=6)[1:]
        assert (counts >= 1).all()
        ratio = counts.max() / counts.min()
        assert 25.0 <= ratio <= 75.0  # rounding tolerance around 50

    def test_noiseless_classes_are_constant(self):
        cube = synthesize_cube(3, 7, 10, 10, noise_std=0.0, seed=3)
        for cls in range(1, 4):
            rows, cols = np.nonzero(cube.gt == cls)
            spectra = cube.values[:, rows, cols]
            assert np.abs(spectra - spectra[:, :1]).max() == 0.0

    def test_seed_determinism(self):
        a = synthesize_cube(3, 5, 9, 9, noise_std=0.2, seed=8)
        b = synthesize_cube(3, 5, 9, 9, noise_std=0.2, seed=8)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.gt, b.gt)

    def test_nearest_signature_oracle_perfect(self):
        cube = synthesize_cube(4, 10, 16, 16, imbalance_ratio=1.0, noise_std=0.0, seed=6)
        classes = np.unique(cube.gt)
        signatures = np.stack([
            cube.values[:, cube.gt == cls][:, 0] for cls in classes
        ])
        flat = cube.values.reshape(cube.bands, -1).T
        d = ((flat[:, None, :] - signatures[None, :, :]) ** 2).sum(axis=2)
        pred = classes[d.argmin(axis=1)].reshape(cube.gt.shape)
        assert (pred == cube.gt).mean() == 1.0

    def test_impossible_allocation(self):
        with pytest.raises(ConfigError):
            synthesize_cube(10, 4, 3, 3, imbalance_ratio=1000.0, seed=0)


class TestBandSubsample:
    def test_stride_one_identity(self):
        cube = synthesize_cube(2, 6, 5, 5, seed=0)
        out = band_subsample(cube, 1)
        assert np.array_equal(out.values, cube.values)

    def test_count(self):
        cube = synthesize_cube(2, 20, 5, 5, seed=0)
        assert band_subsample(cube, 4).bands == 5

    def test_wavelengths_in_lockstep(self, tmp_path, rng):
        path = write_cube(tmp_path, rng.normal(size=(6, 2, 2)), np.ones((2, 2)), 1,
                          wavelengths=[400.0, 410, 420, 430, 440, 450])
        cube = load_cube(path)
        out = band_subsample(cube, 2)
        assert out.wavelengths == [400.0, 420.0, 440.0]
        np.testing.assert_array_equal(out.values, cube.values[::2])

    def test_invalid_stride(self):
        cube = synthesize_cube(2, 6, 5, 5, seed=0)
        with pytest.raises(ConfigError):
            band_subsample(cube, 0)
