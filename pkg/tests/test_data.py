import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spatialhead.data import (
    AugmentConfig,
    Dataset,
    augment,
    batches,
    caffe_preprocess,
    hflip,
    load_dataset,
    quadrant_cells,
    resize_bilinear,
    rotate,
    synth_position_dataset,
    vflip,
    write_dataset,
)
from spatialhead.errors import ConfigError, DataError, ShapeError
from spatialhead.pnm import decode_pnm, encode_pnm, read_image, write_image

SQUARE = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
images = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3])),
                elements=st.floats(0, 255))


class TestGeometry:
    def test_hflip(self):
        assert hflip(SQUARE)[:, :, 0].tolist() == [[2, 1], [4, 3]]

    def test_vflip(self):
        assert vflip(SQUARE)[:, :, 0].tolist() == [[3, 4], [1, 2]]

    def test_rotate_180(self):
        np.testing.assert_allclose(rotate(SQUARE, 180.0)[:, :, 0], [[4, 3], [2, 1]], atol=1e-12)

    def test_rotate_90_is_counter_clockwise(self):
        np.testing.assert_allclose(rotate(SQUARE, 90.0)[:, :, 0], [[2, 4], [1, 3]], atol=1e-12)

    def test_rotate_360(self, rng):
        img = rng.uniform(0, 255, size=(5, 6, 3))
        np.testing.assert_allclose(rotate(img, 360.0), img, atol=1e-9)

    @given(images)
    def test_flips_are_involutions(self, img):
        np.testing.assert_array_equal(hflip(hflip(img)), img)
        np.testing.assert_array_equal(vflip(vflip(img)), img)

    def test_resize(self, rng):
        img = rng.uniform(0, 255, size=(150, 150, 3))
        out = resize_bilinear(img, 224)
        assert out.shape == (224, 224, 3)
        assert out.min() >= img.min() - 1e-9 and out.max() <= img.max() + 1e-9
        np.testing.assert_allclose(resize_bilinear(np.full((3, 5, 1), 7.0), 8), 7.0)


class TestCaffe:
    def test_mean_pixel(self):
        np.testing.assert_allclose(caffe_preprocess(np.array([[[123.68, 116.779, 103.939]]])), 0.0, atol=1e-12)

    def test_black(self):
        np.testing.assert_allclose(caffe_preprocess(np.zeros((1, 1, 3)))[0, 0], [-103.939, -116.779, -123.68])

    def test_not_idempotent(self, rng):
        img = rng.uniform(0, 255, size=(2, 2, 3))
        assert not np.allclose(caffe_preprocess(caffe_preprocess(img)), caffe_preprocess(img))

    @given(arrays(np.float64, (2, 3, 3), elements=st.floats(0, 255)),
           arrays(np.float64, (2, 3, 3), elements=st.floats(0, 255)))
    def test_linear(self, a, b):
        np.testing.assert_allclose(caffe_preprocess(a) - caffe_preprocess(b), (a - b)[..., ::-1], atol=1e-9)

    def test_channel_count(self):
        with pytest.raises(ShapeError):
            caffe_preprocess(np.zeros((2, 2, 1)))


class TestAugment:
    @given(images)
    def test_disabled_is_identity(self, img):
        out = augment(img, AugmentConfig.disabled(), np.random.default_rng(0))
        np.testing.assert_array_equal(out, img)

    def test_disabled_draws_nothing(self):
        r = np.random.default_rng(5)
        augment(np.zeros((3, 3, 3)), AugmentConfig.disabled(), r)
        assert r.random() == np.random.default_rng(5).random()

    def test_seeded(self, rng):
        img = rng.uniform(0, 255, size=(8, 8, 3))
        cfg = AugmentConfig()
        a = augment(img, cfg, np.random.default_rng([3, 0, 1]))
        b = augment(img, cfg, np.random.default_rng([3, 0, 1]))
        np.testing.assert_array_equal(a, b)
        assert a.shape == img.shape

    def test_brightness_range(self, rng):
        img = np.full((4, 4, 3), 100.0)
        cfg = AugmentConfig(False, False, 0, 0, 0, 0, 0, (0.0, 1.2), "none")
        vals = [augment(img, cfg, np.random.default_rng(i))[0, 0, 0] for i in range(200)]
        assert 0.0 <= min(vals) and max(vals) <= 120.0 and max(vals) > 100.0

    def test_channel_shift_per_channel(self):
        cfg = AugmentConfig(False, False, 0, 0, 0, 0, 50.0, None, "none")
        out = augment(np.zeros((2, 2, 3)), cfg, np.random.default_rng(1))
        shifts = out[0, 0]
        assert np.all(np.abs(shifts) <= 50.0) and len(set(shifts.tolist())) == 3
        np.testing.assert_array_equal(out, np.broadcast_to(shifts, out.shape))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AugmentConfig(zoom_frac=1.5)
        with pytest.raises(ConfigError):
            AugmentConfig(brightness_range=(1.0, 0.5))
        with pytest.raises(ConfigError):
            AugmentConfig(preprocess="torch")


class TestSynth:
    def test_per_cell(self):
        ds = synth_position_dataset(7, "per_cell", 2, 0.0, np.random.default_rng(0))
        assert ds.num_classes == 49 and len(ds) == 98
        gaps = {float(img.mean()) for img, _ in ds.samples}
        assert gaps == {1 / 49}

    def test_quadrant(self):
        ds = synth_position_dataset(7, "quadrant", 3, 0.0, np.random.default_rng(0))
        assert ds.num_classes == 4
        for img, label in ds.samples:
            r, c = np.argwhere(img[:, :, 0] == 1.0)[0]
            assert (r, c) in quadrant_cells(7, label)

    def test_quadrant_cells_skip_middle(self):
        cells = [cell for q in range(4) for cell in quadrant_cells(7, q)]
        assert len(cells) == 36 and all(3 not in cell for cell in cells)
        assert len(quadrant_cells(8, 0)) == 16

    @settings(max_examples=20)
    @given(st.integers(2, 9), st.integers(0, 1000))
    def test_noiseless_mean(self, grid, seed):
        ds = synth_position_dataset(grid, "per_cell", 1, 0.0, np.random.default_rng(seed))
        assert all(img.mean() == 1.0 / grid ** 2 for img, _ in ds.samples)

    def test_channels(self):
        ds = synth_position_dataset(4, "quadrant", 1, 0.0, np.random.default_rng(0), channels=3)
        assert ds.samples[0][0].shape == (4, 4, 3)

    def test_errors(self):
        with pytest.raises(ConfigError):
            synth_position_dataset(1, "per_cell", 1, 0.0, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            synth_position_dataset(4, "diagonal", 1, 0.0, np.random.default_rng(0))


def toy(n, k=2):
    return Dataset([(np.full((2, 2, 1), float(i)), i % k) for i in range(n)], [f"c{j}" for j in range(k)])


class TestBatches:
    def test_sizes(self):
        assert [len(y) for _, y in batches(toy(6), 4, 0)] == [4, 2]

    def test_seeded_order(self):
        a = [x.data[:, 0, 0, 0].tolist() for x, _ in batches(toy(10), 3, 9, epoch=2)]
        b = [x.data[:, 0, 0, 0].tolist() for x, _ in batches(toy(10), 3, 9, epoch=2)]
        c = [x.data[:, 0, 0, 0].tolist() for x, _ in batches(toy(10), 3, 9, epoch=3)]
        assert a == b and a != c

    @given(st.integers(1, 150), st.integers(1, 80), st.integers(0, 50))
    def test_covers_each_sample_once(self, n, bs, epoch):
        seen = np.concatenate([x.data[:, 0, 0, 0] for x, _ in batches(toy(n), bs, 1, epoch, precision="float64")])
        assert sorted(seen.tolist()) == list(range(n))

    def test_batch_70(self):
        assert [len(y) for _, y in batches(toy(150), 70, 0)] == [70, 70, 10]

    def test_bad_size(self):
        with pytest.raises(ConfigError):
            list(batches(toy(3), 0, 0))

    def test_labels_validated(self):
        with pytest.raises(DataError):
            Dataset([(np.zeros((1, 1, 1)), 2)], ["a", "b"])


class TestPnm:
    def test_roundtrip(self, rng):
        for c in (1, 3):
            img = rng.integers(0, 256, size=(4, 5, c)).astype(np.float64)
            np.testing.assert_array_equal(decode_pnm(encode_pnm(img)), img)

    def test_ascii_and_16_bit(self):
        assert decode_pnm(b"P2\n# c\n2 1\n255\n0 7\n").reshape(-1).tolist() == [0, 7]
        buf = b"P5\n1 1\n65535\n" + (1000).to_bytes(2, "big")
        assert decode_pnm(buf).item() == 1000

    def test_bad_file(self, tmp_path):
        p = tmp_path / "x.ppm"
        p.write_bytes(b"P9 nope")
        with pytest.raises(DataError, match="x.ppm"):
            read_image(p)


class TestLoadDataset:
    def make(self, root, counts, side=6):
        r = np.random.default_rng(0)
        for name, n in counts.items():
            d = root / name
            d.mkdir(parents=True)
            for i in range(n):
                write_image(d / f"{i}.ppm", r.integers(0, 256, size=(side, side + 2, 3)))

    def test_counts_and_order(self, tmp_path):
        self.make(tmp_path, {"zebra": 3, "apple": 3})
        ds = load_dataset(tmp_path, 4)
        assert len(ds) == 6 and ds.class_names == ["apple", "zebra"]
        assert ds.samples[0][0].shape == (4, 4, 3)
        assert ds.labels.tolist() == [0, 0, 0, 1, 1, 1]

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope", 4)

    def test_empty_class(self, tmp_path):
        self.make(tmp_path, {"a": 1})
        (tmp_path / "b").mkdir()
        with pytest.raises(DataError):
            load_dataset(tmp_path, 4)

    def test_undecodable_named(self, tmp_path):
        self.make(tmp_path, {"a": 1})
        (tmp_path / "a" / "broken.ppm").write_bytes(b"garbage")
        with pytest.raises(DataError, match="broken.ppm"):
            load_dataset(tmp_path, 4)

    def test_synth_roundtrip(self, tmp_path):
        ds = synth_position_dataset(5, "quadrant", 2, 0.0, np.random.default_rng(0))
        write_dataset(ds, tmp_path)
        back = load_dataset(tmp_path, 5, rescale=1 / 255)
        assert back.class_names == ds.class_names
        for (a, la), (b, lb) in zip(ds.samples, back.samples):
            assert la == lb
            np.testing.assert_allclose(a, b, atol=1e-12)
