import numpy as np
import pytest

from xai_probe.data import (
    DatasetConfig,
    accuracy,
    generate_dataset,
    generate_image,
    load_dataset,
    save_dataset,
    train,
)
from xai_probe.errors import ConfigError
from xai_probe.net import build_network
from xai_probe.ppm import read_ppm, write_ppm

SMALL = DatasetConfig(num_classes=4, images_per_class=2, height=32, width=32, seed=5)


class TestGeneration:
    def test_same_seed_identical(self):
        a = generate_dataset(SMALL)
        b = generate_dataset(SMALL)
        for (ia, la), (ib, lb) in zip(a, b):
            np.testing.assert_array_equal(ia, ib)
            assert la == lb

    def test_counts(self):
        ds = generate_dataset(DatasetConfig(images_per_class=25, seed=0))
        assert len(ds) == 100
        labels = [label for _, label in ds]
        assert labels.count(0) == labels.count(3) == 25

    def test_pixel_range_and_grid(self):
        for img, _ in generate_dataset(SMALL):
            assert img.min() >= 0.0 and img.max() <= 1.0
            # values snapped to the 8-bit grid for lossless PPM round-trips
            np.testing.assert_array_equal(img, np.round(img * 255) / 255)

    def test_too_small_rejected(self):
        with pytest.raises(ConfigError):
            generate_dataset(DatasetConfig(height=16, width=16, seed=0))

    def test_bad_num_classes_rejected(self):
        with pytest.raises(ConfigError):
            generate_dataset(DatasetConfig(num_classes=9, seed=0))

    def test_images_differ_across_indices(self):
        a = generate_image(SMALL, 0, 0)
        b = generate_image(SMALL, 1, 0)
        assert not np.array_equal(a, b)


class TestPpmRoundTrip:
    def test_lossless(self, tmp_path):
        img = generate_image(SMALL, 3, 2)
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        np.testing.assert_array_equal(read_ppm(path), img)

    def test_save_load_dataset(self, tmp_path):
        ds = generate_dataset(SMALL)
        save_dataset(ds, SMALL, tmp_path / "data")
        loaded, doc = load_dataset(tmp_path / "data")
        assert len(loaded) == len(ds)
        assert doc["config"]["seed"] == 5
        for (ia, la), (ib, lb) in zip(ds, loaded):
            np.testing.assert_array_equal(ia, ib)
            assert la == lb

    def test_same_seed_identical_bytes(self, tmp_path):
        save_dataset(generate_dataset(SMALL), SMALL, tmp_path / "a")
        save_dataset(generate_dataset(SMALL), SMALL, tmp_path / "b")
        a = (tmp_path / "a" / "img_0000.ppm").read_bytes()
        b = (tmp_path / "b" / "img_0000.ppm").read_bytes()
        assert a == b


TINY_ARCH = [
    {"kind": "Flatten"},
    {"kind": "Dense", "out_features": 16},
    {"kind": "ReLU"},
    {"kind": "Dense", "out_features": 4},
]


class TestTraining:
    def test_memorizes_single_sample(self):
        cfg = DatasetConfig(images_per_class=1, height=24, width=24, seed=9)
        ds = generate_dataset(cfg)[:1]
        net = build_network(TINY_ARCH, (3, 24, 24), 4, 0)
        train(net, ds, epochs=50, lr=0.05, seed=1)
        assert accuracy(net, ds) == 1.0

    def test_same_seed_identical_weights(self):
        cfg = DatasetConfig(images_per_class=2, height=24, width=24, seed=9)
        ds = generate_dataset(cfg)
        nets = []
        for _ in range(2):
            net = build_network(TINY_ARCH, (3, 24, 24), 4, 0)
            train(net, ds, epochs=3, lr=0.02, seed=7)
            nets.append(net)
        for la, lb in zip(nets[0].layers, nets[1].layers):
            if hasattr(la, "weight"):
                np.testing.assert_array_equal(la.weight, lb.weight)

    def test_empty_dataset_rejected(self):
        net = build_network(TINY_ARCH, (3, 24, 24), 4, 0)
        with pytest.raises(ConfigError):
            train(net, [], epochs=1, lr=0.01, seed=0)

    def test_report_fields(self):
        cfg = DatasetConfig(images_per_class=2, height=24, width=24, seed=9)
        ds = generate_dataset(cfg)
        net = build_network(TINY_ARCH, (3, 24, 24), 4, 0)
        rep = train(net, ds, epochs=2, lr=0.01, seed=0, holdout=ds)
        assert rep.epochs == 2
        assert len(rep.epoch_losses) == 2
        assert rep.holdout_accuracy is not None
