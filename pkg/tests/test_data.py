"""Synthetic task and PNFM serialization tests."""

import numpy as np
import pytest

from partnet.data import (FeatureMap, Sample, SyntheticTaskSpec, gen_synthetic,
                          ingest_features, read_pnfm, write_pnfm)
from partnet.dpp import peak_histogram
from partnet.errors import ConfigError, FormatError


def small_spec(**overrides):
    base = dict(classes=3, channels=8, width=12, height=12, patch_size=5,
                signal_channels_per_class=2, noise_level=0.5,
                samples_per_class=4, stride=16, seed=7)
    base.update(overrides)
    return SyntheticTaskSpec(**base)


class TestSynthetic:
    def test_noiseless_argmax_is_patch_center(self):
        spec = small_spec(noise_level=0.0)
        for sample in gen_synthetic(spec):
            x0, y0, x1, y1 = sample.patch_box
            center = (x0 + (spec.patch_size - 1) // 2,
                      y0 + (spec.patch_size - 1) // 2)
            h = sample.feature_map.height
            hist = peak_histogram(sample.feature_map.data)
            for ch in spec.signal_channels(sample.label):
                flat = sample.feature_map.data[ch].argmax()
                assert (flat // h, flat % h) == center
            assert hist.counts[center[0] * h + center[1]] >= \
                spec.signal_channels_per_class

    def test_same_seed_identical(self):
        a = gen_synthetic(small_spec())
        b = gen_synthetic(small_spec())
        assert len(a) == len(b)
        for sa, sb in zip(a, b):
            assert sa.label == sb.label and sa.patch_box == sb.patch_box
            assert np.array_equal(sa.feature_map.data, sb.feature_map.data)

    def test_nearest_patch_oracle_is_perfect_on_noiseless(self):
        """Summed signal-channel maxima identify the class without training."""
        spec = small_spec(noise_level=0.0, samples_per_class=6)
        samples = gen_synthetic(spec)
        for sample in samples:
            scores = [
                sum(sample.feature_map.data[ch].max()
                    for ch in spec.signal_channels(label))
                for label in range(spec.classes)
            ]
            assert int(np.argmax(scores)) == sample.label

    def test_counts_and_labels(self):
        spec = small_spec()
        samples = gen_synthetic(spec)
        assert len(samples) == spec.classes * spec.samples_per_class
        for label in range(spec.classes):
            assert sum(s.label == label for s in samples) == spec.samples_per_class

    def test_patch_fits_inside_map(self):
        for sample in gen_synthetic(small_spec()):
            x0, y0, x1, y1 = sample.patch_box
            assert 0 <= x0 <= x1 < sample.feature_map.width
            assert 0 <= y0 <= y1 < sample.feature_map.height

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            small_spec(patch_size=13)
        with pytest.raises(ConfigError):
            small_spec(channels=5)  # 3 classes x 2 signal channels > 5


class TestPnfm:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((4, 6, 5)).astype(np.float32).astype(np.float64)
        sample = Sample(feature_map=FeatureMap(data, stride=8), label=2)
        path = tmp_path / "x.pnfm"
        write_pnfm(sample, path)
        loaded = read_pnfm(path)
        assert loaded.label == 2
        assert loaded.feature_map.stride == 8
        assert np.array_equal(loaded.feature_map.data, data)
        # a second write of the loaded sample is byte-identical
        path2 = tmp_path / "y.pnfm"
        write_pnfm(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file_names_missing_bytes(self, tmp_path):
        sample = Sample(feature_map=FeatureMap(np.zeros((2, 3, 3))), label=0)
        path = tmp_path / "t.pnfm"
        write_pnfm(sample, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(FormatError, match="missing 10 bytes"):
            read_pnfm(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pnfm"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError, match="bad magic"):
            read_pnfm(path)

    def test_bad_version_rejected(self, tmp_path):
        sample = Sample(feature_map=FeatureMap(np.zeros((1, 2, 2))), label=0)
        path = tmp_path / "v.pnfm"
        write_pnfm(sample, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            read_pnfm(path)

    def test_directory_ingest_sorted(self, tmp_path):
        for i, label in enumerate((2, 0, 1)):
            sample = Sample(feature_map=FeatureMap(np.full((1, 2, 2), float(i))),
                            label=label)
            write_pnfm(sample, tmp_path / f"sample_{i:03d}.pnfm")
        loaded = ingest_features(tmp_path)
        assert [s.label for s in loaded] == [2, 0, 1]
        assert loaded[0].feature_map.data[0, 0, 0] == 0.0

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(FormatError, match="no .pnfm"):
            ingest_features(tmp_path)
