"""Trainable low-level and frozen high-level image encoders."""

import numpy as np
import pytest

from mb2l import images as im
from mb2l.errors import DataFormatError, InvalidParameterError
from mb2l.gradcheck import check_gradients

rng = np.random.default_rng(55)


def img(h=8, w=8, c=3, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(h, w, c))


LOW_CFG = im.ImageEncoderConfig(kind="shallow_trainable", depth=2, width=4, out_dim=6, seed=0)
HIGH_CFG = im.ImageEncoderConfig(kind="frozen_high", depth=3, width=4, out_dim=6, seed=0)


class TestConfig:
    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            im.ImageEncoderConfig(kind="resnet152")
        with pytest.raises(InvalidParameterError):
            im.ImageEncoderConfig(kind="shallow_trainable", depth=0)
        with pytest.raises(InvalidParameterError):
            im.ImageEncoderConfig(kind="shallow_trainable", in_channels=2)

    def test_wrong_kind_routing(self):
        with pytest.raises(InvalidParameterError):
            im.encode_image_low(img(), HIGH_CFG)
        with pytest.raises(InvalidParameterError):
            im.encode_image_high(img(), LOW_CFG)
        with pytest.raises(InvalidParameterError):
            im.ShallowResidualEncoder(HIGH_CFG)
        with pytest.raises(InvalidParameterError):
            im.FrozenRandomEncoder(LOW_CFG)


class TestShallowEncoder:
    def test_out_dim_for_any_input_size(self):
        for size in (8, 16):
            out = im.encode_image_low(img(size, size), LOW_CFG)
            assert out.shape == (6,)

    def test_zero_image_bias_free_gives_zero(self):
        cfg = im.ImageEncoderConfig(kind="shallow_trainable", depth=2, width=4, out_dim=6, bias=False)
        out = im.encode_image_low(np.zeros((8, 8, 3)), cfg)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_seeded_repeatability(self):
        x = img(8, 8, seed=2)
        a = im.encode_image_low(x, LOW_CFG)
        b = im.encode_image_low(x, LOW_CFG)
        np.testing.assert_array_equal(a.data, b.data)

    def test_batch_matches_single(self):
        enc = im.ShallowResidualEncoder(LOW_CFG, dtype=np.float64)
        batch = rng.uniform(0.0, 1.0, size=(3, 8, 8, 3))
        out = enc(batch)
        assert out.shape == (3, 6)
        single = enc(batch[1])
        np.testing.assert_allclose(single.data, out.data[1], atol=1e-12)

    def test_gradients_reach_all_parameters(self):
        enc = im.ShallowResidualEncoder(LOW_CFG, dtype=np.float64)
        x = rng.uniform(0.0, 1.0, size=(2, 8, 8, 3))

        def loss():
            return (enc(x) ** 2).sum()

        errors = check_gradients(loss, enc.parameters())
        for name, err in errors.items():
            assert err < 1e-4, f"{name}: {err:.2e}"


class TestFrozenEncoder:
    def test_deterministic_function_of_seed(self):
        x = img(8, 8, seed=3)
        a = im.encode_image_high(x, HIGH_CFG)
        b = im.encode_image_high(x, HIGH_CFG)
        np.testing.assert_array_equal(a.data, b.data)
        other = im.ImageEncoderConfig(kind="frozen_high", depth=3, width=4, out_dim=6, seed=1)
        c = im.encode_image_high(x, other)
        assert np.any(a.data != c.data)

    def test_single_pixel_sensitivity(self):
        x = img(8, 8, seed=4)
        y = x.copy()
        y[3, 5, 1] = (y[3, 5, 1] + 0.5) % 1.0
        a = im.encode_image_high(x, HIGH_CFG).data
        b = im.encode_image_high(y, HIGH_CFG).data
        assert np.any(a != b)

    def test_no_trainable_parameters_and_no_grads(self):
        enc = im.FrozenRandomEncoder(HIGH_CFG, dtype=np.float64)
        assert enc.parameters() == {}
        from mb2l import autodiff as ad

        x = ad.parameter(rng.uniform(0.0, 1.0, size=(2, 8, 8, 3)))
        (enc(x) ** 2).sum().backward()
        # input feels the encoder; the frozen weights never accumulate
        assert x.grad is not None and np.any(x.grad != 0.0)
        for w, b in enc._convs:
            assert w.grad is None and b.grad is None
        assert enc._head.grad is None

    def test_state_bytes_stable_across_forward(self):
        enc = im.FrozenRandomEncoder(HIGH_CFG)
        before = enc.state_bytes()
        enc(img(8, 8, seed=5).astype(np.float32))
        assert enc.state_bytes() == before

    def test_output_finite(self):
        out = im.encode_image_high(img(16, 16, seed=6), HIGH_CFG)
        assert np.all(np.isfinite(out.data))


class TestPrecomputedFeatures:
    def test_round_trip(self, tmp_path):
        feats = rng.standard_normal((10, 7)).astype(np.float32)
        path = tmp_path / "high.feats"
        im.save_precomputed_features(path, feats, source="unit-test")
        loaded = im.load_precomputed_features(path)
        np.testing.assert_array_equal(loaded, feats)

    def test_metadata_mismatch_rejected(self, tmp_path):
        feats = rng.standard_normal((4, 3)).astype(np.float32)
        path = tmp_path / "bad.feats"
        im.save_precomputed_features(path, feats)
        meta = path.with_suffix(".feats.meta")
        meta.write_text(meta.read_text().replace('"count": 4', '"count": 5'))
        with pytest.raises(DataFormatError):
            im.load_precomputed_features(path)

    def test_missing_sidecar_rejected(self, tmp_path):
        path = tmp_path / "orphan.feats"
        path.write_bytes(b"\x00" * 12)
        with pytest.raises(DataFormatError):
            im.load_precomputed_features(path)
