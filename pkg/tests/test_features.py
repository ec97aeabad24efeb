"""FTNS round-trips, patch pooling, bilinear upsampling, mask alignment."""
import numpy as np
import pytest

from hypanom import features as ft
from hypanom.errors import ManifestError, ParameterError, TensorFormatError


class TestFtnsRoundTrip:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint8])
    def test_bit_exact(self, tmp_path, dtype):
        rng = np.random.default_rng(0)
        arr = (rng.uniform(0, 100, size=(2, 3)) if dtype != np.uint8 else rng.integers(0, 255, (2, 3))).astype(dtype)
        p = tmp_path / "t.ftns"
        ft.write_tensor(arr, p)
        back = ft.read_tensor(p)
        assert back.dtype == arr.dtype
        assert back.tobytes() == arr.tobytes()

    def test_roundtrip_preserves_file_bytes(self, tmp_path):
        arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        p1, p2 = tmp_path / "a.ftns", tmp_path / "b.ftns"
        ft.write_tensor(arr, p1)
        ft.write_tensor(ft.read_tensor(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ftns"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(TensorFormatError, match="magic"):
            ft.read_tensor(p)

    def test_truncated_payload_fails_fast(self, tmp_path):
        import struct
        # header claims a ~4 GiB f32 tensor but the file carries 8 bytes
        header = ft.FTNS_MAGIC + struct.pack("<I", 1) + struct.pack("<BB", 1, 2)
        header += struct.pack("<QQ", 1 << 15, 1 << 15)
        p = tmp_path / "huge.ftns"
        p.write_bytes(header + b"\x00" * 8)
        with pytest.raises(TensorFormatError, match="size mismatch"):
            ft.read_tensor(p)

    def test_unknown_dtype_code(self, tmp_path):
        import struct
        header = ft.FTNS_MAGIC + struct.pack("<I", 1) + struct.pack("<BB", 9, 1) + struct.pack("<Q", 1)
        p = tmp_path / "odd.ftns"
        p.write_bytes(header + b"\x00" * 4)
        with pytest.raises(TensorFormatError, match="dtype"):
            ft.read_tensor(p)


class TestPatchify:
    def test_identity_for_p1(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(4, 5, 2))
        np.testing.assert_array_equal(ft.patchify(x, 1), x)

    def test_constant_input(self):
        x = np.full((6, 6, 3), 0.37)
        np.testing.assert_allclose(ft.patchify(x, 3), x, atol=1e-12)

    def test_interior_matches_brute_force(self):
        # 5x5 ramp, p=3: interior output = mean over the 3x3 window
        x = (np.arange(25, dtype=np.float64).reshape(5, 5))[:, :, None]
        out = ft.patchify(x, 3)
        for i in range(1, 4):
            for j in range(1, 4):
                ref = x[i - 1 : i + 2, j - 1 : j + 2, 0].sum() / 9.0
                assert out[i, j, 0] == pytest.approx(ref, abs=1e-10)

    def test_even_patch_brute_force(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(6, 6, 1))
        out = ft.patchify(x, 2)
        # window spans [i, i+1] x [j, j+1] with (p-1)//2 = 0 before, p//2 = 1 after
        for i in range(5):
            for j in range(5):
                ref = x[i : i + 2, j : j + 2, 0].mean()
                assert out[i, j, 0] == pytest.approx(ref, abs=1e-12)

    def test_interior_mean_preserved(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(10, 10, 1))
        out = ft.patchify(x, 3)
        brute = np.zeros_like(out)
        for i in range(1, 9):
            for j in range(1, 9):
                brute[i, j, 0] = x[i - 1 : i + 2, j - 1 : j + 2, 0].mean()
        np.testing.assert_allclose(out[1:9, 1:9], brute[1:9, 1:9], atol=1e-10)

    def test_patch_too_large(self):
        with pytest.raises(ParameterError):
            ft.patchify(np.zeros((3, 3, 1)), 4)


class TestUpsample:
    def test_identity_size(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(size=(3, 4, 2))
        np.testing.assert_array_equal(ft.upsample_bilinear(x, (3, 4)), x)

    def test_constant_exact(self):
        x = np.full((2, 2, 1), 0.613)
        out = ft.upsample_bilinear(x, (7, 5))
        np.testing.assert_array_equal(out, np.full((7, 5, 1), 0.613))

    def test_2x2_to_4x4_hand_weights(self):
        # align-corners-false: output sample centers at src coords -0.25, 0.25, 0.75, 1.25
        x = np.array([[0.0, 1.0], [2.0, 3.0]])[:, :, None]
        out = ft.upsample_bilinear(x, (4, 4))[:, :, 0]
        # hand interpolation: clamped edges replicate, interior mixes 25/75
        expected = np.array(
            [
                [0.0, 0.25, 0.75, 1.0],
                [0.5, 0.75, 1.25, 1.5],
                [1.5, 1.75, 2.25, 2.5],
                [2.0, 2.25, 2.75, 3.0],
            ]
        )
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        x, y = rng.uniform(size=(3, 3, 2)), rng.uniform(size=(3, 3, 2))
        a, b = 1.7, -0.4
        lhs = ft.upsample_bilinear(a * x + b * y, (7, 9))
        rhs = a * ft.upsample_bilinear(x, (7, 9)) + b * ft.upsample_bilinear(y, (7, 9))
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_downscale_rejected(self):
        with pytest.raises(ParameterError):
            ft.upsample_bilinear(np.zeros((4, 4, 1)), (2, 4))


class TestAlignMask:
    def test_all_zero(self):
        out = ft.align_mask(np.zeros((8, 8)), (4, 4))
        np.testing.assert_array_equal(out, np.zeros((4, 4), dtype=np.uint8))

    def test_all_one(self):
        out = ft.align_mask(np.ones((8, 8)), (3, 3))
        np.testing.assert_array_equal(out, np.ones((3, 3), dtype=np.uint8))

    def test_single_quadrant(self):
        mask = np.zeros((4, 4))
        mask[:2, :2] = 1
        out = ft.align_mask(mask, (2, 2))
        np.testing.assert_array_equal(out, [[1, 0], [0, 0]])

    def test_majority_rule_faction(self):
        # footprint of each 2x2 target cell covers 2x2 source pixels; 2/4 -> 1, 1/4 -> 0
        mask = np.array([[1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0]])
        out = ft.align_mask(mask, (2, 2))
        np.testing.assert_array_equal(out, [[1, 0], [0, 0]])

    def test_fractional_footprint(self):
        mask = np.ones((3, 3))
        mask[:, 2] = 0  # right third empty
        out = ft.align_mask(mask, (2, 2))
        # right cells cover x in [1.5, 3): anomalous overlap 0.5 of 1.5 -> 1/3 < 0.5
        np.testing.assert_array_equal(out, [[1, 0], [1, 0]])

    def test_upscale_rejected(self):
        with pytest.raises(ParameterError):
            ft.align_mask(np.zeros((2, 2)), (4, 4))


class TestManifest:
    def test_missing_file_rejected(self, tmp_path):
        (tmp_path / "m.json").write_text('{"splits": {"train": [{"features": {"l2": "nope.ftns"}}]}}')
        with pytest.raises(ManifestError, match="missing feature file"):
            ft.load_manifest(tmp_path / "m.json")

    def test_roundtrip(self, tmp_path):
        ft.write_tensor(np.zeros((2, 2, 3), dtype=np.float32), tmp_path / "f.ftns")
        ft.write_manifest(
            tmp_path / "m.json",
            {"train": [{"features": {"l2": "f.ftns"}, "label": 1, "id": "r0"}]},
        )
        m = ft.load_manifest(tmp_path / "m.json")
        assert len(m.split("train")) == 1
        rec = m.split("train")[0]
        assert rec.label == 1 and rec.identity() == "r0"

    def test_bad_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{nope")
        with pytest.raises(ManifestError, match="invalid JSON"):
            ft.load_manifest(tmp_path / "m.json")


class TestLoadAligned:
    def test_two_levels_shared_resolution(self, tmp_path):
        rng = np.random.default_rng(6)
        ft.write_tensor(rng.uniform(size=(8, 8, 4)).astype(np.float32), tmp_path / "l2.ftns")
        ft.write_tensor(rng.uniform(size=(4, 4, 6)).astype(np.float32), tmp_path / "l3.ftns")
        from hypanom.pngio import write_mask
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[:8, :8] = 1
        write_mask(mask, tmp_path / "mask.png")
        ft.write_manifest(
            tmp_path / "m.json",
            {"train": [{"features": {"layer_2": "l2.ftns", "layer_3": "l3.ftns"}, "mask": "mask.png", "label": 1}]},
        )
        m = ft.load_manifest(tmp_path / "m.json")
        feats, labels, shape = ft.load_aligned(m.split("train")[0], ["layer_2", "layer_3"], patch=3)
        assert shape == (8, 8)
        assert feats["layer_2"].shape == (64, 4)
        assert feats["layer_3"].shape == (64, 6)
        assert labels.shape == (64,)
        assert labels.sum() == 16  # one quadrant
