"""Array containers and on-disk formats: validation and round trips."""

import numpy as np
import pytest

from warpdiff.features import ChannelProjector
from warpdiff.geometry import (FeaturePointCloud, read_ply, read_trajectory,
                               write_ply, write_trajectory)
from warpdiff.images import (FeatureImage, RenderMask, read_fimg, read_png,
                             write_fimg, write_png)
from warpdiff.scenes import Box, SceneSpec, Sphere, read_scene, write_scene
from warpdiff.training import (TinyDenoiser, load_projector, save_projector)

from conftest import make_camera


class TestFeatureImage:
    def test_accepts_3d_and_exposes_dims(self):
        img = FeatureImage(np.zeros((4, 5, 2)))
        assert (img.height, img.width, img.channels) == (4, 5, 2)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            FeatureImage(np.zeros((4, 5)))
        with pytest.raises(ValueError):
            FeatureImage(np.zeros((4, 5, 2, 1)))

    def test_rejects_empty_axis(self):
        with pytest.raises(ValueError):
            FeatureImage(np.zeros((0, 5, 2)))

    def test_rejects_nan_and_neginf_but_allows_posinf(self):
        with pytest.raises(ValueError):
            FeatureImage(np.full((2, 2, 1), np.nan))
        with pytest.raises(ValueError):
            FeatureImage(np.full((2, 2, 1), -np.inf))
        img = FeatureImage(np.full((2, 2, 1), np.inf))
        assert np.isposinf(img.data).all()

    def test_from_planes(self):
        a, b = np.ones((3, 4)), np.full((3, 4), 2.0)
        img = FeatureImage.from_planes(a, b)
        assert img.channels == 2
        assert (img.data[:, :, 0] == 1.0).all() and (img.data[:, :, 1] == 2.0).all()

    def test_casts_to_float64(self):
        img = FeatureImage(np.ones((2, 2, 1), dtype=np.float32))
        assert img.data.dtype == np.float64


class TestRenderMask:
    def test_binary_only(self):
        RenderMask(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(ValueError):
            RenderMask(np.array([[0.5, 1.0], [1.0, 0.0]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            RenderMask(np.zeros((2, 2, 1)))

    def test_zeros_ones_same_shape(self):
        m = RenderMask.ones(3, 4)
        assert m.data.sum() == 12
        assert m.same_shape(FeatureImage.zeros(3, 4, 7))
        assert not m.same_shape(FeatureImage.zeros(4, 3, 1))


class TestFimgFormat:
    def test_round_trip_is_float32_exact(self, tmp_path, rng):
        img = FeatureImage(rng.normal(size=(5, 7, 4)).clip(min=-10))
        path = tmp_path / "x.fimg"
        write_fimg(path, img)
        back = read_fimg(path)
        expected = img.data.astype(np.float32).astype(np.float64)
        assert np.array_equal(back.data, expected)

    def test_round_trip_preserves_posinf(self, tmp_path):
        img = FeatureImage(np.array([[[1.5], [np.inf]]]))
        path = tmp_path / "d.fimg"
        write_fimg(path, img)
        back = read_fimg(path)
        assert np.array_equal(back.data, img.data)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.fimg"
        path.write_bytes(b"JUNKxxxxxxxxxxxxxxxx")
        with pytest.raises(ValueError, match="magic"):
            read_fimg(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "t.fimg"
        write_fimg(path, FeatureImage.zeros(4, 4, 3))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_fimg(path)

    def test_writes_are_byte_deterministic(self, tmp_path, rng):
        img = FeatureImage(rng.uniform(size=(6, 6, 3)))
        write_fimg(tmp_path / "a.fimg", img)
        write_fimg(tmp_path / "b.fimg", img)
        assert (tmp_path / "a.fimg").read_bytes() == (tmp_path / "b.fimg").read_bytes()


class TestPngFormat:
    def test_round_trip_of_quantized_values(self, tmp_path):
        levels = np.arange(256, dtype=np.float64) / 255.0
        img = FeatureImage(np.tile(levels[None, :, None], (2, 1, 3)))
        path = tmp_path / "x.png"
        write_png(path, img)
        back = read_png(path)
        assert np.array_equal(back.data, img.data)

    def test_clamps_out_of_range(self, tmp_path):
        img = FeatureImage(np.array([[[-0.5, 0.5, 1.5]]]))
        path = tmp_path / "c.png"
        write_png(path, img)
        back = read_png(path)
        # 0.5 quantizes to level round(0.5 * 255) = 128.
        assert np.array_equal(back.data[0, 0], [0.0, 128 / 255, 1.0])

    def test_requires_three_channels(self, tmp_path):
        with pytest.raises(ValueError):
            write_png(tmp_path / "x.png", FeatureImage.zeros(2, 2, 1))


class TestSceneFormat:
    def test_round_trip(self, tmp_path):
        spec = SceneSpec(
            seed=7,
            primitives=(Sphere(np.array([0.0, 1.0, 2.0]), 0.5, np.array([0.2, 0.4, 0.6])),
                        Box(np.zeros(3), np.array([1.0, 2.0, 3.0]), np.array([0.9, 0.1, 0.5]))),
            background=np.array([0.1, 0.2, 0.3]))
        path = tmp_path / "scene.json"
        write_scene(path, spec)
        back = read_scene(path)
        assert back.seed == spec.seed
        assert len(back.primitives) == 2
        assert isinstance(back.primitives[0], Sphere)
        assert isinstance(back.primitives[1], Box)
        assert np.array_equal(back.primitives[0].center, spec.primitives[0].center)
        assert back.primitives[0].radius == spec.primitives[0].radius
        assert np.array_equal(back.primitives[1].half_size, spec.primitives[1].half_size)
        assert np.array_equal(back.background, spec.background)

    def test_write_is_byte_deterministic(self, tmp_path):
        spec = SceneSpec(seed=3,
                         primitives=(Sphere(np.ones(3), 1.0, np.full(3, 0.5)),),
                         background=np.zeros(3))
        write_scene(tmp_path / "a.json", spec)
        write_scene(tmp_path / "b.json", spec)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestTrajectoryFormat:
    def test_round_trip(self, tmp_path):
        cams = [make_camera(seed=s) for s in range(3)]
        path = tmp_path / "cams.json"
        write_trajectory(path, cams)
        back = read_trajectory(path)
        assert len(back) == 3
        for a, b in zip(cams, back):
            assert np.array_equal(a.rotation, b.rotation)
            assert np.array_equal(a.translation, b.translation)
            assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == \
                   (b.fx, b.fy, b.cx, b.cy, b.width, b.height)


class TestPlyFormat:
    def test_round_trip(self, tmp_path, rng):
        cloud = FeaturePointCloud(rng.normal(size=(20, 3)), rng.uniform(size=(20, 5)))
        path = tmp_path / "c.ply"
        write_ply(path, cloud)
        back = read_ply(path)
        assert back.size == 20 and back.channels == 5
        assert np.allclose(back.positions, cloud.positions, atol=1e-6)
        assert np.allclose(back.features, cloud.features, atol=1e-6)


class TestCheckpointFormat:
    def test_denoiser_round_trip(self, tmp_path):
        den = TinyDenoiser.seeded(feat_channels=4, hidden=6, seed=11)
        path = tmp_path / "ckpt"
        den.save(path)
        back = TinyDenoiser.load(path)
        assert back.feat_channels == den.feat_channels
        assert len(back.net.layers) == len(den.net.layers)
        # Weights are stored as float32 on disk.
        for a, b in zip(den.net.layers, back.net.layers):
            assert np.array_equal(a.weight.astype(np.float32), b.weight)
            assert np.array_equal(a.bias.astype(np.float32), b.bias)
            assert b.weight.dtype == np.float64

    def test_projector_round_trip(self, tmp_path):
        proj = ChannelProjector.seeded(12, 8, seed=3)
        path = tmp_path / "ckpt.proj"
        save_projector(path, proj)
        back = load_projector(path)
        assert np.array_equal(back.weight, proj.weight.astype(np.float32))
