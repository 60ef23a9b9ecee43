import numpy as np
import pytest

from gavatar.avatar import deform
from gavatar.dataset import load_dataset
from gavatar.errors import ConfigError, CorruptionError
from gavatar.pipeline import (SynthConfig, make_gt_avatar, make_pose_sequence,
                              make_ring_cameras, render_dataset,
                              training_samples)
from gavatar.render import rasterize


@pytest.fixture(scope="module")
def small_cfg():
    return SynthConfig(seed=3, gaussian_count=30, frame_count=4, view_count=4,
                       image_width=24, image_height=24)


@pytest.fixture(scope="module")
def small_dataset(small_cfg, model24, tmp_path_factory):
    avatar = make_gt_avatar(model24, small_cfg)
    poses = make_pose_sequence(small_cfg)
    cams = make_ring_cameras(small_cfg)
    root = tmp_path_factory.mktemp("ds")
    return render_dataset(avatar, model24, poses, cams, small_cfg, root), avatar


class TestSynthConfig:
    def test_rejects_zero_counts(self):
        with pytest.raises(ConfigError):
            SynthConfig(frame_count=0)

    def test_rejects_extreme_amplitude(self):
        with pytest.raises(ConfigError):
            SynthConfig(pose_amplitude=2.0)


class TestGtAvatar:
    def test_count_and_determinism(self, model24, small_cfg):
        a = make_gt_avatar(model24, small_cfg)
        b = make_gt_avatar(model24, small_cfg)
        assert a.count == 30
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.sh_coeffs, b.sh_coeffs)

    def test_seed_changes_colors(self, model24, small_cfg):
        import dataclasses
        other = dataclasses.replace(small_cfg, seed=4)
        a = make_gt_avatar(model24, small_cfg)
        b = make_gt_avatar(model24, other)
        assert not np.array_equal(a.sh_coeffs, b.sh_coeffs)

    def test_opacity_range(self, model24, small_cfg):
        a = make_gt_avatar(model24, small_cfg)
        op = 1 / (1 + np.exp(-a.opacities))
        assert np.all(op >= 0.6 - 1e-12) and np.all(op <= 0.95 + 1e-12)

    def test_too_many_gaussians(self, model24):
        with pytest.raises(ConfigError):
            make_gt_avatar(model24, SynthConfig(gaussian_count=10_000))


class TestPoseSequence:
    def test_frame_zero_canonical(self, small_cfg):
        fp = make_pose_sequence(small_cfg)[0]
        np.testing.assert_array_equal(fp.theta, 0.0)
        np.testing.assert_array_equal(fp.global_rot, np.eye(3))
        np.testing.assert_array_equal(fp.global_trans, 0.0)

    def test_amplitude_bound(self, small_cfg):
        for fp in make_pose_sequence(small_cfg):
            assert np.max(np.abs(fp.theta)) <= 2 * 0.5 * small_cfg.pose_amplitude + 1e-12

    def test_smooth_deltas(self):
        # Sinusoidal trajectories with per-channel gain <= 0.5: the per-frame
        # step is bounded by the derivative bound amplitude * 2pi / frames
        # (10% slack for discretization).
        cfg = SynthConfig(frame_count=40)
        frames = make_pose_sequence(cfg)
        bound = cfg.pose_amplitude * 2 * np.pi / cfg.frame_count * 1.1
        for a, b in zip(frames, frames[1:]):
            assert np.max(np.abs(b.theta - a.theta)) <= bound
            assert np.linalg.norm(b.global_trans - a.global_trans) < 0.1

    def test_count_and_beta(self, small_cfg):
        frames = make_pose_sequence(small_cfg)
        assert len(frames) == 4
        for fp in frames:
            np.testing.assert_array_equal(fp.beta, 0.0)


class TestRingCameras:
    def test_all_look_at_target(self, small_cfg):
        target = np.array([0.0, -0.1, 0.0])
        for cam in make_ring_cameras(small_cfg):
            z = cam.rotation[2]
            to_target = target - cam.center
            to_target /= np.linalg.norm(to_target)
            np.testing.assert_allclose(z, to_target, atol=1e-12)

    def test_ring_radius(self, small_cfg):
        for cam in make_ring_cameras(small_cfg):
            d = cam.center - [0.0, -0.1 + 0.08 * small_cfg.ring_radius, 0.0]
            assert np.hypot(d[0], d[2]) == pytest.approx(small_cfg.ring_radius)

    def test_target_projects_to_center(self, small_cfg, model24):
        from gavatar.render import project_gaussian
        for cam in make_ring_cameras(small_cfg):
            m2, _, _ = project_gaussian([0.0, -0.1, 0.0], np.eye(3) * 1e-6, cam)
            np.testing.assert_allclose(m2, [12.0, 12.0], atol=1e-9)


class TestDataset:
    def test_file_layout(self, small_dataset):
        ds, _ = small_dataset
        root = ds.root
        assert (root / "manifest.json").exists()
        assert (root / "model.gapm").exists()
        assert (root / "cameras.json").exists()
        assert len(list((root / "frames").glob("*.gafp"))) == 4
        assert len(list((root / "gt").glob("*.ppm"))) == 16
        assert len(list((root / "masks").glob("*.pgm"))) == 16

    def test_splits_disjoint_and_cover(self, small_dataset):
        ds, _ = small_dataset
        assert set(ds.train_views) == {0, 2}
        assert set(ds.test_views) == {1, 3}
        assert not set(ds.train_views) & set(ds.test_views)

    def test_reload_round_trip(self, small_dataset, model24):
        ds, avatar = small_dataset
        ds2 = load_dataset(ds.root)
        assert ds2.frame_count == 4
        for a, b in zip(ds.frames, ds2.frames):
            np.testing.assert_allclose(a.to_vector(), b.to_vector(), atol=1e-6)
        # Stored images are 8-bit quantizations of a fresh render.
        g = deform(avatar, model24, ds2.frames[1])
        out = rasterize(g, ds2.cameras[1])
        stored = ds2.gt_image(1, 1)
        assert np.max(np.abs(stored - out.image)) <= 0.5 / 255 + 1e-9

    def test_frame_zero_bit_exact(self, small_dataset, model24, tmp_path):
        # Frame 0 is the canonical pose; its stored image must byte-equal a
        # direct render of the avatar written through the same 8-bit path.
        from gavatar.render import write_ppm
        ds, avatar = small_dataset
        out = rasterize(deform(avatar, model24, ds.frames[0]), ds.cameras[2])
        ref = tmp_path / "direct.ppm"
        write_ppm(ref, out.image)
        assert ref.read_bytes() == (ds.root / "gt" / "0000_02.ppm").read_bytes()

    def test_mask_matches_alpha(self, small_dataset, model24):
        ds, avatar = small_dataset
        g = deform(avatar, model24, ds.frames[0])
        out = rasterize(g, ds.cameras[0])
        assert np.max(np.abs(ds.gt_mask(0, 0) - out.alpha)) <= 0.5 / 255 + 1e-9

    def test_training_samples(self, small_dataset):
        ds, _ = small_dataset
        samples = training_samples(ds, ds.train_views)
        assert len(samples) == 4 * 2
        s = samples[0]
        assert s.image.shape == (24, 24, 3)
        assert s.mask.shape == (24, 24)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CorruptionError):
            load_dataset(tmp_path)

    def test_overlapping_splits_rejected(self, small_dataset, tmp_path):
        import json
        import shutil
        ds, _ = small_dataset
        root = tmp_path / "bad"
        shutil.copytree(ds.root, root)
        manifest = json.loads((root / "manifest.json").read_text())
        manifest["test_views"] = manifest["train_views"]
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CorruptionError):
            load_dataset(root)

    def test_missing_frame_file(self, small_dataset, tmp_path):
        import shutil
        ds, _ = small_dataset
        root = tmp_path / "bad2"
        shutil.copytree(ds.root, root)
        (root / "frames" / "0002.gafp").unlink()
        with pytest.raises(CorruptionError):
            load_dataset(root)

    def test_deterministic_bytes(self, small_cfg, model24, tmp_path):
        avatar = make_gt_avatar(model24, small_cfg)
        poses = make_pose_sequence(small_cfg)
        cams = make_ring_cameras(small_cfg)
        d1 = render_dataset(avatar, model24, poses, cams, small_cfg, tmp_path / "a")
        d2 = render_dataset(avatar, model24, poses, cams, small_cfg, tmp_path / "b")
        img1 = (d1.root / "gt" / "0001_01.ppm").read_bytes()
        img2 = (d2.root / "gt" / "0001_01.ppm").read_bytes()
        assert img1 == img2
