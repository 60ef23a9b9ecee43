import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gavatar.errors import ConfigError, CorruptionError, ShapeError
from gavatar.prior import (PoseShape, build_toy_prior, forward, load_prior,
                           rodrigues, save_prior)


def _quat_rotate(axis_angle, v):
    """Independent oracle: rotate v by quaternion conjugation q v q*."""
    angle = np.linalg.norm(axis_angle)
    if angle == 0:
        return np.array(v, dtype=float)
    axis = np.asarray(axis_angle) / angle
    w = np.cos(angle / 2)
    xyz = np.sin(angle / 2) * axis

    def qmul(a, b):
        aw, av = a
        bw, bv = b
        return (aw * bw - av @ bv, aw * bv + bw * av + np.cross(av, bv))

    q = (w, xyz)
    qinv = (w, -xyz)
    _, out = qmul(qmul(q, (0.0, np.asarray(v, dtype=float))), qinv)
    return out


class TestRodrigues:
    def test_zero_is_identity(self):
        assert np.array_equal(rodrigues([0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        r = rodrigues([0, 0, np.pi / 2])
        np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    def test_matches_quaternion_oracle(self, aa):
        r = rodrigues(aa)
        for e in np.eye(3):
            np.testing.assert_allclose(r @ e, _quat_rotate(aa, e), atol=1e-12)

    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    def test_orthonormal_det_plus_one(self, aa):
        r = rodrigues(aa)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


class TestBuildToyPrior:
    def test_weight_rows_stochastic_by_summation_oracle(self):
        m = build_toy_prior(7, 24, 600)
        for row in m.skin_weights:
            total = 0.0
            for w in row:
                assert w >= 0
                total += w
            assert total == pytest.approx(1.0, abs=1e-9)
            assert np.count_nonzero(row) <= 4

    def test_deterministic(self):
        a = build_toy_prior(7, 24, 600)
        b = build_toy_prior(7, 24, 600)
        for f in ("rest_joints", "rest_vertices", "shape_basis", "skin_weights"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_invalid_counts(self):
        with pytest.raises(ConfigError):
            build_toy_prior(7, 1, 10)
        with pytest.raises(ConfigError):
            build_toy_prior(7, 24, 10)

    def test_star_pose_joint_separation(self, model24):
        _, tr = forward(model24, model24.canonical())
        j = tr.joint_positions
        d = np.linalg.norm(j[:, None] - j[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() > 0.01

    def test_generic_joint_count(self):
        m = build_toy_prior(3, joint_count=6, vertex_count=40)
        assert m.joint_count == 6
        assert m.vertex_count == 40

    def test_shape_basis_amplitude_bound(self, model24):
        beta = np.full(10, 2.0)
        disp = model24.shape_basis @ beta
        assert np.max(np.linalg.norm(disp, axis=1)) <= 0.05 + 1e-12


class TestForward:
    def test_canonical_identity(self, model24):
        verts, tr = forward(model24, model24.canonical())
        np.testing.assert_allclose(verts, model24.rest_vertices, atol=1e-12)
        np.testing.assert_allclose(tr.rotations, np.tile(np.eye(3), (24, 1, 1)), atol=1e-12)
        np.testing.assert_allclose(tr.translations, 0, atol=1e-12)

    def test_shape_linearity(self, model24):
        eps = 0.37
        beta = np.zeros(10)
        beta[0] = eps
        verts, _ = forward(model24, PoseShape(np.zeros(72), beta))
        expected = model24.rest_vertices + eps * model24.shape_basis[:, :, 0]
        np.testing.assert_allclose(verts, expected, atol=1e-9)

    def test_one_hot_weights_rigid_motion(self, model24, rng):
        # Bind every vertex to joint 16 and pose the arm: distances between
        # co-rigid vertices must be preserved.
        w = np.zeros_like(model24.skin_weights)
        w[:, 16] = 1.0
        m = dataclasses.replace(model24, skin_weights=w)
        theta = np.zeros(72)
        theta[16 * 3:16 * 3 + 3] = [0.4, -0.7, 0.2]
        theta[0:3] = [0.1, 0.2, -0.1]
        v0, _ = forward(m, m.canonical())
        v1, _ = forward(m, PoseShape(theta, np.zeros(10)))
        d0 = np.linalg.norm(v0[:20, None] - v0[None, :20], axis=2)
        d1 = np.linalg.norm(v1[:20, None] - v1[None, :20], axis=2)
        np.testing.assert_allclose(d0, d1, atol=1e-9)

    def test_transform_orthonormality(self, model24, rng):
        for _ in range(20):
            theta = rng.uniform(-np.pi, np.pi, 72)
            _, tr = forward(model24, PoseShape(theta, rng.uniform(-2, 2, 10)))
            for r in tr.rotations:
                np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
                assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)

    def test_dimension_mismatch(self, model24):
        with pytest.raises(ShapeError):
            forward(model24, PoseShape(np.zeros(66), np.zeros(10)))


class TestPriorIO:
    def test_round_trip(self, model24, tmp_path):
        path = tmp_path / "m.gapm"
        save_prior(model24, path)
        loaded = load_prior(path)
        np.testing.assert_array_equal(loaded.rest_vertices, model24.rest_vertices)
        np.testing.assert_array_equal(loaded.parent, model24.parent)
        np.testing.assert_allclose(loaded.skin_weights, model24.skin_weights, atol=1e-12)

    def test_bad_magic(self, model24, tmp_path):
        path = tmp_path / "m.gapm"
        save_prior(model24, path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(raw)
        with pytest.raises(CorruptionError):
            load_prior(path)
