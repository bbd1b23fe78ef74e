"""Transforms, camera model, and positional encoding against independent oracles."""

import math

import numpy as np
import pytest

from crossreg.errors import InvalidRotationError, NonPositiveDepthError
from crossreg.geometry import (
    CameraIntrinsics,
    RigidTransform,
    apply_transform,
    backproject_pixel,
    backproject_pixels,
    fourier_embed,
    fourier_embed_positions,
    project_point,
    project_points,
    rotation_from_axis_angle,
)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Oracle-side rotation sampler: QR of a Gaussian matrix, det fixed to +1."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


class TestRigidTransform:
    def test_apply_matches_homogeneous_multiply(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            rot = random_rotation(rng)
            tra = rng.uniform(-2, 2, 3)
            transform = RigidTransform(rot, tra)
            pts = rng.uniform(-3, 3, (40, 3))
            # independent oracle: 4x4 homogeneous multiply
            hom = np.eye(4)
            hom[:3, :3] = rot
            hom[:3, 3] = tra
            pts_h = np.concatenate([pts, np.ones((40, 1))], axis=1)
            expected = (pts_h @ hom.T)[:, :3]
            np.testing.assert_allclose(transform.apply(pts), expected, atol=1e-12)
            np.testing.assert_allclose(
                apply_transform(transform, pts[0]), expected[0], atol=1e-12
            )

    def test_compose_then_apply_equals_sequential(self):
        rng = np.random.default_rng(11)
        a = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        b = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        p = rng.uniform(-1, 1, 3)
        np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(13)
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        pts = rng.uniform(-2, 2, (10, 3))
        np.testing.assert_allclose(t.inverse().apply(t.apply(pts)), pts, atol=1e-12)

    def test_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(InvalidRotationError):
            RigidTransform(flip, np.zeros(3))

    def test_rejects_non_orthogonal(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-6
        with pytest.raises(InvalidRotationError):
            RigidTransform(bad, np.zeros(3))

    def test_accepts_exact_rotation(self):
        t = RigidTransform(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(t.apply(np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])

    def test_rodrigues_matches_analytic_z_rotation(self):
        theta = 0.37
        expected = np.array(
            [
                [math.cos(theta), -math.sin(theta), 0.0],
                [math.sin(theta), math.cos(theta), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        np.testing.assert_allclose(
            rotation_from_axis_angle([0.0, 0.0, theta]), expected, atol=1e-12
        )

    def test_rodrigues_zero_vector_is_identity(self):
        np.testing.assert_array_equal(rotation_from_axis_angle(np.zeros(3)), np.eye(3))


class TestCamera:
    def test_known_projection(self):
        k = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
        u, v = project_point(k, np.array([0.5, -0.25, 2.0]))
        assert u == 445.0
        assert v == 177.5

    def test_project_backproject_round_trip(self):
        k = CameraIntrinsics(fx=480.0, fy=510.0, cx=315.5, cy=243.25, width=640, height=480)
        rng = np.random.default_rng(3)
        for _ in range(50):
            p = np.array(
                [rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.2, 5.0)]
            )
            u, v = project_point(k, p)
            np.testing.assert_allclose(backproject_pixel(k, u, v, p[2]), p, atol=1e-12)

    def test_vectorized_matches_scalar(self):
        k = CameraIntrinsics(fx=400.0, fy=420.0, cx=160.0, cy=120.0, width=320, height=240)
        rng = np.random.default_rng(5)
        pts = np.column_stack(
            [rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20), rng.uniform(0.5, 4, 20)]
        )
        uv = project_points(k, pts)
        for i in range(20):
            u, v = project_point(k, pts[i])
            assert uv[i, 0] == u and uv[i, 1] == v
        back = backproject_pixels(k, uv, pts[:, 2])
        np.testing.assert_allclose(back, pts, atol=1e-12)

    def test_zero_depth_rejected(self):
        k = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
        with pytest.raises(NonPositiveDepthError):
            project_point(k, np.array([0.0, 0.0, 0.0]))
        with pytest.raises(NonPositiveDepthError):
            project_point(k, np.array([0.1, 0.1, -1.0]))
        with pytest.raises(NonPositiveDepthError):
            backproject_pixel(k, 320.0, 240.0, 0.0)

    def test_invalid_intrinsics_rejected(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=500.0, fy=500.0, cx=640.0, cy=240.0, width=640, height=480)


class TestFourierEmbed:
    def test_term_by_term_small_case(self):
        # frequencies 2^0 and 2^1 at x = 0.5
        x = 0.5
        got = fourier_embed(x, 2)
        expected = np.array(
            [x, math.sin(x), math.cos(x), math.sin(2 * x), math.cos(2 * x)]
        )
        np.testing.assert_allclose(got, expected, rtol=0, atol=0)

    def test_zero_input(self):
        np.testing.assert_array_equal(fourier_embed(0.0, 2), [0.0, 0.0, 1.0, 0.0, 1.0])

    def test_length_rule(self):
        for L in (1, 3, 7):
            assert fourier_embed(1.234, L).shape == (2 * L + 1,)

    def test_positions_concatenate_components(self):
        pos = np.array([[0.5, -1.0], [2.0, 0.25]])
        got = fourier_embed_positions(pos, 3)
        assert got.shape == (2, 2 * (2 * 3 + 1))
        for i in range(2):
            for comp in range(2):
                block = got[i, comp * 7 : (comp + 1) * 7]
                np.testing.assert_allclose(
                    block, fourier_embed(pos[i, comp], 3), atol=0
                )

    def test_rejects_bad_frequency_count(self):
        with pytest.raises(ValueError):
            fourier_embed(1.0, 0)
