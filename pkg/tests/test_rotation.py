"""Rotation representation and loss checks.

The 6-value mapping is validated three ways: a frozen hand-derived case,
an independent step-by-step Gram-Schmidt oracle on random inputs, and
bulk orthonormality sweeps. Gradients are checked against central finite
differences.
"""
import numpy as np
import pytest

from posekit.rotation import (
    DegenerateRotationError,
    SingularGradientError,
    axis_angle_matrix,
    geodesic_loss,
    geodesic_loss_grad,
    is_rotation,
    matrix_to_quat,
    matrix_to_rot6d,
    quat_loss,
    quat_to_matrix,
    random_rotation,
    rot6d_to_matrix,
    rot6d_to_matrix_many,
    project_to_rotation,
)

from _oracles import finite_difference_grad, gram_schmidt_by_hand


class TestRot6dToMatrix:
    def test_canonical_input_gives_identity(self):
        """(1,0,0,0,1,0) holds the first two identity columns, so the
        section property forces the identity back out."""
        out = rot6d_to_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(out, np.eye(3))

    def test_canonical_input_frame_vectors(self):
        e1, e2, e3 = gram_schmidt_by_hand([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(e1, [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(e2, [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(e3, [0.0, 1.0, 0.0])
        out = rot6d_to_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(out[:, 0], e1)
        np.testing.assert_array_equal(out[:, 1], e3)
        np.testing.assert_array_equal(out[:, 2], e2)

    def test_matches_hand_oracle_on_random_inputs(self):
        rng = np.random.default_rng(201)
        for _ in range(200):
            r6 = rng.uniform(-2, 2, 6)
            try:
                got = rot6d_to_matrix(r6)
            except DegenerateRotationError:
                continue
            e1, e2, e3 = gram_schmidt_by_hand(r6)
            np.testing.assert_allclose(got, np.stack([e1, e3, e2], axis=1), atol=1e-12)

    def test_orthonormality_sweep(self):
        rng = np.random.default_rng(202)
        eye = np.eye(3)
        for _ in range(500):
            m = rot6d_to_matrix(rng.uniform(-1, 1, 6))
            assert np.abs(m.T @ m - eye).max() < 1e-9
            assert abs(np.linalg.det(m) - 1.0) < 1e-9

    def test_scale_invariance_per_triple(self):
        rng = np.random.default_rng(203)
        r6 = rng.uniform(-1, 1, 6)
        base = rot6d_to_matrix(r6)
        for s1 in (0.5, 2.0, 10.0):
            for s2 in (0.5, 2.0, 10.0):
                scaled = np.concatenate([s1 * r6[:3], s2 * r6[3:]])
                np.testing.assert_allclose(rot6d_to_matrix(scaled), base, atol=1e-9)

    def test_section_property(self):
        rng = np.random.default_rng(204)
        for _ in range(100):
            m = random_rotation(rng)
            again = rot6d_to_matrix(matrix_to_rot6d(m))
            np.testing.assert_allclose(again, m, atol=1e-9)

    def test_degenerate_inputs_raise(self):
        with pytest.raises(DegenerateRotationError, match="near zero"):
            rot6d_to_matrix([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        with pytest.raises(DegenerateRotationError, match="collinear"):
            rot6d_to_matrix([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])

    def test_vectorized_agrees_with_scalar(self):
        rng = np.random.default_rng(205)
        rows = rng.uniform(-1, 1, (50, 6))
        rows[7] = 0.0  # zero first triple
        rows[21, 3:] = 3.0 * rows[21, :3]  # collinear
        mats, valid = rot6d_to_matrix_many(rows)
        assert not valid[7] and not valid[21]
        np.testing.assert_array_equal(mats[7], np.eye(3))
        np.testing.assert_array_equal(mats[21], np.eye(3))
        for i in range(50):
            if valid[i]:
                np.testing.assert_allclose(mats[i], rot6d_to_matrix(rows[i]), atol=1e-12)


class TestGeodesicLoss:
    def test_identical_rotations_give_zero(self):
        rng = np.random.default_rng(206)
        m = random_rotation(rng)
        assert geodesic_loss(m, m) == 0.0

    def test_known_quarter_turn(self):
        quarter = axis_angle_matrix([0.0, 0.0, 1.0], np.pi / 2)
        assert abs(geodesic_loss(np.eye(3), quarter) - np.pi / 2) < 1e-12

    def test_agrees_with_quaternion_route(self):
        rng = np.random.default_rng(207)
        for _ in range(300):
            a = random_rotation(rng)
            b = random_rotation(rng)
            geo = geodesic_loss(a, b)
            via_quat = quat_loss(matrix_to_quat(a), matrix_to_quat(b))
            assert abs(geo - via_quat) < 1e-6

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError, match="not a rotation"):
            geodesic_loss(np.eye(3), 2.0 * np.eye(3))


class TestGeodesicGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(208)
        checked = 0
        while checked < 50:
            a = random_rotation(rng)
            b = random_rotation(rng)
            theta = geodesic_loss(a, b)
            if not 0.1 < theta < np.pi - 0.1:
                continue
            analytic = geodesic_loss_grad(a, b)
            numeric = finite_difference_grad(lambda m: geodesic_loss(a, m), b, h=1e-6)
            rel = np.abs(numeric - analytic).max() / np.abs(analytic).max()
            assert rel < 1e-4
            checked += 1

    def test_frozen_simple_case(self):
        r_pred = axis_angle_matrix([0.0, 0.0, 1.0], 1.0)
        grad = geodesic_loss_grad(np.eye(3), r_pred)
        np.testing.assert_allclose(grad, -np.eye(3) / (2.0 * np.sin(1.0)), atol=1e-12)

    def test_raises_near_endpoints(self):
        with pytest.raises(SingularGradientError):
            geodesic_loss_grad(np.eye(3), np.eye(3))
        near_pi = axis_angle_matrix([1.0, 0.0, 0.0], np.pi - 1e-5)
        with pytest.raises(SingularGradientError):
            geodesic_loss_grad(np.eye(3), near_pi)


class TestQuaternions:
    def test_identity_round_trip_is_exact(self):
        np.testing.assert_array_equal(matrix_to_quat(np.eye(3)), [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(quat_to_matrix([1.0, 0.0, 0.0, 0.0]), np.eye(3))

    def test_half_turn_about_x(self):
        half = np.diag([1.0, -1.0, -1.0])
        np.testing.assert_array_equal(matrix_to_quat(half), [0.0, 1.0, 0.0, 0.0])
        np.testing.assert_allclose(quat_to_matrix([0.0, 1.0, 0.0, 0.0]), half, atol=0)

    def test_round_trip_sweep(self):
        rng = np.random.default_rng(209)
        for _ in range(300):
            q = rng.standard_normal(4)
            q /= np.linalg.norm(q)
            if q[0] < 0:
                q = -q
            back = matrix_to_quat(quat_to_matrix(q))
            np.testing.assert_allclose(back, q, atol=1e-9)

    def test_identical_quaternions_zero_loss(self):
        q = matrix_to_quat(random_rotation(np.random.default_rng(210)))
        assert quat_loss(q, q) == 0.0

    def test_double_cover(self):
        rng = np.random.default_rng(211)
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        assert quat_loss(q, -q) == 0.0

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError, match="unit norm"):
            quat_loss([1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])


class TestAxisAngleAndProjection:
    def test_quarter_turn_about_z(self):
        out = axis_angle_matrix([0.0, 0.0, 2.0], np.pi / 2)
        expect = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(out, expect, atol=1e-15)

    def test_zero_axis_raises(self):
        with pytest.raises(ValueError, match="near zero"):
            axis_angle_matrix([0.0, 0.0, 0.0], 1.0)

    def test_projection_repairs_small_drift(self):
        rng = np.random.default_rng(212)
        m = random_rotation(rng)
        drifted = m + 1e-5 * rng.standard_normal((3, 3))
        fixed = project_to_rotation(drifted)
        assert is_rotation(fixed, tol=1e-12)
        assert np.abs(fixed - m).max() < 1e-4

    def test_projection_rejects_far_or_reflected(self):
        with pytest.raises(ValueError, match="not within"):
            project_to_rotation(2.0 * np.eye(3))
        with pytest.raises(ValueError, match="not within"):
            project_to_rotation(np.diag([1.0, 1.0, -1.0]))

    def test_random_rotation_is_deterministic(self):
        a = random_rotation(np.random.default_rng(213))
        b = random_rotation(np.random.default_rng(213))
        np.testing.assert_array_equal(a, b)
        assert is_rotation(a, tol=1e-12)
