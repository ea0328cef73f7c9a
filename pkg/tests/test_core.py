import json

import numpy as np
import pytest

from gemsplat.core import (Camera, GaussianCloud, covariance3d, eval_gaussian2d,
                           load_camera, load_ply, logit, orbit_camera,
                           project_covariance, quat_normalize, save_camera, save_ply,
                           sigmoid)
from gemsplat.errors import FormatError, InvalidInputError


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestCovariance3d:
    def test_identity(self):
        cov = covariance3d([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        assert np.allclose(cov, np.eye(3), atol=1e-12)

    def test_axis_scale(self):
        cov = covariance3d([1.0, 0.0, 0.0, 0.0], [np.log(2.0), 0.0, 0.0])
        assert np.allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)

    def test_rotation_permutes_axes(self):
        # 90 degrees about z maps the x-axis scale onto y
        q = [np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)]
        cov = covariance3d(q, [np.log(2.0), 0.0, 0.0])
        assert np.allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-9)

    def test_spectrum_invariant_under_rotation(self, rng):
        for _ in range(20):
            q = quat_normalize(rng.normal(size=4))
            ls = rng.uniform(-1.0, 1.0, size=3)
            cov = covariance3d(q, ls)
            eig = np.sort(np.linalg.eigvalsh(cov))
            assert np.allclose(eig, np.sort(np.exp(2 * ls)), atol=1e-9)
            assert np.allclose(cov, cov.T)

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            covariance3d([np.nan, 0, 0, 0], [0, 0, 0])
        with pytest.raises(InvalidInputError):
            covariance3d([1, 0, 0, 0], [np.inf, 0, 0])


class TestProjection:
    def _camera(self, fx=100.0):
        return Camera(64, 64, fx, fx, 32.0, 32.0, np.eye(4))

    def test_on_axis_isotropic(self):
        cam = self._camera()
        res = project_covariance(np.eye(3), [0.0, 0.0, 1.0], cam)
        assert np.allclose(res.cov2d, np.diag([10000.0, 10000.0]) + 0.3 * np.eye(2), rtol=1e-12)
        assert np.allclose(res.center, [32.0, 32.0])
        assert res.depth == pytest.approx(1.0)

    def test_behind_camera_culled(self):
        res = project_covariance(np.eye(3), [0.0, 0.0, -1.0], self._camera())
        assert res is None

    def test_matches_numeric_jacobian(self, rng):
        # oracle: finite-difference jacobian of the projection function
        cam = orbit_camera(64, 64, 50.0, 0.4, 0.2, 3.0)
        # world point with camera-space position (0.5, 0, 2)
        point = np.linalg.solve(cam.rotation, np.array([0.5, 0.0, 2.0]) - cam.translation)
        cov = covariance3d(quat_normalize(rng.normal(size=4)), rng.uniform(-1, 0, 3))

        def proj(pw):
            pc = cam.rotation @ pw + cam.translation
            return np.array([cam.fx * pc[0] / pc[2], cam.fy * pc[1] / pc[2]])

        h = 1e-6
        jac = np.zeros((2, 3))
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            jac[:, d] = (proj(point + e) - proj(point - e)) / (2 * h)
        expected = jac @ cov @ jac.T
        res = project_covariance(cov, point, cam, lowpass=0.0)
        assert np.allclose(res.cov2d, expected, rtol=1e-6, atol=1e-8)

    def test_roll_equivariance(self, rng):
        # rolling the camera by t rotates the projected covariance by -t
        cam = self._camera()
        point = np.array([0.3, -0.2, 2.0])
        cov = covariance3d(quat_normalize(rng.normal(size=4)), rng.uniform(-1.0, 0.0, 3))
        base = project_covariance(cov, point, cam, lowpass=0.0)
        for t in (0.3, -0.7, 1.2):
            w2c = np.eye(4)
            w2c[:3, :3] = rot_z(t).T @ cam.rotation
            rolled = Camera(64, 64, 100.0, 100.0, 32.0, 32.0, w2c)
            res = project_covariance(cov, point, rolled, lowpass=0.0)
            expected = rot_z(-t)[:2, :2] @ base.cov2d @ rot_z(-t)[:2, :2].T
            assert np.allclose(res.cov2d, expected, atol=1e-6)


class TestEvalGaussian2d:
    def test_center_is_one(self):
        assert eval_gaussian2d(np.eye(2), [3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0)

    def test_unit_distance(self):
        assert eval_gaussian2d(np.eye(2), [0.0, 0.0], [1.0, 0.0]) == pytest.approx(np.exp(-0.5))

    def test_mahalanobis_scaling(self):
        val = eval_gaussian2d(np.diag([4.0, 1.0]), [0.0, 0.0], [2.0, 0.0])
        assert val == pytest.approx(np.exp(-0.5))

    def test_singular_contributes_zero(self):
        assert eval_gaussian2d(np.zeros((2, 2)), [0.0, 0.0], [0.0, 0.0]) == 0.0

    def test_monotone_in_distance(self, rng):
        a = rng.normal(size=(2, 2))
        cov = a @ a.T + 0.5 * np.eye(2)
        direction = rng.normal(size=2)
        vals = [eval_gaussian2d(cov, [0, 0], t * direction) for t in np.linspace(0, 5, 40)]
        assert np.all(np.diff(vals) <= 1e-15)


class TestGaussianCloud:
    def test_quaternions_renormalized(self, rng):
        cloud = GaussianCloud(np.zeros((3, 3)), rng.normal(size=(3, 4)) * 5.0,
                              np.zeros((3, 3)), np.zeros(3), np.full((3, 3), 0.5))
        norms = np.linalg.norm(cloud.rotations, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_color_range_enforced(self):
        with pytest.raises(InvalidInputError):
            GaussianCloud(np.zeros((1, 3)), [[1, 0, 0, 0]], np.zeros((1, 3)),
                          np.zeros(1), [[1.5, 0.0, 0.0]])

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            GaussianCloud(np.full((1, 3), np.nan), [[1, 0, 0, 0]], np.zeros((1, 3)),
                          np.zeros(1), np.zeros((1, 3)))


class TestPlyRoundTrip:
    def test_round_trip(self, rng, tmp_path):
        from conftest import random_cloud
        cloud = random_cloud(rng, 17)
        path = tmp_path / "cloud.ply"
        save_ply(cloud, path)
        back = load_ply(path)
        # float32 on disk
        assert np.allclose(back.positions, cloud.positions, atol=1e-5)
        assert np.allclose(back.rotations, cloud.rotations, atol=1e-5)
        assert np.allclose(back.log_scales, cloud.log_scales, atol=1e-4)
        assert np.allclose(back.opacity_logits, cloud.opacity_logits, atol=1e-4)
        assert np.allclose(back.colors, cloud.colors, atol=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"nonsense\nend_header\n")
        with pytest.raises(FormatError):
            load_ply(path)

    def test_truncated(self, rng, tmp_path):
        from conftest import random_cloud
        path = tmp_path / "short.ply"
        save_ply(random_cloud(rng, 5), path)
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(FormatError):
            load_ply(path)


class TestCamera:
    def test_json_round_trip(self, tmp_path):
        cam = orbit_camera(80, 60, 40.0, 0.7, -0.2, 5.0)
        path = tmp_path / "cam.json"
        save_camera(cam, path)
        back = load_camera(path)
        assert back.width == cam.width and back.height == cam.height
        assert np.allclose(back.world_to_camera, cam.world_to_camera)
        # exact key spelling of the interchange format
        keys = set(json.loads(path.read_text()))
        assert keys == {"width", "height", "fx", "fy", "cx", "cy", "worldToCamera"}

    def test_rejects_non_orthonormal(self):
        m = np.eye(4)
        m[0, 1] = 0.1
        with pytest.raises(InvalidInputError):
            Camera(8, 8, 10.0, 10.0, 4.0, 4.0, m)

    def test_rejects_bad_focal(self):
        with pytest.raises(InvalidInputError):
            Camera(8, 8, -1.0, 10.0, 4.0, 4.0, np.eye(4))


def test_sigmoid_logit_inverse(rng):
    x = rng.normal(scale=3.0, size=100)
    assert np.allclose(logit(sigmoid(x)), x, atol=1e-9)
