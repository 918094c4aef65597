import numpy as np
import pytest

from capfields.camera import BehindCameraError, Camera, InvalidDepthError, look_at
from capfields.transforms import Se3


def default_cam():
    return Camera(fx=256, fy=256, cx=128, cy=128, width=256, height=256)


class TestProject:
    def test_on_axis(self):
        pix, depth = default_cam().project([0.0, 0.0, 1.0])
        assert np.allclose(pix, [128.0, 128.0])
        assert depth == 1.0

    def test_off_axis(self):
        pix, depth = default_cam().project([0.5, 0.0, 1.0])
        assert np.allclose(pix, [256.0, 128.0])
        assert depth == 1.0

    def test_behind_camera(self):
        with pytest.raises(BehindCameraError):
            default_cam().project([0.0, 0.0, -1.0])

    def test_roundtrip_random(self):
        cam = Camera(fx=311.0, fy=298.5, cx=130.2, cy=121.7, width=256, height=256,
                     pose=Se3.from_rotvec_trans([0.2, -0.1, 0.3], [0.4, 1.0, -0.2]))
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(100):
            p_cam = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.3, 4.0)])
            p = cam.pose.apply(p_cam)
            pix, d = cam.project(p)
            back = cam.backproject(pix, d)
            worst = max(worst, float(np.abs(back - p).max()))
        assert worst < 1e-6


class TestBackproject:
    def test_center_pixel(self):
        p = default_cam().backproject([128.0, 128.0], 1.0)
        assert np.allclose(p, [0.0, 0.0, 1.0])

    def test_analytic(self):
        p = default_cam().backproject([256.0, 128.0], 2.0)
        assert np.allclose(p, [1.0, 0.0, 2.0])

    def test_zero_depth(self):
        with pytest.raises(InvalidDepthError):
            default_cam().backproject([10.0, 10.0], 0.0)


class TestValidation:
    def test_bad_focal(self):
        with pytest.raises(ValueError):
            Camera(fx=0, fy=1, cx=0, cy=0, width=8, height=8)

    def test_bad_size(self):
        with pytest.raises(ValueError):
            Camera(fx=1, fy=1, cx=0, cy=0, width=0, height=8)


class TestBatch:
    def test_batch_matches_scalar(self):
        cam = Camera(fx=200, fy=210, cx=100, cy=90, width=200, height=180,
                     pose=Se3.from_rotvec_trans([0.1, 0.2, -0.1], [0.3, 0.1, 0.5]))
        rng = np.random.default_rng(23)
        pts = cam.pose.apply(np.column_stack([
            rng.uniform(-0.4, 0.4, 30), rng.uniform(-0.4, 0.4, 30), rng.uniform(0.5, 3.0, 30)]))
        uv, z, inside = cam.project_batch(pts)
        for i in range(len(pts)):
            pix, d = cam.project(pts[i])
            assert np.allclose(uv[i], pix, atol=1e-12)
            assert abs(z[i] - d) <= 1e-12

    def test_pixel_rays_hit_backprojection(self):
        cam = Camera(fx=128, fy=128, cx=64, cy=64, width=128, height=128,
                     pose=look_at([0.0, 1.2, 2.0], [0.0, 0.9, 0.0]))
        uv = np.array([[10.5, 90.0], [64.0, 64.0], [100.0, 5.0]])
        o, d = cam.pixel_rays(uv)
        for i in range(len(uv)):
            target = cam.backproject(uv[i], 1.7)
            t = np.linalg.norm(target - o[i])
            assert np.allclose(o[i] + t * d[i], target, atol=1e-9)


class TestLookAt:
    def test_camera_axes(self):
        pose = look_at([0.0, 1.0, 2.0], [0.0, 1.0, 0.0])
        cam = Camera(fx=100, fy=100, cx=50, cy=50, width=100, height=100, pose=pose)
        # target projects to the center
        pix, depth = cam.project([0.0, 1.0, 0.0])
        assert np.allclose(pix, [50.0, 50.0], atol=1e-9)
        assert abs(depth - 2.0) <= 1e-12
        # a point above the target lands above the center (smaller v, CV y-down)
        pix_up, _ = cam.project([0.0, 1.3, 0.0])
        assert pix_up[1] < 50.0
        assert abs(np.linalg.det(pose.rotation) - 1.0) <= 1e-9
