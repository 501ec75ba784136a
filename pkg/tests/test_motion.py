import numpy as np
import pytest

from gs4d.camera import PinholeCamera, look_at, orbit_camera, project_point
from gs4d.cloud import default_cloud
from gs4d.motion import (
    CameraTrack,
    ObjectMotion,
    SceneComposition,
    compose_scene,
    init_warp_from_bbox,
    load_motion,
    object_to_world,
    object_to_world_backward,
    rescale_toward_center,
    save_motion,
)
from gs4d.renderer import render
from oracles import finite_difference


def sample_cloud(rng, n=20, center=(0.0, 0.0, 4.0)):
    pts = rng.uniform(-0.3, 0.3, (n, 3)) + center
    cloud = default_cloud(pts, scale=0.08, opacity=0.9)
    cloud.sh[:, 0] = rng.uniform(-0.5, 0.5, (n, 3))
    return cloud


def front_camera(size=64, fx=80.0):
    return PinholeCamera(fx=fx, fy=fx, cx=size / 2.0, cy=size / 2.0,
                         width=size, height=size, rot=np.eye(3), tvec=np.zeros(3))


class TestObjectToWorld:
    def test_identity_frame(self):
        rng = np.random.default_rng(0)
        cloud = sample_cloud(rng)
        motion = ObjectMotion(anchor=cloud.centroid(), scales=np.ones(3),
                              deltas=np.zeros((3, 3)))
        out = object_to_world(cloud, motion, 1)
        np.testing.assert_array_equal(out.means, cloud.means)
        np.testing.assert_array_equal(out.log_scales, cloud.log_scales)

    def test_translation_and_scale(self):
        rng = np.random.default_rng(1)
        cloud = sample_cloud(rng)
        anchor = cloud.centroid()
        motion = ObjectMotion(anchor=anchor, scales=[1.0, 1.5],
                              deltas=[[0.0, 0.0, 0.0], [0.2, -0.1, 0.05]])
        out = object_to_world(cloud, motion, 2)
        np.testing.assert_allclose(
            out.means, anchor + 1.5 * (cloud.means - anchor) + [0.2, -0.1, 0.05],
            atol=1e-14,
        )
        np.testing.assert_allclose(out.log_scales, cloud.log_scales + np.log(1.5),
                                   atol=1e-14)
        np.testing.assert_allclose(out.centroid(), anchor + [0.2, -0.1, 0.05], atol=1e-12)

    def test_scale_grows_screen_footprint(self):
        rng = np.random.default_rng(2)
        cloud = sample_cloud(rng)
        cam = front_camera()
        motion = ObjectMotion(anchor=cloud.centroid(), scales=[1.0, 1.6],
                              deltas=np.zeros((2, 3)))
        area1 = (render(cam, object_to_world(cloud, motion, 1)).alpha > 0.5).sum()
        area2 = (render(cam, object_to_world(cloud, motion, 2)).alpha > 0.5).sum()
        assert area2 > 1.8 * area1

    def test_backward_finite_difference(self):
        rng = np.random.default_rng(3)
        cloud = sample_cloud(rng, n=6)
        anchor = rng.uniform(-0.2, 0.2, 3) + [0.0, 0.0, 4.0]
        motion = ObjectMotion(anchor=anchor, scales=[1.0, 1.3],
                              deltas=[[0.0] * 3, [0.1, 0.2, -0.05]])
        d_means = rng.standard_normal((6, 3))
        d_ls = rng.standard_normal((6, 3))

        def loss(means=None, scales=None, deltas=None):
            c = cloud.copy()
            if means is not None:
                c.means = means
            m = motion.copy()
            if scales is not None:
                m.scales = scales
            if deltas is not None:
                m.deltas = deltas
            out = object_to_world(c, m, 2)
            return np.sum(out.means * d_means) + np.sum(out.log_scales * d_ls)

        g_means, g_ls, g_delta, g_scale = object_to_world_backward(
            cloud, motion, 2, d_means, d_ls
        )
        ref = finite_difference(lambda v: loss(means=v), cloud.means.copy())
        np.testing.assert_allclose(g_means, ref, rtol=1e-6, atol=1e-9)
        np.testing.assert_array_equal(g_ls, d_ls)
        ref = finite_difference(lambda v: loss(deltas=v), motion.deltas.copy())
        np.testing.assert_allclose(g_delta, ref[1], rtol=1e-6, atol=1e-9)
        ref = finite_difference(lambda v: loss(scales=v), motion.scales.copy())
        np.testing.assert_allclose(g_scale, ref[1], rtol=1e-6, atol=1e-8)


class TestWarpInit:
    def test_static_camera_translation(self):
        # an object translating parallel to the image plane: deltas recover the
        # world translation, scale stays one
        cam = front_camera(fx=100.0)
        cams = [cam, cam, cam]
        z0 = 5.0
        shift = np.array([0.3, -0.2, 0.0])
        uv0 = np.array([32.0, 32.0])
        boxes = []
        for i in range(3):
            c = uv0 + 100.0 * shift[:2] * i / z0
            boxes.append([c[0] - 8.0, c[1] - 6.0, c[0] + 8.0, c[1] + 6.0])
        motion = init_warp_from_bbox(boxes, cams, z0, anchor=np.zeros(3))
        np.testing.assert_allclose(motion.scales, np.ones(3), atol=1e-12)
        for i in range(3):
            np.testing.assert_allclose(motion.deltas[i], shift * i, atol=1e-9)
        assert np.all(motion.deltas[:, 2] == 0.0)

    def test_moving_camera_static_object(self):
        # camera translates, object still: box centers move, but unprojection
        # through the per-frame cameras cancels the motion
        size, fx = 64, 80.0
        z0 = 4.0
        obj = np.array([0.0, 0.0, 0.0])
        cams = [
            look_at(eye=[0.1 * i, 0.0, -z0], target=[0.1 * i, 0.0, 0.0],
                    fx=fx, fy=fx, cx=size / 2, cy=size / 2, width=size, height=size)
            for i in range(3)
        ]
        boxes = []
        for cam in cams:
            uv, _, _ = project_point(cam, obj)
            boxes.append([uv[0] - 10.0, uv[1] - 10.0, uv[0] + 10.0, uv[1] + 10.0])
        motion = init_warp_from_bbox(boxes, cams, z0, anchor=obj)
        np.testing.assert_allclose(motion.deltas, np.zeros((3, 3)), atol=1e-9)

    def test_growing_box_scales(self):
        cam = front_camera()
        boxes = [[10.0, 10.0, 30.0, 26.0], [8.0, 8.0, 38.0, 32.0]]
        motion = init_warp_from_bbox(boxes, [cam, cam], 4.0, anchor=np.zeros(3))
        assert motion.scales[1] == pytest.approx(1.5)

    def test_rejects_degenerate_box(self):
        cam = front_camera()
        with pytest.raises(ValueError, match="box"):
            init_warp_from_bbox([[5.0, 5.0, 5.0, 5.0]], [cam], 4.0, np.zeros(3))


class TestCameraTrack:
    def test_static_track(self):
        cam = front_camera()
        track = CameraTrack.static(cam, 4)
        for t in range(1, 5):
            c = track.camera(t)
            np.testing.assert_array_equal(c.rot, cam.rot)
            np.testing.assert_array_equal(c.tvec, cam.tvec)

    def test_from_poses_roundtrip(self):
        size, fx = 48, 60.0
        cams = [
            orbit_camera([0.0, 0.0, 1.0], 4.0, 15.0 * i, 5.0 * i,
                         fx=fx, fy=fx, cx=size / 2, cy=size / 2, width=size, height=size)
            for i in range(4)
        ]
        track = CameraTrack.from_poses(cams)
        np.testing.assert_allclose(track.rotations[0], np.eye(3), atol=1e-12)
        np.testing.assert_allclose(track.translations[0], np.zeros(3), atol=1e-12)
        for t, cam in enumerate(cams, start=1):
            rebuilt = track.camera(t)
            np.testing.assert_allclose(rebuilt.rot, cam.rot, atol=1e-12)
            np.testing.assert_allclose(rebuilt.tvec, cam.tvec, atol=1e-12)

    def test_beta_scales_translation(self):
        cam = front_camera()
        track = CameraTrack.static(cam, 2)
        track.translations[1] = [0.5, 0.0, 0.0]
        track.betas[1] = 2.0
        c = track.camera(2)
        np.testing.assert_allclose(c.tvec, [1.0, 0.0, 0.0], atol=1e-12)


class TestComposition:
    def test_rescale_preserves_reference_image(self):
        rng = np.random.default_rng(4)
        cloud = sample_cloud(rng, n=25)
        cam = front_camera()
        base = render(cam, cloud)
        moved = rescale_toward_center(cloud, cam.center, 1.7)
        far = render(cam, moved)
        # same rays, same relative footprint: the image is unchanged up to
        # the depth-dependent low-pass term
        np.testing.assert_allclose(far.rgb, base.rgb, atol=5e-4)
        assert np.min(moved.means[:, 2]) > np.min(cloud.means[:, 2]) * 1.6

    def test_compose_scene_spans_and_reference(self):
        rng = np.random.default_rng(5)
        a = sample_cloud(rng, n=4, center=(0.0, 0.0, 3.0))
        b = sample_cloud(rng, n=6, center=(0.5, 0.0, 4.0))
        comp = SceneComposition(camera_center=np.zeros(3), factors={"b": 2.0},
                                reference="a")
        merged, spans = compose_scene({"a": a, "b": b}, comp)
        assert len(merged) == 10
        assert spans == {"a": (0, 4), "b": (4, 10)}
        np.testing.assert_array_equal(merged.means[0:4], a.means)
        np.testing.assert_allclose(merged.means[4:10], b.means * 2.0, atol=1e-12)

    def test_missing_reference_rejected(self):
        rng = np.random.default_rng(6)
        a = sample_cloud(rng, n=3)
        comp = SceneComposition(camera_center=np.zeros(3), factors={}, reference="zz")
        with pytest.raises(ValueError, match="reference"):
            compose_scene({"a": a}, comp)


class TestMotionFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        t = 5
        motion = ObjectMotion(
            anchor=rng.standard_normal(3),
            scales=rng.uniform(0.8, 1.4, t),
            deltas=rng.standard_normal((t, 3)),
        )
        cams = [
            orbit_camera([0.0, 0.0, 0.0], 5.0, 10.0 * i, 0.0,
                         fx=70.0, fy=72.0, cx=31.5, cy=32.5, width=64, height=64)
            for i in range(t)
        ]
        track = CameraTrack.from_poses(cams)
        track.betas = rng.uniform(0.5, 2.0, t)
        path = tmp_path / "object.gs4m"
        save_motion(path, motion, track, "field_0.gs4d")
        m2, t2, ref = load_motion(path)
        assert ref == "field_0.gs4d"
        np.testing.assert_array_equal(m2.anchor, motion.anchor)
        np.testing.assert_array_equal(m2.scales, motion.scales)
        np.testing.assert_array_equal(m2.deltas, motion.deltas)
        np.testing.assert_array_equal(t2.rotations, track.rotations)
        np.testing.assert_array_equal(t2.translations, track.translations)
        np.testing.assert_array_equal(t2.betas, track.betas)
        for t_idx in range(1, t + 1):
            np.testing.assert_allclose(t2.camera(t_idx).rot, track.camera(t_idx).rot,
                                       atol=1e-12)

    def test_magic_and_version_checked(self, tmp_path):
        path = tmp_path / "bad.gs4m"
        path.write_bytes(b"XXXX" + b"\x00" * 8)
        with pytest.raises(ValueError, match="magic"):
            load_motion(path)
        motion = ObjectMotion(anchor=np.zeros(3), scales=np.ones(2), deltas=np.zeros((2, 3)))
        track = CameraTrack.static(front_camera(), 2)
        good = tmp_path / "good.gs4m"
        save_motion(good, motion, track, "f.gs4d")
        blob = bytearray(good.read_bytes())
        blob[4:8] = (7).to_bytes(4, "little")
        good.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="version"):
            load_motion(good)
