import numpy as np
import pytest

from gs4d.camera import PinholeCamera, project_point
from gs4d.cloud import default_cloud
from gs4d.metrics import (
    EpeReport,
    TrackSet,
    compute_epe,
    project_gaussian_tracks,
    psnr,
    ssim,
)
from gs4d.renderer import composite_weights, project_gaussian, render


def front_camera(size=48, fx=60.0):
    return PinholeCamera(fx=fx, fy=fx, cx=size / 2.0, cy=size / 2.0,
                         width=size, height=size, rot=np.eye(3), tvec=np.zeros(3))


def two_splat_cloud():
    cloud = default_cloud([[-0.5, 0.0, 4.0], [0.6, 0.1, 4.5]], scale=0.08)
    cloud.sh[0, 0] = (np.array([0.8, 0.2, 0.2]) - 0.5) / 0.28209479177387814
    return cloud


class TestTrackSet:
    def test_validates_ids_and_coords(self):
        with pytest.raises(ValueError, match="unique"):
            TrackSet(ids=[1, 1], uv=np.zeros((2, 3, 2)), visible=np.ones((2, 3)))
        bad = np.zeros((1, 2, 2))
        bad[0, 1, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            TrackSet(ids=[0], uv=bad, visible=np.ones((1, 2)))


class TestProjectGaussianTracks:
    def test_single_gaussian_follows_analytic_trajectory(self):
        camera = front_camera()
        cloud = two_splat_cloud()
        velocity = np.array([0.05, -0.02, 0.0])
        clouds = []
        for t in range(4):
            c = cloud.copy()
            c.means += velocity * t
            clouds.append(c)
        start, _, _ = project_point(camera, cloud.means[0])
        tracks = project_gaussian_tracks(clouds, [camera] * 4, [start])
        assert not tracks.unassigned[0]
        for t in range(4):
            expected, _, _ = project_point(camera, cloud.means[0] + velocity * t)
            np.testing.assert_allclose(tracks.uv[0, t], expected, atol=1e-9)

    def test_static_scene_tracks_constant(self):
        camera = front_camera()
        cloud = two_splat_cloud()
        queries, _, _ = project_point(camera, cloud.means)
        queries = queries + [[0.4, -0.3], [-0.2, 0.5]]
        tracks = project_gaussian_tracks([cloud] * 3, [camera] * 3, queries)
        for t in range(1, 3):
            np.testing.assert_array_equal(tracks.uv[:, t], tracks.uv[:, 0])

    def test_uncovered_query_flagged_unassigned(self):
        camera = front_camera()
        cloud = two_splat_cloud()
        tracks = project_gaussian_tracks([cloud] * 2, [camera] * 2,
                                         [[1.0, 1.0]])
        assert tracks.unassigned[0]
        np.testing.assert_array_equal(tracks.uv[0], [[1.0, 1.0], [1.0, 1.0]])

    def test_weights_reproduce_rendered_image(self):
        camera = front_camera(size=32)
        rng = np.random.default_rng(0)
        cloud = default_cloud(
            np.c_[rng.uniform(-1.0, 1.0, (30, 2)), rng.uniform(3.5, 4.5, 30)],
            scale=0.15,
        )
        cloud.sh[:] = rng.normal(0.0, 0.3, cloud.sh.shape)
        background = (0.2, 0.1, 0.4)
        out = render(camera, cloud, background=background)
        grid = camera.pixel_grid().reshape(-1, 2)
        weights, _ = composite_weights(camera, cloud, grid)
        proj = project_gaussian(cloud, camera)
        manual = weights.T @ proj.color
        manual += (1.0 - weights.sum(axis=0))[:, None] * np.asarray(background)
        np.testing.assert_allclose(manual.reshape(out.rgb.shape), out.rgb,
                                   atol=1e-12)

    def test_mismatched_inputs_rejected(self):
        camera = front_camera()
        cloud = two_splat_cloud()
        with pytest.raises(ValueError, match="per frame"):
            project_gaussian_tracks([cloud] * 2, [camera] * 3, [[1.0, 1.0]])
        other = cloud.subset([0])
        with pytest.raises(ValueError, match="same splats"):
            project_gaussian_tracks([cloud, other], [camera] * 2, [[1.0, 1.0]])


class TestComputeEpe:
    def make_tracks(self, rng, k=6, t=4):
        ids = np.arange(k)
        uv = rng.uniform(0.0, 64.0, (k, t, 2))
        vis = rng.uniform(0.0, 1.0, (k, t)) > 0.4
        return TrackSet(ids=ids, uv=uv, visible=vis)

    def test_identical_is_zero(self):
        gt = self.make_tracks(np.random.default_rng(0))
        pred = TrackSet(ids=gt.ids, uv=gt.uv.copy(),
                        visible=np.ones_like(gt.visible))
        report = compute_epe(pred, gt)
        assert report.mean_epe == 0.0
        assert report.median_epe == 0.0
        assert report.mean_epe_visible == 0.0
        assert report.mean_epe_occluded == 0.0
        assert report.n_points == gt.uv.shape[0] * gt.uv.shape[1]

    def test_constant_offset_gives_five(self):
        gt = self.make_tracks(np.random.default_rng(1))
        pred = TrackSet(ids=gt.ids, uv=gt.uv + [3.0, 4.0],
                        visible=np.ones_like(gt.visible))
        report = compute_epe(pred, gt)
        assert report.mean_epe == pytest.approx(5.0, abs=1e-12)
        assert report.median_epe == pytest.approx(5.0, abs=1e-12)
        assert report.mean_epe_visible == pytest.approx(5.0, abs=1e-12)
        assert report.mean_epe_occluded == pytest.approx(5.0, abs=1e-12)

    def test_matches_hand_partitioned_aggregation(self):
        rng = np.random.default_rng(2)
        gt = self.make_tracks(rng)
        pred = TrackSet(ids=gt.ids, uv=gt.uv + rng.normal(0.0, 2.0, gt.uv.shape),
                        visible=np.ones_like(gt.visible))
        report = compute_epe(pred, gt)
        errors, vis_errors, occ_errors = [], [], []
        for i in range(gt.uv.shape[0]):
            for t in range(gt.uv.shape[1]):
                e = float(np.hypot(*(pred.uv[i, t] - gt.uv[i, t])))
                errors.append(e)
                (vis_errors if gt.visible[i, t] else occ_errors).append(e)
        assert report.mean_epe == pytest.approx(np.mean(errors), abs=1e-12)
        assert report.median_epe == pytest.approx(np.median(errors), abs=1e-12)
        assert report.mean_epe_visible == pytest.approx(np.mean(vis_errors), abs=1e-12)
        assert report.mean_epe_occluded == pytest.approx(np.mean(occ_errors), abs=1e-12)
        assert report.n_visible == len(vis_errors)
        assert report.n_occluded == len(occ_errors)
        assert report.n_points == len(errors)
        low, high = min(errors), max(errors)
        assert low <= report.mean_epe <= high
        assert low <= report.median_epe <= high

    def test_translation_equivariant(self):
        rng = np.random.default_rng(3)
        gt = self.make_tracks(rng)
        pred = TrackSet(ids=gt.ids, uv=gt.uv + rng.normal(0.0, 1.0, gt.uv.shape),
                        visible=np.ones_like(gt.visible))
        base = compute_epe(pred, gt)
        shift = np.array([7.5, -2.25])
        moved = compute_epe(
            TrackSet(ids=pred.ids, uv=pred.uv + shift, visible=pred.visible),
            TrackSet(ids=gt.ids, uv=gt.uv + shift, visible=gt.visible),
        )
        for key, value in base.as_dict().items():
            assert moved.as_dict()[key] == pytest.approx(value, abs=1e-12), key

    def test_order_independent(self):
        rng = np.random.default_rng(4)
        gt = self.make_tracks(rng)
        pred = TrackSet(ids=gt.ids, uv=gt.uv + rng.normal(0.0, 1.0, gt.uv.shape),
                        visible=np.ones_like(gt.visible))
        perm = rng.permutation(gt.ids.size)
        shuffled = TrackSet(ids=pred.ids[perm], uv=pred.uv[perm],
                            visible=pred.visible[perm])
        assert compute_epe(shuffled, gt) == compute_epe(pred, gt)

    def test_mismatches_rejected(self):
        gt = self.make_tracks(np.random.default_rng(5))
        with pytest.raises(ValueError, match="id sets"):
            compute_epe(TrackSet(ids=gt.ids + 100, uv=gt.uv, visible=gt.visible), gt)
        short = TrackSet(ids=gt.ids, uv=gt.uv[:, :2], visible=gt.visible[:, :2])
        with pytest.raises(ValueError, match="frame counts"):
            compute_epe(short, gt)


class TestPsnr:
    def test_identical_hits_cap(self):
        img = np.random.default_rng(0).uniform(0.0, 1.0, (16, 16, 3))
        assert psnr(img, img) == 99.0

    def test_known_mse(self):
        img = np.full((8, 8), 0.3)
        assert psnr(img, img + 0.1) == pytest.approx(20.0, abs=1e-12)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.0, 1.0, (12, 10, 3))
        b = rng.uniform(0.0, 1.0, (12, 10, 3))
        direct = 10.0 * np.log10(1.0 / np.mean((a - b) ** 2))
        assert psnr(a, b) == pytest.approx(direct, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_identical_is_one(self):
        img = np.random.default_rng(0).uniform(0.0, 1.0, (16, 16, 3))
        assert ssim(img, img) == 1.0

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.0, 1.0, (15, 14))
        b = np.clip(a + rng.normal(0.0, 0.15, a.shape), 0.0, 1.0)

        offsets = np.arange(11) - 5.0
        k1 = np.exp(-0.5 * (offsets / 1.5) ** 2)
        k1 /= k1.sum()
        window = np.outer(k1, k1)
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        values = []
        for y in range(5, a.shape[0] - 5):
            for x in range(5, a.shape[1] - 5):
                pa = a[y - 5:y + 6, x - 5:x + 6]
                pb = b[y - 5:y + 6, x - 5:x + 6]
                mu_a = float((window * pa).sum())
                mu_b = float((window * pb).sum())
                var_a = float((window * pa * pa).sum()) - mu_a ** 2
                var_b = float((window * pb * pb).sum()) - mu_b ** 2
                cov = float((window * pa * pb).sum()) - mu_a * mu_b
                values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                              / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
        assert ssim(a, b) == pytest.approx(np.mean(values), abs=1e-9)

    def test_stays_in_range_and_orders_quality(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0.0, 1.0, (20, 20, 3))
        near = np.clip(a + rng.normal(0.0, 0.02, a.shape), 0.0, 1.0)
        far = rng.uniform(0.0, 1.0, (20, 20, 3))
        s_near, s_far = ssim(a, near), ssim(a, far)
        assert -1.0 <= s_far <= 1.0
        assert s_far < s_near < 1.0

    def test_small_or_mismatched_images_rejected(self):
        with pytest.raises(ValueError, match="at least 11"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))
        with pytest.raises(ValueError, match="shapes differ"):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class TestEpeReport:
    def test_as_dict_roundtrip(self):
        report = EpeReport(mean_epe=1.0, median_epe=0.5, mean_epe_visible=0.8,
                           mean_epe_occluded=2.0, n_points=10, n_visible=7,
                           n_occluded=3)
        doc = report.as_dict()
        assert doc["mean_epe"] == 1.0
        assert doc["n_occluded"] == 3
