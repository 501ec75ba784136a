"""Dataset directories round-trip and crops are geometrically consistent."""

import numpy as np
import pytest

from gs4d.camera import PinholeCamera
from gs4d.dataset import (
    build_object_crops,
    crop_camera,
    crop_flow,
    load_dataset,
    mask_bbox,
    resample_crop,
    validate_dataset,
    window_for_bbox,
    write_dataset,
    CropWindow,
)
from gs4d.formats import read_manifest, write_manifest
from gs4d.oracle import (
    BackgroundSpec,
    CameraSpec,
    ObjectSpec,
    SyntheticSceneSpec,
    generate_scene,
    projected_bbox,
    render_ground_truth,
)
from gs4d.renderer import render


def moving_disk_spec():
    return SyntheticSceneSpec(
        objects=(
            ObjectSpec(shape="disk", n_gaussians=80, motion="rigid",
                       velocity=(0.5, 0.0, 0.0), center=(-0.7, 0.0, 0.0)),
        ),
        camera=CameraSpec(distance=6.0),
        background=BackgroundSpec(n_gaussians=120),
        n_frames=3,
        width=64,
        height=64,
        seed=3,
        tracks_per_object=5,
    )


@pytest.fixture(scope="module")
def bundle():
    return render_ground_truth(generate_scene(moving_disk_spec()),
                               novel_views=())


@pytest.fixture(scope="module")
def dataset_dir(bundle, tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    write_dataset(bundle, root, spec_text="n_frames = 3\n")
    return root


class TestWriteLoad:
    def test_roundtrip(self, bundle, dataset_dir):
        ds = load_dataset(dataset_dir)
        assert ds.n_frames == 3
        assert ds.rgb.shape == (3, 64, 64, 3)
        # PNG stores 8-bit, PFM stores float32
        assert np.array_equal(ds.rgb, np.rint(np.clip(bundle.rgb, 0, 1) * 255) / 255)
        assert np.array_equal(ds.flow_fwd, bundle.flow_fwd.astype(np.float32))
        assert np.array_equal(ds.flow_bwd, bundle.flow_bwd.astype(np.float32))
        name = ds.objects[0]
        assert np.array_equal(ds.masks[name], bundle.masks[name])
        assert np.array_equal(ds.track_ids, bundle.track_ids)
        assert np.array_equal(ds.track_uv, bundle.track_uv)
        assert np.array_equal(ds.track_visible, bundle.track_visible.astype(int))

    def test_cameras_roundtrip_exactly(self, bundle, dataset_dir):
        ds = load_dataset(dataset_dir)
        for loaded, original in zip(ds.cameras, bundle.scene.cameras):
            assert loaded.fx == original.fx
            assert loaded.cx == original.cx
            assert np.array_equal(loaded.rot, original.rot)
            assert np.array_equal(loaded.tvec, original.tvec)
            assert (loaded.near, loaded.far) == (original.near, original.far)

    def test_depth_is_surface_depth(self, bundle, dataset_dir):
        ds = load_dataset(dataset_dir)
        name = ds.objects[0]
        inside = ds.masks[name][0]
        camera = bundle.scene.cameras[0]
        expected = camera.to_camera(np.array([[-0.7, 0.0, 0.0]]))[0, 2]
        assert abs(np.median(ds.depth[0][inside]) - expected) < 0.4
        assert np.all(np.isfinite(ds.depth))

    def test_flow_file_naming(self, dataset_dir):
        assert (dataset_dir / "flow" / "fwd_0001.pfm").exists()
        assert (dataset_dir / "flow" / "fwd_0002.pfm").exists()
        assert (dataset_dir / "flow" / "bwd_0002.pfm").exists()
        assert (dataset_dir / "flow" / "bwd_0003.pfm").exists()
        assert not (dataset_dir / "flow" / "fwd_0003.pfm").exists()

    def test_scene_spec_saved(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        path = ds.scene_spec_path()
        assert path is not None
        with open(path) as fh:
            assert fh.read() == "n_frames = 3\n"

    def test_background_mask_is_complement(self, dataset_dir):
        ds = load_dataset(dataset_dir)
        union = np.zeros_like(ds.background_mask())
        for masks in ds.masks.values():
            union |= masks
        assert not np.any(ds.background_mask() & union)
        assert np.all(ds.background_mask() | union)

    def test_missing_file_detected(self, bundle, tmp_path):
        root = tmp_path / "broken"
        write_dataset(bundle, root)
        victim = root / "frames" / "frame_0002.png"
        victim.unlink()
        with pytest.raises(FileNotFoundError, match="frame_0002.png"):
            validate_dataset(root)

    def test_missing_manifest_detected(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            validate_dataset(tmp_path)

    def test_manifest_missing_key_detected(self, bundle, tmp_path):
        root = tmp_path / "broken"
        write_dataset(bundle, root)
        manifest = read_manifest(root / "manifest.json")
        del manifest["objects"]
        manifest.pop("version")
        write_manifest(root / "manifest.json", manifest)
        with pytest.raises(ValueError, match="objects"):
            validate_dataset(root)


class TestCropGeometry:
    def test_window_for_bbox(self):
        window = window_for_bbox((10.0, 20.0, 30.0, 40.0), occupancy=0.5)
        assert window.size == 40.0
        assert window.x0 == 0.0
        assert window.y0 == 10.0
        with pytest.raises(ValueError, match="degenerate"):
            window_for_bbox((10.0, 20.0, 10.0, 40.0), occupancy=0.5)

    def test_mask_bbox(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:5, 3:7] = True
        assert np.array_equal(mask_bbox(mask), [3.0, 2.0, 7.0, 5.0])
        with pytest.raises(ValueError, match="empty"):
            mask_bbox(np.zeros((4, 4), dtype=bool))

    def test_crop_camera_projection_consistency(self):
        rng = np.random.default_rng(0)
        camera = PinholeCamera(fx=70.0, fy=65.0, cx=32.0, cy=30.0, width=64,
                               height=64, rot=np.eye(3), tvec=np.zeros(3))
        window = CropWindow(x0=7.5, y0=-2.0, size=21.0)
        zoomed = crop_camera(camera, window, out_size=48)
        points = rng.uniform(-1, 1, (50, 3)) + [0.0, 0.0, 5.0]
        from gs4d.camera import project_point
        uv_full, _, _ = project_point(camera, points)
        uv_crop, _, _ = project_point(zoomed, points)
        scale = 48 / 21.0
        expected = (uv_full - [window.x0, window.y0]) * scale
        np.testing.assert_allclose(uv_crop, expected, atol=1e-10)

    def test_crop_camera_render_matches_subwindow(self):
        # an integer-aligned unscaled window is plain pixel extraction, so
        # rendering through the crop camera must reproduce that region
        rng = np.random.default_rng(1)
        from tests.test_renderer import make_camera, random_cloud
        camera = make_camera(size=48)
        cloud = random_cloud(rng, 40)
        full = render(camera, cloud, background=(0.2, 0.1, 0.3)).rgb
        window = CropWindow(x0=8.0, y0=6.0, size=32.0)
        sub_cam = crop_camera(camera, window, out_size=32)
        sub = render(sub_cam, cloud, background=(0.2, 0.1, 0.3)).rgb
        np.testing.assert_allclose(sub, full[6:38, 8:40], atol=1e-10)

    def test_resample_identity_window(self):
        rng = np.random.default_rng(2)
        image = rng.uniform(size=(16, 16, 3))
        out = resample_crop(image, CropWindow(0.0, 0.0, 16.0), 16)
        np.testing.assert_array_equal(out, image)

    def test_resample_affine_image_exact(self):
        # bilinear interpolation reproduces affine images exactly away from
        # the clamped border
        ys, xs = np.mgrid[0:32, 0:32]
        image = 0.2 + 0.01 * (xs + 0.5) + 0.02 * (ys + 0.5)
        window = CropWindow(x0=4.0, y0=6.0, size=20.0)
        out = resample_crop(image, window, 10)
        step = 20.0 / 10
        sample_x = window.x0 + (np.arange(10) + 0.5) * step
        sample_y = window.y0 + (np.arange(10) + 0.5) * step
        expected = 0.2 + 0.01 * sample_x[None, :] + 0.02 * sample_y[:, None]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_crop_flow_constant_field(self):
        flow = np.zeros((32, 32, 2))
        flow[..., 0] = 3.0
        flow[..., 1] = -2.0
        src = CropWindow(0.0, 0.0, 32.0)
        dst = CropWindow(4.0, 0.0, 32.0)
        out = crop_flow(flow, src, dst, out_size=16)
        # full-frame displacement (3, -2), window shifted (4, 0), scale 1/2
        np.testing.assert_allclose(out[..., 0], -0.5, atol=1e-12)
        np.testing.assert_allclose(out[..., 1], -1.0, atol=1e-12)

    def test_crop_flow_zero_identity(self):
        flow = np.zeros((16, 16, 2))
        window = CropWindow(2.0, 2.0, 10.0)
        out = crop_flow(flow, window, window, out_size=8)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)


@pytest.fixture(scope="module")
def crops(dataset_dir):
    return build_object_crops(load_dataset(dataset_dir), "obj0",
                              occupancy=0.65, out_size=64)


class TestObjectCrops:
    def test_occupancy_and_centering(self, crops):
        for t in range(3):
            bbox = mask_bbox(crops.masks[t])
            extent = max(bbox[2] - bbox[0], bbox[3] - bbox[1])
            assert abs(extent - 0.65 * 64) < 4.0
            center = 0.5 * (bbox[:2] + bbox[2:])
            np.testing.assert_allclose(center, 32.0, atol=3.0)

    def test_crop_camera_sees_the_object(self, crops, bundle):
        # the analytic footprint through the crop camera lands centred and
        # at the configured occupancy
        for t in range(3):
            cloud = bundle.scene.objects[0].cloud_at(t)
            bbox = projected_bbox(cloud, crops.cameras[t])
            center = 0.5 * (bbox[:2] + bbox[2:])
            np.testing.assert_allclose(center, 32.0, atol=3.0)

    def test_tracking_crop_removes_gross_motion(self, crops, dataset_dir):
        # the disk moves several pixels per frame in the full frame, but the
        # bbox-tracking crop cancels the translation almost entirely
        ds = load_dataset(dataset_dir)
        full_mask = ds.masks["obj0"][0]
        full_motion = np.median(np.abs(ds.flow_fwd[0][full_mask][:, 0]))
        assert full_motion > 4.0
        flow, conf = crops.flows[0]
        residual = np.abs(flow[conf])
        assert np.percentile(residual, 95) < 2.0

    def test_working_depth(self, crops):
        # camera sits 6 units back along z, so the disk's z-depth is 6
        assert abs(crops.working_depth - 6.0) < 0.4

    def test_frames_layout(self, crops):
        frames = crops.frames()
        assert len(frames) == 3
        cam, image, mask = frames[1]
        assert cam.width == 64
        assert image.shape == (64, 64, 3)
        assert mask.dtype == bool

    def test_unknown_object_rejected(self, dataset_dir):
        with pytest.raises(ValueError, match="no object"):
            build_object_crops(load_dataset(dataset_dir), "ghost")
