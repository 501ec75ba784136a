"""On-disk datasets and object-centric crop construction.

A dataset directory is the exchange point between ground-truth generation (or
an external predictor) and the fitting pipeline:

    manifest.json            versioned index: sizes, object ids, cameras, files
    frames/frame_0001.png    reference-view RGB, frames numbered from 1
    depth/depth_0001.pfm     surface depth along the camera ray, far where empty
    flow/fwd_0001.pfm        optical flow frame t -> t+1 (3-channel, zero pad)
    flow/bwd_0002.pfm        optical flow frame t -> t-1
    masks/<object>/mask_0001.png
    tracks.csv               persistent 2D point tracks
    scene.cfg                scene spec, present only for generated datasets

Anything that writes this layout can drive the pipeline, so externally
predicted masks, flow and depth drop in without engine changes.

Crops: each object is re-framed per frame into a square window centred on its
mask so it occupies roughly a configured fraction of the crop, then resampled
bilinearly.  The matching crop cameras make the windows exact pinhole views,
which is what the motion stage trains against.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import PinholeCamera
from .formats import (
    read_manifest,
    read_pfm,
    read_tracks,
    load_flow,
    load_png,
    save_flow,
    save_png,
    write_manifest,
    write_pfm,
    write_tracks,
)
from .oracle import surface_depth

FRAME_NAME = "frames/frame_{:04d}.png"
DEPTH_NAME = "depth/depth_{:04d}.pfm"
FLOW_FWD_NAME = "flow/fwd_{:04d}.pfm"
FLOW_BWD_NAME = "flow/bwd_{:04d}.pfm"
MASK_NAME = "masks/{}/mask_{:04d}.png"
TRACKS_NAME = "tracks.csv"
MANIFEST_NAME = "manifest.json"
SCENE_SPEC_NAME = "scene.cfg"


def _camera_dict(camera):
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "near": camera.near, "far": camera.far,
        "rot": camera.rot.tolist(), "tvec": camera.tvec.tolist(),
    }


def _camera_from_dict(entry):
    return PinholeCamera(**entry)


def write_dataset(bundle, root, spec_text=None):
    """Write a ground-truth bundle as a dataset directory; returns the manifest."""
    root = os.fspath(root)
    scene = bundle.scene
    n_frames = bundle.n_frames
    height, width = bundle.rgb.shape[1:3]
    for sub in ("frames", "depth", "flow"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    frames = []
    depths = []
    for t in range(n_frames):
        frame_rel = FRAME_NAME.format(t + 1)
        depth_rel = DEPTH_NAME.format(t + 1)
        save_png(os.path.join(root, frame_rel), bundle.rgb[t])
        far = scene.cameras[t].far
        surf = surface_depth(bundle.depth[t], bundle.alpha[t], far)
        write_pfm(os.path.join(root, depth_rel),
                  np.where(np.isfinite(surf), surf, far))
        frames.append(frame_rel)
        depths.append(depth_rel)

    flows_fwd = []
    flows_bwd = []
    for t in range(n_frames - 1):
        fwd_rel = FLOW_FWD_NAME.format(t + 1)
        bwd_rel = FLOW_BWD_NAME.format(t + 2)
        save_flow(os.path.join(root, fwd_rel), bundle.flow_fwd[t])
        save_flow(os.path.join(root, bwd_rel), bundle.flow_bwd[t])
        flows_fwd.append(fwd_rel)
        flows_bwd.append(bwd_rel)

    mask_files = {}
    for name, masks in bundle.masks.items():
        os.makedirs(os.path.join(root, "masks", name), exist_ok=True)
        rels = []
        for t in range(n_frames):
            rel = MASK_NAME.format(name, t + 1)
            save_png(os.path.join(root, rel), masks[t].astype(np.float64))
            rels.append(rel)
        mask_files[name] = rels

    write_tracks(os.path.join(root, TRACKS_NAME), bundle.track_ids,
                 bundle.track_uv, bundle.track_visible)
    if spec_text is not None:
        with open(os.path.join(root, SCENE_SPEC_NAME), "w") as fh:
            fh.write(spec_text)

    manifest = {
        "n_frames": n_frames,
        "width": width,
        "height": height,
        "objects": sorted(bundle.masks),
        "camera": {
            "fx": scene.cameras[0].fx, "fy": scene.cameras[0].fy,
            "cx": scene.cameras[0].cx, "cy": scene.cameras[0].cy,
            "width": width, "height": height,
            "near": scene.cameras[0].near, "far": scene.cameras[0].far,
            "poses": [{"rot": cam.rot.tolist(), "tvec": cam.tvec.tolist()}
                      for cam in scene.cameras],
        },
        "files": {
            "frames": frames,
            "depth": depths,
            "flow_fwd": flows_fwd,
            "flow_bwd": flows_bwd,
            "masks": mask_files,
            "tracks": TRACKS_NAME,
        },
        "scene_spec": SCENE_SPEC_NAME if spec_text is not None else None,
    }
    write_manifest(os.path.join(root, MANIFEST_NAME), manifest)
    return manifest


def validate_dataset(root):
    """Check the manifest and that every referenced file exists."""
    root = os.fspath(root)
    manifest_path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = read_manifest(manifest_path)
    for key in ("n_frames", "width", "height", "objects", "camera", "files"):
        if key not in manifest:
            raise ValueError(f"{manifest_path}: manifest is missing {key!r}")
    files = manifest["files"]
    n_frames = manifest["n_frames"]
    referenced = list(files["frames"]) + list(files["depth"])
    referenced += list(files["flow_fwd"]) + list(files["flow_bwd"])
    for name in manifest["objects"]:
        if name not in files["masks"]:
            raise ValueError(f"{manifest_path}: no mask files for object {name!r}")
        referenced += list(files["masks"][name])
    referenced.append(files["tracks"])
    if manifest.get("scene_spec"):
        referenced.append(manifest["scene_spec"])
    for rel in referenced:
        if not os.path.exists(os.path.join(root, rel)):
            raise FileNotFoundError(f"dataset file missing: {os.path.join(root, rel)}")
    for key, expected in (("frames", n_frames), ("depth", n_frames),
                          ("flow_fwd", n_frames - 1), ("flow_bwd", n_frames - 1)):
        if len(files[key]) != expected:
            raise ValueError(f"{manifest_path}: expected {expected} {key} files, "
                             f"got {len(files[key])}")
    if len(manifest["camera"]["poses"]) != n_frames:
        raise ValueError(f"{manifest_path}: camera poses must cover every frame")
    return manifest


@dataclass
class Dataset:
    root: str
    manifest: dict
    rgb: np.ndarray        # (T, H, W, 3)
    depth: np.ndarray      # (T, H, W) surface depth, far plane where empty
    flow_fwd: np.ndarray   # (T-1, H, W, 2)
    flow_bwd: np.ndarray   # (T-1, H, W, 2)
    masks: dict            # name -> (T, H, W) bool
    track_ids: np.ndarray
    track_uv: np.ndarray
    track_visible: np.ndarray
    cameras: list          # per-frame PinholeCamera

    @property
    def n_frames(self):
        return self.rgb.shape[0]

    @property
    def objects(self):
        return list(self.manifest["objects"])

    def scene_spec_path(self):
        rel = self.manifest.get("scene_spec")
        return os.path.join(self.root, rel) if rel else None

    def background_mask(self):
        """Pixels claimed by no object, per frame."""
        anything = np.zeros(self.rgb.shape[:3], dtype=bool)
        for masks in self.masks.values():
            anything |= masks
        return ~anything


def load_dataset(root):
    root = os.fspath(root)
    manifest = validate_dataset(root)
    files = manifest["files"]
    rgb = np.stack([load_png(os.path.join(root, rel)) for rel in files["frames"]])
    depth = np.stack([read_pfm(os.path.join(root, rel)) for rel in files["depth"]])
    shape = (0,) + rgb.shape[1:3] + (2,)
    flow_fwd = (np.stack([load_flow(os.path.join(root, rel)) for rel in files["flow_fwd"]])
                if files["flow_fwd"] else np.zeros(shape))
    flow_bwd = (np.stack([load_flow(os.path.join(root, rel)) for rel in files["flow_bwd"]])
                if files["flow_bwd"] else np.zeros(shape))
    masks = {
        name: np.stack([load_png(os.path.join(root, rel)) >= 0.5 for rel in rels])
        for name, rels in files["masks"].items()
    }
    ids, uv, visible = read_tracks(os.path.join(root, files["tracks"]))
    cam = dict(manifest["camera"])
    poses = cam.pop("poses")
    cameras = [PinholeCamera(**cam, rot=pose["rot"], tvec=pose["tvec"])
               for pose in poses]
    return Dataset(root=root, manifest=manifest, rgb=rgb, depth=depth,
                   flow_fwd=flow_fwd, flow_bwd=flow_bwd, masks=masks,
                   track_ids=ids, track_uv=uv, track_visible=visible,
                   cameras=cameras)


# --------------------------------------------------------------------------
# object-centric crops


@dataclass
class CropWindow:
    """Square full-frame pixel window: ``[x0, x0+size) x [y0, y0+size)``."""
    x0: float
    y0: float
    size: float

    def __post_init__(self):
        if self.size <= 0.0:
            raise ValueError("crop window must have positive size")


def mask_bbox(mask):
    """Float pixel bounds (x0, y0, x1, y1) of a boolean mask."""
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise ValueError("mask is empty, no pixels to crop")
    return np.array([xs.min(), ys.min(), xs.max() + 1.0, ys.max() + 1.0])


def window_for_bbox(bbox, occupancy):
    """Square window centred on the box, sized so it fills ``occupancy``."""
    x0, y0, x1, y1 = (float(b) for b in bbox)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("degenerate bounding box")
    if not 0.0 < occupancy <= 1.0:
        raise ValueError("crop occupancy must lie in (0, 1]")
    size = max(x1 - x0, y1 - y0) / occupancy
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return CropWindow(x0=cx - 0.5 * size, y0=cy - 0.5 * size, size=size)


def crop_camera(camera, window, out_size):
    """The pinhole camera whose full image is exactly the resampled window."""
    s = out_size / window.size
    return PinholeCamera(
        fx=camera.fx * s, fy=camera.fy * s,
        cx=(camera.cx - window.x0) * s, cy=(camera.cy - window.y0) * s,
        width=out_size, height=out_size,
        rot=camera.rot, tvec=camera.tvec,
        near=camera.near, far=camera.far,
    )


def _crop_grid(window, out_size):
    """Full-frame sample coordinates of every crop pixel, shape (2, S, S)."""
    step = window.size / out_size
    xs = window.x0 + (np.arange(out_size) + 0.5) * step
    ys = window.y0 + (np.arange(out_size) + 0.5) * step
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy])


def _sample_bilinear(image, coords_xy):
    """Sample at continuous pixel coords (2, ...) with edge clamping."""
    # array index i holds the sample at continuous coordinate i + 0.5
    idx = [coords_xy[1] - 0.5, coords_xy[0] - 0.5]
    if image.ndim == 2:
        return ndimage.map_coordinates(image, idx, order=1, mode="nearest")
    channels = [ndimage.map_coordinates(image[..., c], idx, order=1, mode="nearest")
                for c in range(image.shape[-1])]
    return np.stack(channels, axis=-1)


def resample_crop(image, window, out_size):
    """Bilinear resample of a full-frame image into the crop window."""
    return _sample_bilinear(np.asarray(image, dtype=np.float64),
                            _crop_grid(window, out_size))


def crop_flow(flow, window_src, window_dst, out_size):
    """Re-express full-frame flow between two per-frame crop windows.

    A crop pixel maps to the full frame, follows the flow there, and lands in
    the destination frame's crop coordinates; the returned flow is the crop
    displacement.  The windows differ because each frame is cropped around its
    own bounding box.
    """
    grid = _crop_grid(window_src, out_size)
    sampled = _sample_bilinear(np.asarray(flow, dtype=np.float64), grid)
    target_full_x = grid[0] + sampled[..., 0]
    target_full_y = grid[1] + sampled[..., 1]
    s_dst = out_size / window_dst.size
    centers = np.arange(out_size) + 0.5
    gx, gy = np.meshgrid(centers, centers)
    return np.stack([
        (target_full_x - window_dst.x0) * s_dst - gx,
        (target_full_y - window_dst.y0) * s_dst - gy,
    ], axis=-1)


@dataclass
class ObjectCrops:
    """Everything the motion stage needs for one object."""
    name: str
    out_size: int
    occupancy: float
    windows: list        # per-frame CropWindow
    cameras: list        # per-frame crop PinholeCamera
    images: np.ndarray   # (T, S, S, 3)
    masks: np.ndarray    # (T, S, S) bool
    flows: list          # (T-1) entries of (flow (S, S, 2), confidence (S, S) bool)
    bboxes: np.ndarray   # (T, 4) full-frame mask bounds
    working_depth: float  # median frame-1 surface depth inside the mask

    def frames(self):
        """(camera, image, mask) per frame, the fit input convention."""
        return [(self.cameras[t], self.images[t], self.masks[t])
                for t in range(len(self.cameras))]


def build_object_crops(dataset, name, occupancy=0.65, out_size=128):
    """Per-frame square crops of one object from a loaded dataset."""
    if name not in dataset.masks:
        raise ValueError(f"dataset has no object {name!r}")
    masks_full = dataset.masks[name]
    n_frames = dataset.n_frames
    bboxes = np.stack([mask_bbox(masks_full[t]) for t in range(n_frames)])
    windows = [window_for_bbox(bboxes[t], occupancy) for t in range(n_frames)]
    cameras = [crop_camera(dataset.cameras[t], windows[t], out_size)
               for t in range(n_frames)]
    images = np.stack([resample_crop(dataset.rgb[t], windows[t], out_size)
                       for t in range(n_frames)])
    masks = np.stack([
        resample_crop(masks_full[t].astype(np.float64), windows[t], out_size) >= 0.5
        for t in range(n_frames)
    ])
    flows = []
    for t in range(n_frames - 1):
        flow = crop_flow(dataset.flow_fwd[t], windows[t], windows[t + 1], out_size)
        # erode one pixel so bilinear mixing at the silhouette cannot leak
        # background flow into the supervision
        conf = ndimage.binary_erosion(masks[t])
        flows.append((flow, conf))
    first = masks_full[0]
    working_depth = float(np.median(dataset.depth[0][first]))
    return ObjectCrops(name=name, out_size=out_size, occupancy=occupancy,
                       windows=windows, cameras=cameras, images=images,
                       masks=masks, flows=flows, bboxes=bboxes,
                       working_depth=working_depth)
