"""Factorized motion: object deformation, object-to-world warp, camera track.

World motion of an object is split into the object-centric deformation (see
``deform``) composed with a per-frame similarity warp: scaling by ``s_t``
about a fixed anchor plus a translation ``delta_t``.  Camera motion is a
per-frame rigid increment applied to the frame-1 camera, with a learnable
scalar ``beta_t`` on the translation direction because monocular geometry
fixes translation only up to scale.
"""

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .camera import PinholeCamera
from .cloud import GaussianCloud
from .deform import deform

MOTION_MAGIC = b"GS4M"
MOTION_VERSION = 1


@dataclass
class ObjectMotion:
    anchor: np.ndarray    # (3,) warp pivot, the fitted frame-1 centroid
    scales: np.ndarray    # (T,) relative size factors, frame 1 == 1
    deltas: np.ndarray    # (T, 3) world translation offsets, frame 1 == 0

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(3)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(-1)
        self.deltas = np.asarray(self.deltas, dtype=np.float64).reshape(-1, 3)
        if self.deltas.shape[0] != self.scales.shape[0]:
            raise ValueError("scales and deltas disagree on frame count")

    @property
    def n_frames(self):
        return self.scales.shape[0]

    def copy(self):
        return ObjectMotion(self.anchor.copy(), self.scales.copy(), self.deltas.copy())


@dataclass
class CameraTrack:
    base: PinholeCamera       # frame-1 camera
    rotations: np.ndarray     # (T, 3, 3) rigid increments, frame 1 == identity
    translations: np.ndarray  # (T, 3) translation directions, frame 1 == 0
    betas: np.ndarray         # (T,) learnable scale on each translation

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        t = self.rotations.shape[0]
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(t, 3)
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(t)

    @property
    def n_frames(self):
        return self.rotations.shape[0]

    def camera(self, frame):
        """Camera for 1-based ``frame``: the increment composed onto frame 1."""
        i = frame - 1
        if not 0 <= i < self.n_frames:
            raise ValueError(f"frame {frame} outside 1..{self.n_frames}")
        rot = self.rotations[i] @ self.base.rot
        tvec = self.rotations[i] @ self.base.tvec + self.betas[i] * self.translations[i]
        return self.base.with_pose(rot, tvec)

    def cameras(self):
        return [self.camera(t) for t in range(1, self.n_frames + 1)]

    def copy(self):
        return CameraTrack(self.base, self.rotations.copy(),
                           self.translations.copy(), self.betas.copy())

    @classmethod
    def static(cls, camera, n_frames):
        return cls(
            base=camera,
            rotations=np.tile(np.eye(3), (n_frames, 1, 1)),
            translations=np.zeros((n_frames, 3)),
            betas=np.ones(n_frames),
        )

    @classmethod
    def from_poses(cls, cameras):
        """Express absolute per-frame poses as increments over frame 1."""
        base = cameras[0]
        rots = []
        trans = []
        for cam in cameras:
            r = cam.rot @ base.rot.T
            rots.append(r)
            trans.append(cam.tvec - r @ base.tvec)
        return cls(base=base, rotations=np.stack(rots), translations=np.stack(trans),
                   betas=np.ones(len(cameras)))


def object_to_world(cloud, motion, frame):
    """Apply the frame's similarity warp to an object-frame cloud.

    Positions scale about the anchor and shift by the frame delta; log-scales
    grow by ``log s_t`` so splat footprints track the size change.
    """
    i = frame - 1
    if not 0 <= i < motion.n_frames:
        raise ValueError(f"frame {frame} outside 1..{motion.n_frames}")
    k = motion.scales[i]
    if k <= 0.0:
        raise ValueError(f"warp scale must be positive, got {k}")
    # written as k*mu + ((1-k)*anchor + delta) so the frame-1 identity warp
    # (k == 1, delta == 0) passes positions through bit for bit
    return GaussianCloud(
        means=k * cloud.means + ((1.0 - k) * motion.anchor + motion.deltas[i]),
        rotations=cloud.rotations,
        log_scales=cloud.log_scales + np.log(k),
        opacity_logits=cloud.opacity_logits,
        sh=cloud.sh,
        ids=cloud.ids,
    )


def object_to_world_backward(cloud, motion, frame, d_means, d_log_scales):
    """Gradients of ``object_to_world`` outputs back to its inputs.

    Returns ``(d_means_obj, d_log_scales_obj, d_delta, d_scale)``; the object
    rotation, opacity and SH channels pass through untouched.
    """
    i = frame - 1
    k = motion.scales[i]
    d_means = np.asarray(d_means, dtype=np.float64)
    d_means_obj = k * d_means
    d_delta = d_means.sum(axis=0)
    d_scale = float(np.sum(d_means * (cloud.means - motion.anchor)))
    if d_log_scales is not None:
        d_scale += float(np.sum(d_log_scales)) / k
        d_log_scales_obj = np.asarray(d_log_scales, dtype=np.float64).copy()
    else:
        d_log_scales_obj = None
    return d_means_obj, d_log_scales_obj, d_delta, d_scale


def init_warp_from_bbox(bboxes, cameras, working_depth, anchor):
    """Initial warp from per-frame boxes of the object in the video.

    ``bboxes`` is (T, 4) as ``(x0, y0, x1, y1)`` in pixels; ``cameras`` the
    per-frame cameras.  Size ratios against frame 1 give ``s_t``; box centers
    unprojected at the frame-1 working depth give ``delta_t``, so a static
    object under a moving camera initializes to (nearly) zero deltas.
    """
    boxes = np.asarray(bboxes, dtype=np.float64).reshape(-1, 4)
    t = boxes.shape[0]
    if len(cameras) != t:
        raise ValueError("one camera per frame required")
    sizes = np.maximum(boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1])
    if np.any(sizes <= 0.0):
        raise ValueError("degenerate bounding box")
    scales = sizes / sizes[0]
    centers = 0.5 * np.stack([boxes[:, 0] + boxes[:, 2], boxes[:, 1] + boxes[:, 3]], axis=-1)
    deltas = np.empty((t, 3))
    ref = cameras[0].unproject(centers[0], working_depth)
    for i in range(t):
        deltas[i] = cameras[i].unproject(centers[i], working_depth) - ref
    return ObjectMotion(anchor=np.asarray(anchor, dtype=np.float64), scales=scales,
                        deltas=deltas)


def compose_motion(canonical, field, motion, frame):
    """Deform the canonical cloud to ``frame`` and warp it into the world.

    Returns ``(world_cloud, deform_ctx, object_cloud)``; the contexts feed the
    two backward passes.
    """
    object_cloud, ctx = deform(field, canonical, frame)
    world = object_to_world(object_cloud, motion, frame)
    return world, ctx, object_cloud


@dataclass
class SceneComposition:
    """Per-object depth placement relative to a reference object.

    Each object's cloud is pulled toward the reference camera center by its
    factor: ``mu' = c - (c - mu) * k`` with matching log-scale growth, which
    preserves the image rendered from that camera center exactly.
    """

    camera_center: np.ndarray
    factors: dict                    # object id -> k
    reference: object                # id of the object that keeps k == 1

    def __post_init__(self):
        self.camera_center = np.asarray(self.camera_center, dtype=np.float64).reshape(3)

    def factor(self, obj_id):
        if obj_id == self.reference:
            return 1.0
        return float(self.factors[obj_id])


def rescale_toward_center(cloud, center, k):
    """Move a cloud along rays through ``center``, preserving its image there."""
    if k <= 0.0:
        raise ValueError(f"composition factor must be positive, got {k}")
    center = np.asarray(center, dtype=np.float64)
    return GaussianCloud(
        means=center - (center - cloud.means) * k,
        rotations=cloud.rotations,
        log_scales=cloud.log_scales + np.log(k),
        opacity_logits=cloud.opacity_logits,
        sh=cloud.sh,
        ids=cloud.ids,
    )


def compose_scene(clouds, composition):
    """Merge per-object world clouds into one scene cloud.

    ``clouds`` maps object id to its cloud at some frame.  Objects are
    rescaled by their composition factor and concatenated in sorted id order
    with fresh ids.  Returns ``(scene_cloud, spans)`` where ``spans`` maps
    each object id to its index range in the merged cloud.
    """
    order = sorted(clouds)
    if composition.reference not in clouds:
        raise ValueError(f"reference object {composition.reference!r} missing")
    parts = []
    spans = {}
    start = 0
    for obj_id in order:
        k = composition.factor(obj_id)
        part = rescale_toward_center(clouds[obj_id], composition.camera_center, k)
        parts.append(part)
        spans[obj_id] = (start, start + len(part))
        start += len(part)
    merged = GaussianCloud(
        means=np.concatenate([p.means for p in parts]),
        rotations=np.concatenate([p.rotations for p in parts]),
        log_scales=np.concatenate([p.log_scales for p in parts]),
        opacity_logits=np.concatenate([p.opacity_logits for p in parts]),
        sh=np.concatenate([p.sh for p in parts]),
    )
    return merged, spans


def save_motion(path, motion, track, field_ref):
    """Versioned binary bundle: warp, camera track and checkpoint reference."""
    base = track.base
    meta = {
        "n_frames": int(motion.n_frames),
        "field_ref": str(field_ref),
        "base_camera": {
            "fx": base.fx, "fy": base.fy, "cx": base.cx, "cy": base.cy,
            "width": base.width, "height": base.height,
            "near": base.near, "far": base.far,
        },
    }
    if track.n_frames != motion.n_frames:
        raise ValueError("camera track and warp disagree on frame count")
    header = json.dumps(meta).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MOTION_MAGIC)
    buf.write(struct.pack("<I", MOTION_VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for arr in (
        motion.anchor, motion.scales, motion.deltas,
        track.rotations, track.translations, track.betas,
        base.rot, base.tvec,
    ):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_motion(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MOTION_MAGIC:
        raise ValueError(f"{path}: not a motion file (bad magic {blob[:4]!r})")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != MOTION_VERSION:
        raise ValueError(f"{path}: unsupported motion file version {version}")
    hlen = struct.unpack("<I", blob[8:12])[0]
    meta = json.loads(blob[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    t = int(meta["n_frames"])

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).astype(np.float64)

    anchor = take((3,))
    scales = take((t,))
    deltas = take((t, 3))
    rotations = take((t, 3, 3))
    translations = take((t, 3))
    betas = take((t,))
    base_rot = take((3, 3))
    base_tvec = take((3,))
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in motion file")
    cam_meta = meta["base_camera"]
    base = PinholeCamera(
        fx=cam_meta["fx"], fy=cam_meta["fy"], cx=cam_meta["cx"], cy=cam_meta["cy"],
        width=int(cam_meta["width"]), height=int(cam_meta["height"]),
        rot=base_rot, tvec=base_tvec, near=cam_meta["near"], far=cam_meta["far"],
    )
    motion = ObjectMotion(anchor=anchor, scales=scales, deltas=deltas)
    track = CameraTrack(base=base, rotations=rotations, translations=translations,
                        betas=betas)
    return motion, track, meta["field_ref"]


TRACK_VERSION = 1


def save_track(path, track):
    """Camera track as versioned JSON; repr floats round-trip exactly."""
    base = track.base
    payload = {
        "version": TRACK_VERSION,
        "base_camera": {
            "fx": base.fx, "fy": base.fy, "cx": base.cx, "cy": base.cy,
            "width": base.width, "height": base.height,
            "near": base.near, "far": base.far,
            "rot": base.rot.tolist(), "tvec": base.tvec.tolist(),
        },
        "rotations": track.rotations.tolist(),
        "translations": track.translations.tolist(),
        "betas": track.betas.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_track(path):
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("version")
    if version != TRACK_VERSION:
        raise ValueError(f"{path}: unsupported camera track version {version!r}")
    base = PinholeCamera(**payload["base_camera"])
    return CameraTrack(base=base, rotations=np.array(payload["rotations"]),
                       translations=np.array(payload["translations"]),
                       betas=np.array(payload["betas"]))
