"""Synthetic ground truth: Gaussian scenes with closed-form motion and cameras.

Stands in for real videos and for the perception models that would annotate
them.  Every scene is a set of Gaussian objects whose per-frame trajectories
follow analytic motion programs, so each supervision signal comes with an
exact answer: RGB, depth and alpha straight from the renderer; flow by
unprojecting the visible surface, applying the owner's motion map and
reprojecting; tracks as projected Gaussian centers with occlusion decided by
a per-object depth test at the track pixel.

Motion programs:

* ``static``: nothing moves.
* ``rigid``: constant world velocity plus an optional spin about the object
  center; every point follows ``mu_1 + t * v`` exactly.
* ``articulated``: two rigid halves (offset along the split axis so they do
  not touch) joined at the object center; one half swings about the hinge
  axis by a fixed angle per frame.
* ``bending``: a sinusoidal displacement field along one axis, modulated over
  time; the coordinate the field depends on is unchanged by it, so the map
  inverts in closed form.

Camera programs: ``static``, ``orbit`` (azimuth/elevation sweep about the
target) and ``translate`` (constant world velocity, fixed orientation).

Determinism: all sampling happens in ``generate_scene`` under a single seeded
generator in a fixed order, and ``render_ground_truth`` is a pure function of
the scene, so the same spec and seed reproduce every bundle array bit for bit.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sh as shlib
from .camera import PinholeCamera, orbit_camera, project_point, projection_jacobian
from .cloud import GaussianCloud, concat_clouds, default_cloud
from .formats import write_tracks
from .geometry import build_covariance, quat_multiply, quat_to_rotmat
from .motion import CameraTrack, ObjectMotion
from .renderer import LOWPASS, render

OBJECT_SHAPES = ("blob", "box", "disk")
MOTION_PROGRAMS = ("static", "rigid", "articulated", "bending")
COLOR_SCHEMES = ("random", "uniform", "gradient")
CAMERA_PROGRAMS = ("static", "orbit", "translate")

# (elevation, azimuth) offsets in degrees used for held-out evaluation views
EVAL_NOVEL_VIEWS = ((0.0, 45.0), (0.0, -45.0), (45.0, 0.0), (-45.0, 0.0))

# a unit must reach this compositing alpha at a pixel to own or occlude it
OWNER_ALPHA = 0.5

BACKGROUND_NAME = "background"


def _unit(v, name):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError(f"{name} must be a nonzero vector")
    return v / norm


def _axis_angle_quat(axis, angle):
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


# --------------------------------------------------------------------------
# motion programs: closed-form maps from frame-1 positions to frame t and back


class _StaticMotion:
    def map(self, points, t):
        return np.array(points, dtype=np.float64)

    def unmap(self, points, t):
        return np.array(points, dtype=np.float64)

    def rotor(self, points, t):
        quats = np.zeros((len(points), 4))
        quats[:, 0] = 1.0
        return quats


class _RigidMotion:
    def __init__(self, center, velocity, spin_axis, spin_deg):
        self.center = np.asarray(center, dtype=np.float64)
        self.velocity = np.asarray(velocity, dtype=np.float64)
        self.spin_axis = _unit(spin_axis, "spin axis")
        self.spin_rate = math.radians(spin_deg)

    def _quat(self, t):
        return _axis_angle_quat(self.spin_axis, self.spin_rate * t)

    def map(self, points, t):
        if self.spin_rate * t == 0.0:
            return points + self.velocity * t
        rot = quat_to_rotmat(self._quat(t))
        return (points - self.center) @ rot.T + self.center + self.velocity * t

    def unmap(self, points, t):
        if self.spin_rate * t == 0.0:
            return points - self.velocity * t
        rot = quat_to_rotmat(self._quat(t))
        return (points - self.velocity * t - self.center) @ rot + self.center

    def rotor(self, points, t):
        return np.tile(self._quat(t), (len(points), 1))


class _ArticulatedMotion:
    """Two rigid halves; the positive side of the split axis swings about the
    hinge.  Inversion assigns a point to the swinging half exactly when the
    candidate preimage lands on the positive side, which is unambiguous as
    long as the halves keep clear of the split plane (the generator offsets
    them for that reason)."""

    def __init__(self, center, velocity, hinge_axis, split_axis, swing_deg):
        self.center = np.asarray(center, dtype=np.float64)
        self.velocity = np.asarray(velocity, dtype=np.float64)
        self.hinge_axis = _unit(hinge_axis, "hinge axis")
        self.split_axis = _unit(split_axis, "split axis")
        self.swing_rate = math.radians(swing_deg)

    def _quat(self, t):
        return _axis_angle_quat(self.hinge_axis, self.swing_rate * t)

    def _side(self, points):
        return (points - self.center) @ self.split_axis >= 0.0

    def map(self, points, t):
        if self.swing_rate * t == 0.0:
            return points + self.velocity * t
        rot = quat_to_rotmat(self._quat(t))
        swung = (points - self.center) @ rot.T + self.center
        out = np.where(self._side(points)[:, None], swung, points)
        return out + self.velocity * t

    def unmap(self, points, t):
        if self.swing_rate * t == 0.0:
            return points - self.velocity * t
        rot = quat_to_rotmat(self._quat(t))
        settled = points - self.velocity * t
        unswung = (settled - self.center) @ rot + self.center
        return np.where(self._side(settled)[:, None], unswung, settled)

    def rotor(self, points, t):
        quats = np.zeros((len(points), 4))
        quats[:, 0] = 1.0
        quats[self._side(points)] = self._quat(t)
        return quats


class _BendingMotion:
    """Displacement ``amplitude * sin(rate * t) * sin(k * s)`` along the
    displacement axis, where ``s`` is the coordinate along the bend axis.
    The two axes are orthogonal, so ``s`` survives the map and the inverse
    just subtracts the displacement back off."""

    def __init__(self, center, velocity, along_axis, disp_axis, amplitude,
                 wavenumber, rate):
        self.center = np.asarray(center, dtype=np.float64)
        self.velocity = np.asarray(velocity, dtype=np.float64)
        self.along = _unit(along_axis, "bend axis")
        self.disp = _unit(disp_axis, "displacement axis")
        if abs(self.along @ self.disp) > 1e-9:
            raise ValueError("bend axis and displacement axis must be orthogonal")
        self.amplitude = float(amplitude)
        self.wavenumber = float(wavenumber)
        self.rate = float(rate)

    def _offset(self, points, t):
        s = (points - self.center) @ self.along
        return self.amplitude * math.sin(self.rate * t) * np.sin(self.wavenumber * s)

    def map(self, points, t):
        return points + self._offset(points, t)[:, None] * self.disp + self.velocity * t

    def unmap(self, points, t):
        settled = points - self.velocity * t
        return settled - self._offset(settled, t)[:, None] * self.disp

    def rotor(self, points, t):
        quats = np.zeros((len(points), 4))
        quats[:, 0] = 1.0
        return quats


# --------------------------------------------------------------------------
# scene specification


@dataclass
class ObjectSpec:
    """One Gaussian object: its shape, appearance and motion program."""

    n_gaussians: int = 150
    shape: str = "blob"
    extent: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    colors: str = "random"
    base_color: tuple = (0.75, 0.35, 0.25)
    motion: str = "static"
    velocity: tuple = (0.0, 0.0, 0.0)   # world units per frame
    spin_axis: tuple = (0.0, 1.0, 0.0)
    spin_deg: float = 0.0               # degrees per frame, rigid only
    hinge_axis: tuple = (0.0, 1.0, 0.0)
    split_axis: tuple = (1.0, 0.0, 0.0)
    swing_deg: float = 5.0              # degrees per frame, articulated only
    bend_amplitude: float = 0.2         # world units, bending only
    bend_cycles: float = 1.0            # sine periods across the extent
    bend_rate: float = 0.35             # temporal phase, radians per frame
    splat_scale: Optional[float] = None
    opacity: float = 0.95
    sh_degree: int = 0

    def __post_init__(self):
        if self.shape not in OBJECT_SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}, expected one of {OBJECT_SHAPES}")
        if self.motion not in MOTION_PROGRAMS:
            raise ValueError(
                f"unknown motion program {self.motion!r}, expected one of {MOTION_PROGRAMS}"
            )
        if self.colors not in COLOR_SCHEMES:
            raise ValueError(f"unknown color scheme {self.colors!r}, expected one of {COLOR_SCHEMES}")
        if self.n_gaussians < 1:
            raise ValueError("an object needs at least one Gaussian")
        if self.extent <= 0.0:
            raise ValueError("object extent must be positive")
        if not 0.0 < self.opacity < 1.0:
            raise ValueError("opacity must lie strictly inside (0, 1)")


@dataclass
class BackgroundSpec:
    """A static textured wall behind the scene, perpendicular to the frame-1
    view axis.  It gives camera motion something to constrain."""

    n_gaussians: int = 300
    distance: float = 4.0   # beyond the camera target along +z
    extent: float = 14.0
    colors: str = "random"
    base_color: tuple = (0.4, 0.45, 0.5)
    splat_scale: Optional[float] = None

    def __post_init__(self):
        if self.colors not in COLOR_SCHEMES:
            raise ValueError(f"unknown color scheme {self.colors!r}, expected one of {COLOR_SCHEMES}")
        if self.n_gaussians < 1 or self.extent <= 0.0:
            raise ValueError("background needs at least one Gaussian and positive extent")


@dataclass
class CameraSpec:
    program: str = "static"
    distance: float = 6.0
    azimuth: float = 0.0        # degrees, frame 1
    elevation: float = 0.0
    target: tuple = (0.0, 0.0, 0.0)
    azimuth_rate: float = 0.0   # degrees per frame, orbit only
    elevation_rate: float = 0.0
    velocity: tuple = (0.0, 0.0, 0.0)  # world units per frame, translate only
    fov_deg: float = 50.0

    def __post_init__(self):
        if self.program not in CAMERA_PROGRAMS:
            raise ValueError(
                f"unknown camera program {self.program!r}, expected one of {CAMERA_PROGRAMS}"
            )
        if self.distance <= 0.0:
            raise ValueError("camera distance must be positive")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("field of view must lie inside (0, 180) degrees")


@dataclass
class SyntheticSceneSpec:
    """Complete recipe for a ground-truth scene; same spec + seed means a
    bit-identical bundle."""

    objects: tuple = (ObjectSpec(),)
    camera: CameraSpec = field(default_factory=CameraSpec)
    background: Optional[BackgroundSpec] = None
    background_color: tuple = (0.0, 0.0, 0.0)
    n_frames: int = 8
    width: int = 128
    height: int = 128
    seed: int = 0
    tracks_per_object: int = 16

    def __post_init__(self):
        self.objects = tuple(self.objects)
        if not self.objects:
            raise ValueError("a scene needs at least one object")
        if self.n_frames < 1:
            raise ValueError("a scene needs at least one frame")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if self.tracks_per_object < 0:
            raise ValueError("track count cannot be negative")


# --------------------------------------------------------------------------
# scene generation


def _build_program(spec):
    center = np.asarray(spec.center, dtype=np.float64)
    if spec.motion == "static" and not np.any(np.asarray(spec.velocity)):
        return _StaticMotion()
    if spec.motion == "static":
        raise ValueError("static motion cannot carry a velocity")
    if spec.motion == "rigid":
        return _RigidMotion(center, spec.velocity, spec.spin_axis, spec.spin_deg)
    if spec.motion == "articulated":
        return _ArticulatedMotion(center, spec.velocity, spec.hinge_axis,
                                  spec.split_axis, spec.swing_deg)
    return _BendingMotion(
        center, spec.velocity, spec.split_axis,
        _orthogonal_axis(spec.split_axis), spec.bend_amplitude,
        2.0 * math.pi * spec.bend_cycles / spec.extent, spec.bend_rate,
    )


def _orthogonal_axis(axis):
    axis = _unit(axis, "split axis")
    trial = np.array([0.0, 1.0, 0.0])
    if abs(axis @ trial) > 0.9:
        trial = np.array([0.0, 0.0, 1.0])
    ortho = trial - (trial @ axis) * axis
    return ortho / np.linalg.norm(ortho)


def _sample_shape(rng, spec):
    n, half = spec.n_gaussians, 0.5 * spec.extent
    if spec.shape == "blob":
        pts = rng.normal(0.0, half / 2.0, (n, 3))
        norm = np.linalg.norm(pts, axis=1, keepdims=True)
        pts *= np.minimum(1.0, half / np.maximum(norm, 1e-12))
    elif spec.shape == "box":
        pts = rng.uniform(-half, half, (n, 3))
    else:  # disk facing the default camera
        radius = half * np.sqrt(rng.uniform(0.0, 1.0, n))
        angle = rng.uniform(0.0, 2.0 * math.pi, n)
        pts = np.stack([radius * np.cos(angle), radius * np.sin(angle),
                        rng.normal(0.0, spec.extent / 40.0, n)], axis=-1)
    if spec.motion == "articulated":
        # keep the rigid halves clear of the split plane so the motion map
        # inverts without ambiguity
        split = _unit(spec.split_axis, "split axis")
        along = pts @ split
        shift = 0.25 * spec.extent
        pts = pts + np.where(along >= 0.0, shift, -shift)[:, None] * split
    return pts + np.asarray(spec.center, dtype=np.float64)


def _sample_colors(rng, scheme, base_color, points, center, extent, n):
    if scheme == "random":
        return rng.uniform(0.15, 0.9, (n, 3))
    if scheme == "uniform":
        return np.tile(np.asarray(base_color, dtype=np.float64), (n, 1))
    local = (points - np.asarray(center, dtype=np.float64)) / max(extent, 1e-12)
    return np.clip(0.55 + 0.8 * local, 0.1, 0.95)


def _auto_splat_scale(spec):
    if spec.splat_scale is not None:
        return spec.splat_scale
    n = spec.n_gaussians
    if spec.shape == "disk":
        return 0.5 * spec.extent / math.sqrt(n)
    return 0.5 * spec.extent / n ** (1.0 / 3.0)


def _build_object_cloud(rng, spec):
    points = _sample_shape(rng, spec)
    colors = _sample_colors(rng, spec.colors, spec.base_color, points,
                            spec.center, spec.extent, spec.n_gaussians)
    cloud = default_cloud(points, scale=_auto_splat_scale(spec),
                          opacity=spec.opacity, sh_degree=spec.sh_degree)
    cloud.sh[:, 0, :] = (colors - 0.5) / shlib.C0
    return cloud


def _build_background_cloud(rng, spec, camera_spec):
    target = np.asarray(camera_spec.target, dtype=np.float64)
    half = 0.5 * spec.extent
    xy = rng.uniform(-half, half, (spec.n_gaussians, 2))
    z = rng.normal(0.0, spec.extent / 200.0, spec.n_gaussians)
    points = target + np.stack([xy[:, 0], xy[:, 1], z + spec.distance], axis=-1)
    colors = _sample_colors(rng, spec.colors, spec.base_color, points, target,
                            spec.extent, spec.n_gaussians)
    scale = spec.splat_scale
    if scale is None:
        scale = 0.7 * spec.extent / math.sqrt(spec.n_gaussians)
    cloud = default_cloud(points, scale=scale, opacity=0.98, sh_degree=0)
    cloud.sh[:, 0, :] = (colors - 0.5) / shlib.C0
    return cloud


def _build_cameras(spec):
    cam = spec.camera
    intrinsics = {
        "fx": 0.5 * spec.width / math.tan(0.5 * math.radians(cam.fov_deg)),
        "fy": 0.5 * spec.width / math.tan(0.5 * math.radians(cam.fov_deg)),
        "cx": spec.width / 2.0,
        "cy": spec.height / 2.0,
        "width": spec.width,
        "height": spec.height,
    }
    base = orbit_camera(cam.target, cam.distance, cam.azimuth, cam.elevation,
                        **intrinsics)
    if cam.program == "static":
        return [base] * spec.n_frames, intrinsics
    cameras = []
    if cam.program == "orbit":
        for t in range(spec.n_frames):
            cameras.append(orbit_camera(
                cam.target, cam.distance,
                cam.azimuth + cam.azimuth_rate * t,
                cam.elevation + cam.elevation_rate * t,
                **intrinsics,
            ))
        return cameras, intrinsics
    velocity = np.asarray(cam.velocity, dtype=np.float64)
    for t in range(spec.n_frames):
        center = base.center + velocity * t
        cameras.append(base.with_pose(base.rot, -base.rot @ center))
    return cameras, intrinsics


@dataclass
class SceneObject:
    name: str
    spec: ObjectSpec
    canonical: GaussianCloud    # frame-1 world-space splats
    program: object
    track_index: np.ndarray     # subset of splats exported as GT tracks

    def cloud_at(self, t):
        """World-space splats at 0-based frame index ``t``."""
        rotor = self.program.rotor(self.canonical.means, t)
        return GaussianCloud(
            means=self.program.map(self.canonical.means, t),
            rotations=quat_multiply(rotor, self.canonical.rotations),
            log_scales=self.canonical.log_scales,
            opacity_logits=self.canonical.opacity_logits,
            sh=self.canonical.sh,
            ids=self.canonical.ids,
        )


@dataclass
class Scene:
    spec: SyntheticSceneSpec
    objects: list
    background: Optional[GaussianCloud]
    cameras: list
    intrinsics: dict

    @property
    def n_frames(self):
        return self.spec.n_frames

    def frame_cloud(self, t):
        """All scene splats at 0-based frame ``t``, merged with fresh ids."""
        clouds = [obj.cloud_at(t) for obj in self.objects]
        if self.background is not None:
            clouds.append(self.background)
        if len(clouds) == 1:
            return clouds[0]
        return concat_clouds(clouds, reassign_ids=True)


def generate_scene(spec):
    """Build the deterministic scene a spec describes.

    All random draws (splat positions, colors, track subsets) consume a
    single generator seeded from the spec in a fixed order, which is what
    makes the seed-repeat contract hold.
    """
    rng = np.random.default_rng(spec.seed)
    objects = []
    for i, obj_spec in enumerate(spec.objects):
        cloud = _build_object_cloud(rng, obj_spec)
        n_tracks = min(spec.tracks_per_object, obj_spec.n_gaussians)
        track_index = np.sort(rng.choice(obj_spec.n_gaussians, size=n_tracks,
                                         replace=False))
        objects.append(SceneObject(
            name=f"obj{i}",
            spec=obj_spec,
            canonical=cloud,
            program=_build_program(obj_spec),
            track_index=track_index,
        ))
    background = None
    if spec.background is not None:
        background = _build_background_cloud(rng, spec.background, spec.camera)
    cameras, intrinsics = _build_cameras(spec)
    return Scene(spec=spec, objects=objects, background=background,
                 cameras=cameras, intrinsics=intrinsics)


# --------------------------------------------------------------------------
# ground-truth rendering


@dataclass
class NovelView:
    elevation: float
    azimuth: float
    camera: PinholeCamera
    rgb: np.ndarray    # (T, H, W, 3)
    depth: np.ndarray  # (T, H, W)
    alpha: np.ndarray  # (T, H, W)


@dataclass
class GroundTruthBundle:
    scene: Scene
    rgb: np.ndarray        # (T, H, W, 3) raw renderer output
    depth: np.ndarray      # (T, H, W) alpha-weighted depth plus far-plane rest
    alpha: np.ndarray      # (T, H, W)
    flow_fwd: np.ndarray   # (T-1, H, W, 2) pixels, frame t to t+1
    flow_bwd: np.ndarray   # (T-1, H, W, 2) pixels, frame t+1 to t
    masks: dict            # name -> (T, H, W) bool, a partition of object pixels
    bboxes: dict           # name -> (T, 4) float (x0, y0, x1, y1)
    track_ids: np.ndarray      # (K,)
    track_uv: np.ndarray       # (K, T, 2)
    track_visible: np.ndarray  # (K, T) bool
    track_object: list         # (K,) owning object name per track
    warps: dict            # name -> ObjectMotion, the exact object translation
    camera_track: CameraTrack
    novel: list            # NovelView entries
    scale_layout: dict     # name -> {"center": [...], "extent": float}

    @property
    def n_frames(self):
        return self.rgb.shape[0]


def surface_depth(depth, alpha, far, alpha_floor=OWNER_ALPHA):
    """Undo the compositing weights: the depth of the visible surface.

    The renderer accumulates ``sum(w_i * z_i)`` plus leftover transmittance
    times the far plane; dividing by alpha recovers the surface depth where
    coverage is solid.  Pixels below ``alpha_floor`` have no usable surface
    and come back as +inf.
    """
    covered = alpha >= alpha_floor
    safe = np.where(covered, alpha, 1.0)
    surf = (depth - (1.0 - alpha) * far) / safe
    return np.where(covered, surf, np.inf)


def projected_bbox(cloud, camera, lowpass=LOWPASS):
    """Analytic float bounds of a cloud's 3 sigma screen footprint."""
    p_cam = camera.to_camera(cloud.means)
    z = p_cam[:, 2]
    front = z > camera.near
    if not np.any(front):
        raise ValueError("cloud is entirely behind the camera")
    p_cam, z = p_cam[front], z[front]
    u = camera.fx * p_cam[:, 0] / z + camera.cx
    v = camera.fy * p_cam[:, 1] / z + camera.cy
    sigma = build_covariance(cloud.rotations[front], cloud.log_scales[front])
    vcam = np.einsum("ij,njk,lk->nil", camera.rot, sigma, camera.rot)
    jac = projection_jacobian(camera, p_cam)
    cov2d = np.einsum("nij,njk,nlk->nil", jac, vcam, jac)
    cov2d[:, 0, 0] += lowpass
    cov2d[:, 1, 1] += lowpass
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(lam_max)
    return np.array([
        np.min(u - radius), np.min(v - radius),
        np.max(u + radius), np.max(v + radius),
    ])


def _unit_renders(scene, t):
    """Solo alpha and surface depth per render unit (objects, then wall)."""
    camera = scene.cameras[t]
    alphas, surfs = [], []
    clouds = [obj.cloud_at(t) for obj in scene.objects]
    if scene.background is not None:
        clouds.append(scene.background)
    for cloud in clouds:
        out = render(camera, cloud)
        alphas.append(out.alpha)
        surfs.append(surface_depth(out.depth, out.alpha, camera.far))
    return np.stack(alphas), np.stack(surfs)


def _owner_maps(alphas, surfs):
    """Per-pixel owning unit by nearest solid surface; -1 where none."""
    candidate = alphas >= OWNER_ALPHA
    keyed = np.where(candidate, surfs, np.inf)
    owner = np.argmin(keyed, axis=0).astype(np.int64)
    owner[~candidate.any(axis=0)] = -1
    return owner


def _analytic_flow(scene, t_src, t_dst, owner, surfs, grid):
    """Flow from frame ``t_src`` to ``t_dst``: unproject each owned pixel at
    its owner's surface depth, route the point through the owner's motion map
    via frame 1, and reproject.  Unowned pixels get zero flow."""
    cam_src, cam_dst = scene.cameras[t_src], scene.cameras[t_dst]
    h, w = owner.shape
    flow = np.zeros((h, w, 2))
    n_objects = len(scene.objects)
    for unit in range(n_objects + (1 if scene.background is not None else 0)):
        sel = owner == unit
        if not np.any(sel):
            continue
        uv = grid[sel]
        points = cam_src.unproject(uv, surfs[unit][sel])
        if unit < n_objects:
            program = scene.objects[unit].program
            points = program.map(program.unmap(points, t_src), t_dst)
        uv_dst, _, valid = project_point(cam_dst, points)
        motion = np.where(valid[:, None], uv_dst - uv, 0.0)
        flow[sel] = motion
    return flow


def render_ground_truth(scene, novel_views=EVAL_NOVEL_VIEWS):
    """Render every supervision signal of a scene into a GroundTruthBundle."""
    spec = scene.spec
    t_count, h, w = spec.n_frames, spec.height, spec.width
    n_objects = len(scene.objects)

    rgb = np.empty((t_count, h, w, 3))
    depth = np.empty((t_count, h, w))
    alpha = np.empty((t_count, h, w))
    owner_stack = np.empty((t_count, h, w), dtype=np.int64)
    surf_stack = []
    masks = {obj.name: np.zeros((t_count, h, w), dtype=bool) for obj in scene.objects}
    bboxes = {obj.name: np.empty((t_count, 4)) for obj in scene.objects}

    for t in range(t_count):
        camera = scene.cameras[t]
        out = render(camera, scene.frame_cloud(t), background=spec.background_color)
        rgb[t], depth[t], alpha[t] = out.rgb, out.depth, out.alpha
        alphas, surfs = _unit_renders(scene, t)
        owner_stack[t] = _owner_maps(alphas, surfs)
        surf_stack.append(surfs)
        object_candidate = alphas[:n_objects] >= OWNER_ALPHA
        object_owner = np.where(
            object_candidate.any(axis=0),
            np.argmin(np.where(object_candidate, surfs[:n_objects], np.inf), axis=0),
            -1,
        )
        for i, obj in enumerate(scene.objects):
            masks[obj.name][t] = object_owner == i
            bboxes[obj.name][t] = projected_bbox(obj.cloud_at(t), camera)

    grid = scene.cameras[0].pixel_grid()
    flow_fwd = np.zeros((max(t_count - 1, 0), h, w, 2))
    flow_bwd = np.zeros((max(t_count - 1, 0), h, w, 2))
    for t in range(t_count - 1):
        flow_fwd[t] = _analytic_flow(scene, t, t + 1, owner_stack[t], surf_stack[t], grid)
        flow_bwd[t] = _analytic_flow(scene, t + 1, t, owner_stack[t + 1],
                                     surf_stack[t + 1], grid)

    track_rows = []
    for i, obj in enumerate(scene.objects):
        for j in obj.track_index:
            track_rows.append((i, int(j)))
    k = len(track_rows)
    track_uv = np.zeros((k, t_count, 2))
    track_visible = np.zeros((k, t_count), dtype=bool)
    for t in range(t_count):
        camera = scene.cameras[t]
        surfs = surf_stack[t]
        alphas_solid = surfs < np.inf
        for row, (obj_i, splat_j) in enumerate(track_rows):
            point = scene.objects[obj_i].cloud_at(t).means[splat_j]
            uv, z, valid = project_point(camera, point)
            if not valid:
                track_visible[row, t] = False
                continue
            track_uv[row, t] = uv
            px = int(np.floor(uv[0]))
            py = int(np.floor(uv[1]))
            if not (0 <= px < w and 0 <= py < h):
                track_visible[row, t] = False
                continue
            occluded = False
            for unit in range(surfs.shape[0]):
                if unit == obj_i:
                    continue
                if alphas_solid[unit, py, px] and surfs[unit, py, px] < z:
                    occluded = True
                    break
            track_visible[row, t] = not occluded

    warps = {}
    for obj in scene.objects:
        centroids = np.stack([obj.cloud_at(t).centroid() for t in range(t_count)])
        warps[obj.name] = ObjectMotion(
            anchor=centroids[0],
            scales=np.ones(t_count),
            deltas=centroids - centroids[0],
        )

    novel = []
    for elevation, azimuth in novel_views:
        cam_spec = spec.camera
        camera = orbit_camera(
            cam_spec.target, cam_spec.distance,
            cam_spec.azimuth + azimuth, cam_spec.elevation + elevation,
            **scene.intrinsics,
        )
        view_rgb = np.empty((t_count, h, w, 3))
        view_depth = np.empty((t_count, h, w))
        view_alpha = np.empty((t_count, h, w))
        for t in range(t_count):
            out = render(camera, scene.frame_cloud(t), background=spec.background_color)
            view_rgb[t], view_depth[t], view_alpha[t] = out.rgb, out.depth, out.alpha
        novel.append(NovelView(elevation=elevation, azimuth=azimuth, camera=camera,
                               rgb=view_rgb, depth=view_depth, alpha=view_alpha))

    return GroundTruthBundle(
        scene=scene,
        rgb=rgb, depth=depth, alpha=alpha,
        flow_fwd=flow_fwd, flow_bwd=flow_bwd,
        masks=masks, bboxes=bboxes,
        track_ids=np.arange(k, dtype=np.int64),
        track_uv=track_uv,
        track_visible=track_visible,
        track_object=[scene.objects[obj_i].name for obj_i, _ in track_rows],
        warps=warps,
        camera_track=CameraTrack.from_poses(scene.cameras),
        novel=novel,
        scale_layout={
            obj.name: {"center": list(obj.spec.center), "extent": obj.spec.extent}
            for obj in scene.objects
        },
    )


def export_tracks(bundle, path):
    """Write the bundle's GT tracks as the standard CSV table."""
    write_tracks(path, bundle.track_ids, bundle.track_uv, bundle.track_visible)
