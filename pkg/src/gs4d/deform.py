"""Time-conditioned deformation field over a canonical Gaussian cloud.

Six feature planes (three spatial, three space-time) are sampled bilinearly
and fused by elementwise product; a small ReLU MLP decodes the fused feature
into a 10-vector per splat: a position offset, a raw rotation increment and a
log-scale offset.  The final MLP layer starts at zero, so a freshly created
field is exactly the identity: positions and log-scales pass through bit for
bit and rotations are composed with the exact identity quaternion.

Coordinates are normalized into the field's box (the canonical cloud's frame-1
bounding box grown by 20%); queries outside it are clamped to the boundary.
"""

import io
import json
import struct
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .cloud import GaussianCloud
from .geometry import quat_multiply

SPATIAL_PLANES = ("xy", "xz", "yz")
TIME_PLANES = ("xt", "yt", "zt")
PLANE_NAMES = SPATIAL_PLANES + TIME_PLANES
_AXIS = {"x": 0, "y": 1, "z": 2}

CHECKPOINT_MAGIC = b"GS4D"
CHECKPOINT_VERSION = 1

OUTPUT_DIM = 10  # 3 position + 4 rotation + 3 log-scale


def time_resolution(n_frames):
    """Temporal plane resolution: 25 bins up to 32 frames, then 0.8 per frame."""
    if n_frames <= 32:
        return 25
    return int(np.ceil(0.8 * n_frames))


@dataclass
class MultiPlaneGrid:
    planes: dict                 # name -> (res_a, res_b, features) array
    box_lo: np.ndarray           # (3,)
    box_hi: np.ndarray           # (3,)

    @property
    def features(self):
        return self.planes["xy"].shape[2]

    def normalize(self, points):
        """Map world points into [-1, 1]^3, clamping out-of-box queries."""
        pts = np.asarray(points, dtype=np.float64)
        span = self.box_hi - self.box_lo
        return np.clip(2.0 * (pts - self.box_lo) / span - 1.0, -1.0, 1.0)


@dataclass
class MLPHead:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def hidden(self):
        return self.b1.shape[0]


@dataclass
class DeformationOutput:
    d_mu: np.ndarray         # (N, 3)
    d_rot_raw: np.ndarray    # (N, 4) raw rotation increment (before +identity)
    d_log_scale: np.ndarray  # (N, 3)


@dataclass
class DeformationField:
    grid: MultiPlaneGrid
    mlp: MLPHead
    n_frames: int

    def params(self):
        """Flat name -> array view of every trainable tensor."""
        out = {f"plane_{name}": self.grid.planes[name] for name in PLANE_NAMES}
        out.update(
            mlp_w1=self.mlp.w1, mlp_b1=self.mlp.b1,
            mlp_w2=self.mlp.w2, mlp_b2=self.mlp.b2,
            mlp_w3=self.mlp.w3, mlp_b3=self.mlp.b3,
        )
        return out

    def copy(self):
        return DeformationField(
            grid=MultiPlaneGrid(
                planes={k: v.copy() for k, v in self.grid.planes.items()},
                box_lo=self.grid.box_lo.copy(),
                box_hi=self.grid.box_hi.copy(),
            ),
            mlp=MLPHead(
                w1=self.mlp.w1.copy(), b1=self.mlp.b1.copy(),
                w2=self.mlp.w2.copy(), b2=self.mlp.b2.copy(),
                w3=self.mlp.w3.copy(), b3=self.mlp.b3.copy(),
            ),
            n_frames=self.n_frames,
        )


def bounding_box(points, grow=0.2, min_extent=1e-3):
    """Axis-aligned box around ``points`` grown by ``grow`` of its extent."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = 0.5 * (lo + hi)
    half = np.maximum(0.5 * (hi - lo) * (1.0 + grow), 0.5 * min_extent)
    return center - half, center + half


def create_field(canonical, n_frames, spatial_res=64, time_res=None, features=32,
                 hidden=64, rng=None):
    """Identity deformation field sized to ``canonical``'s frame-1 bounding box."""
    if rng is None:
        rng = np.random.default_rng(0)
    if time_res is None:
        time_res = time_resolution(n_frames)
    if time_res < 2 or spatial_res < 2:
        raise ValueError("plane resolutions must be at least 2")
    lo, hi = bounding_box(canonical.means if isinstance(canonical, GaussianCloud) else canonical)
    planes = {}
    for name in SPATIAL_PLANES:
        planes[name] = rng.uniform(0.1, 0.5, (spatial_res, spatial_res, features))
    for name in TIME_PLANES:
        # identity along time at init so temporal gradients start unbiased
        planes[name] = np.ones((spatial_res, time_res, features))
    grid = MultiPlaneGrid(planes=planes, box_lo=lo, box_hi=hi)
    mlp = MLPHead(
        w1=rng.normal(0.0, np.sqrt(2.0 / features), (features, hidden)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, hidden)),
        b2=np.zeros(hidden),
        w3=np.zeros((hidden, OUTPUT_DIM)),
        b3=np.zeros(OUTPUT_DIM),
    )
    return DeformationField(grid=grid, mlp=mlp, n_frames=n_frames)


def _plane_coords(grid, name, x_norm, u):
    """Continuous (a, b) grid coordinates for one plane."""
    a_axis, b_axis = name[0], name[1]
    res_a, res_b = grid.planes[name].shape[:2]
    ga = (x_norm[:, _AXIS[a_axis]] + 1.0) * 0.5 * (res_a - 1)
    if b_axis == "t":
        gb = np.broadcast_to(np.asarray(u, dtype=np.float64) * (res_b - 1), ga.shape)
    else:
        gb = (x_norm[:, _AXIS[b_axis]] + 1.0) * 0.5 * (res_b - 1)
    return ga, gb


def _bilinear(plane, ga, gb):
    """Bilinear read; returns values plus everything needed to scatter back."""
    res_a, res_b = plane.shape[:2]
    ia = np.clip(np.floor(ga).astype(np.int64), 0, res_a - 2)
    ib = np.clip(np.floor(gb).astype(np.int64), 0, res_b - 2)
    fa = (ga - ia)[:, None]
    fb = (gb - ib)[:, None]
    v00 = plane[ia, ib]
    v01 = plane[ia, ib + 1]
    v10 = plane[ia + 1, ib]
    v11 = plane[ia + 1, ib + 1]
    value = (
        v00 * (1.0 - fa) * (1.0 - fb)
        + v01 * (1.0 - fa) * fb
        + v10 * fa * (1.0 - fb)
        + v11 * fa * fb
    )
    return value, (ia, ib, fa, fb)


def sample_planes(grid, points, u):
    """Fused feature of world ``points`` at normalized time ``u``, shape (N, F)."""
    feature, _ = _sample_planes_ctx(grid, points, u)
    return feature


def _sample_planes_ctx(grid, points, u):
    pts = np.asarray(points, dtype=np.float64)
    x_norm = grid.normalize(pts)
    span = grid.box_hi - grid.box_lo
    inside = (pts > grid.box_lo) & (pts < grid.box_hi)  # clamp blocks gradients
    per_plane = []
    taps = {}
    for name in PLANE_NAMES:
        ga, gb = _plane_coords(grid, name, x_norm, u)
        value, tap = _bilinear(grid.planes[name], ga, gb)
        per_plane.append(value)
        taps[name] = tap
    stack = np.stack(per_plane, axis=0)  # (6, N, F)
    feature = stack[0] * stack[1] * stack[2] * stack[3] * stack[4] * stack[5]
    return feature, (stack, taps, span, inside)


def _mlp_forward(mlp, feature):
    z1 = feature @ mlp.w1 + mlp.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ mlp.w2 + mlp.b2
    h2 = np.maximum(z2, 0.0)
    out = h2 @ mlp.w3 + mlp.b3
    return out, (feature, z1, h1, z2, h2)


def field_forward(field, points, frame):
    """Raw 10-channel head output for world points at 1-based ``frame``."""
    u = _frame_to_u(field, frame)
    feature, plane_ctx = _sample_planes_ctx(field.grid, points, u)
    out, mlp_ctx = _mlp_forward(field.mlp, feature)
    output = DeformationOutput(
        d_mu=out[:, 0:3], d_rot_raw=out[:, 3:7], d_log_scale=out[:, 7:10]
    )
    return output, (plane_ctx, mlp_ctx)


def _frame_to_u(field, frame):
    if not 1 <= frame <= field.n_frames:
        raise ValueError(f"frame {frame} outside 1..{field.n_frames}")
    if field.n_frames == 1:
        return 0.0
    return (frame - 1.0) / (field.n_frames - 1.0)


@dataclass
class DeformContext:
    plane_ctx: tuple
    mlp_ctx: tuple
    dq: np.ndarray         # (N, 4) unit rotation increment
    dq_norm: np.ndarray    # (N, 1) norm of identity + raw increment
    base_rot: np.ndarray   # (N, 4) canonical rotations


def deform(field, canonical, frame):
    """Deformed copy of ``canonical`` at 1-based ``frame``.

    Positions and log-scales receive additive offsets; the rotation increment
    is ``normalize(identity + raw)`` composed on the left of the canonical
    quaternion, which preserves quaternion norm and makes the zero-output
    field an exact identity.
    """
    output, (plane_ctx, mlp_ctx) = field_forward(field, canonical.means, frame)
    v = output.d_rot_raw.copy()
    v[:, 0] += 1.0
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    dq = v / norm
    rotations = quat_multiply(dq, canonical.rotations)
    moved = GaussianCloud(
        means=canonical.means + output.d_mu,
        rotations=rotations,
        log_scales=canonical.log_scales + output.d_log_scale,
        opacity_logits=canonical.opacity_logits,
        sh=canonical.sh,
        ids=canonical.ids,
    )
    ctx = DeformContext(
        plane_ctx=plane_ctx,
        mlp_ctx=mlp_ctx,
        dq=dq,
        dq_norm=norm,
        base_rot=np.asarray(canonical.rotations, dtype=np.float64),
    )
    return moved, ctx


@dataclass
class FieldGradients:
    planes: dict
    mlp: dict
    d_canonical_means: np.ndarray
    d_canonical_rotations: np.ndarray
    d_canonical_log_scales: np.ndarray

    def params(self):
        out = {f"plane_{name}": self.planes[name] for name in PLANE_NAMES}
        out.update({f"mlp_{k}": v for k, v in self.mlp.items()})
        return out


def _right_matrices(q):
    """Batched right-multiplication matrices: quat_multiply(p, q) = R(q) p."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rows = [
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _left_matrices(q):
    """Batched left-multiplication matrices: quat_multiply(q, p) = L(q) p."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rows = [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def field_backward(field, ctx, d_means, d_rotations, d_log_scales):
    """Pull cloud-space gradients at one frame back to the field parameters.

    Also returns gradients w.r.t. the canonical cloud so callers can fine-tune
    the base representation jointly with the field.
    """
    n = ctx.dq.shape[0]
    d_out = np.zeros((n, OUTPUT_DIM))
    if d_means is not None:
        d_out[:, 0:3] = d_means
    if d_log_scales is not None:
        d_out[:, 7:10] = d_log_scales

    d_canon_rot = np.zeros((n, 4))
    if d_rotations is not None:
        d_rot = np.asarray(d_rotations, dtype=np.float64)
        # rot_t = dq * rot1 is linear in either factor
        r_base = _right_matrices(ctx.base_rot)
        d_dq = np.einsum("nij,ni->nj", r_base, d_rot)
        l_dq = _left_matrices(ctx.dq)
        d_canon_rot = np.einsum("nij,ni->nj", l_dq, d_rot)
        # through the normalization of v = identity + raw
        dot = np.sum(d_dq * ctx.dq, axis=-1, keepdims=True)
        d_out[:, 3:7] = (d_dq - ctx.dq * dot) / ctx.dq_norm

    feature, z1, h1, z2, h2 = ctx.mlp_ctx
    mlp = field.mlp
    d_h2 = d_out @ mlp.w3.T
    d_z2 = d_h2 * (z2 > 0.0)
    d_h1 = d_z2 @ mlp.w2.T
    d_z1 = d_h1 * (z1 > 0.0)
    d_feature = d_z1 @ mlp.w1.T
    mlp_grads = {
        "w3": h2.T @ d_out,
        "b3": d_out.sum(axis=0),
        "w2": h1.T @ d_z2,
        "b2": d_z2.sum(axis=0),
        "w1": feature.T @ d_z1,
        "b1": d_z1.sum(axis=0),
    }

    stack, taps, span, inside = ctx.plane_ctx
    plane_grads = {}
    d_xn = np.zeros((n, 3))
    # product rule over the six planes via prefix/suffix partial products
    prefix = np.ones_like(stack)
    for i in range(1, 6):
        prefix[i] = prefix[i - 1] * stack[i - 1]
    suffix = np.ones_like(stack)
    for i in range(4, -1, -1):
        suffix[i] = suffix[i + 1] * stack[i + 1]
    for i, name in enumerate(PLANE_NAMES):
        d_value = d_feature * prefix[i] * suffix[i]
        plane = field.grid.planes[name]
        grad = np.zeros_like(plane)
        ia, ib, fa, fb = taps[name]
        res_a, res_b = plane.shape[:2]
        flat = grad.reshape(-1, grad.shape[2])
        np.add.at(flat, ia * res_b + ib, d_value * (1.0 - fa) * (1.0 - fb))
        np.add.at(flat, ia * res_b + ib + 1, d_value * (1.0 - fa) * fb)
        np.add.at(flat, (ia + 1) * res_b + ib, d_value * fa * (1.0 - fb))
        np.add.at(flat, (ia + 1) * res_b + ib + 1, d_value * fa * fb)
        plane_grads[name] = grad

        # sample coordinates depend on the query position, so the chain
        # continues into the canonical means (time coordinates do not)
        v00 = plane[ia, ib]
        v01 = plane[ia, ib + 1]
        v10 = plane[ia + 1, ib]
        v11 = plane[ia + 1, ib + 1]
        d_fa = np.sum(d_value * ((v10 - v00) * (1.0 - fb) + (v11 - v01) * fb), axis=1)
        axis_a = _AXIS[name[0]]
        d_xn[:, axis_a] += d_fa * 0.5 * (res_a - 1)
        if name[1] != "t":
            d_fb = np.sum(d_value * ((v01 - v00) * (1.0 - fa) + (v11 - v10) * fa), axis=1)
            d_xn[:, _AXIS[name[1]]] += d_fb * 0.5 * (res_b - 1)

    d_pts = np.where(inside, d_xn * (2.0 / span), 0.0)
    d_canon_means = d_pts + (d_means if d_means is not None else 0.0)
    d_canon_ls = d_log_scales.copy() if d_log_scales is not None else np.zeros((n, 3))
    return FieldGradients(
        planes=plane_grads,
        mlp={k: v for k, v in mlp_grads.items()},
        d_canonical_means=d_canon_means,
        d_canonical_rotations=d_canon_rot,
        d_canonical_log_scales=d_canon_ls,
    )


def save_field(field, path):
    """Serialize a field: magic, version, JSON header, raw little-endian arrays."""
    arrays = {}
    meta = {
        "n_frames": field.n_frames,
        "box_lo": field.grid.box_lo.tolist(),
        "box_hi": field.grid.box_hi.tolist(),
        "planes": {},
        "mlp": {},
    }
    for name in PLANE_NAMES:
        arr = field.grid.planes[name]
        meta["planes"][name] = list(arr.shape)
        arrays[f"plane_{name}"] = arr
    for key in ("w1", "b1", "w2", "b2", "w3", "b3"):
        arr = getattr(field.mlp, key)
        meta["mlp"][key] = list(arr.shape)
        arrays[f"mlp_{key}"] = arr
    header = json.dumps(meta).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for key in sorted(arrays):
        buf.write(np.ascontiguousarray(arrays[key], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_field(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a deformation checkpoint (bad magic {blob[:4]!r})")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen = struct.unpack("<I", blob[8:12])[0]
    meta = json.loads(blob[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen

    shapes = {}
    for name, shape in meta["planes"].items():
        shapes[f"plane_{name}"] = tuple(shape)
    for key, shape in meta["mlp"].items():
        shapes[f"mlp_{key}"] = tuple(shape)

    arrays = {}
    for key in sorted(shapes):
        count = int(np.prod(shapes[key]))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[key] = arr.reshape(shapes[key]).astype(np.float64)
        offset += count * 8
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in checkpoint")

    grid = MultiPlaneGrid(
        planes={name: arrays[f"plane_{name}"] for name in PLANE_NAMES},
        box_lo=np.asarray(meta["box_lo"], dtype=np.float64),
        box_hi=np.asarray(meta["box_hi"], dtype=np.float64),
    )
    mlp = MLPHead(**{key: arrays[f"mlp_{key}"] for key in ("w1", "b1", "w2", "b2", "w3", "b3")})
    return DeformationField(grid=grid, mlp=mlp, n_frames=int(meta["n_frames"]))
