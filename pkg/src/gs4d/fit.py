"""Optimization stages: static lift, object motion, world warp, camera scale,
joint fine-tune, and composition search.

Every stage owns its parameters for the duration of the call (inputs are
copied, the fitted copies returned), runs bit-reproducibly for a fixed
schedule seed, and can append per-iteration rows to a shared progress log.
"""

import csv
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.optimize import minimize_scalar

from .adam import AdamW, exponential_decay
from .cloud import concat_clouds, sigmoid
from .deform import create_field, deform, field_backward
from .losses import (
    LAMBDA_FLOW,
    LAMBDA_RGB,
    LAMBDA_RIGID,
    LAMBDA_SCALE,
    build_neighbor_graph,
    depth_align_loss,
    flow_loss,
    rgb_loss,
    rigidity_loss,
    scale_reg_loss,
)
from .motion import SceneComposition, compose_motion, compose_scene, object_to_world_backward
from .renderer import render, render_backward

DEFAULT_LRS = {
    "means": 1e-3,
    "rotations": 5e-3,
    "log_scales": 5e-3,
    "opacity_logits": 5e-2,
    "sh": 1e-2,
    "plane": 6.4e-4,
    "mlp": 6.4e-3,
    "delta": 1e-4,
}
POSITION_LR_FINAL = 2e-5

LOSS_TERMS = ("rgb", "flow", "scale", "rigid", "depth")


@dataclass
class FitSchedule:
    iterations: int
    batch_size: int = 16
    seed: int = 0
    lrs: dict = dc_field(default_factory=dict)
    position_lr_final: float = POSITION_LR_FINAL

    def __post_init__(self):
        if self.iterations <= 0 or self.batch_size <= 0:
            raise ValueError("iteration and batch counts must be positive")
        merged = dict(DEFAULT_LRS)
        merged.update(self.lrs)
        self.lrs = merged

    @classmethod
    def static_defaults(cls, **kw):
        return cls(iterations=1000, batch_size=16, **kw)

    @classmethod
    def motion_defaults(cls, n_frames, **kw):
        return cls(iterations=100 * n_frames, batch_size=10, **kw)


@dataclass
class DensifyConfig:
    grad_threshold: float = 0.5
    max_scale: float = 0.05
    opacity_floor: float = 0.01
    interval: int = 100

    def __post_init__(self):
        if min(self.grad_threshold, self.max_scale, self.opacity_floor) <= 0:
            raise ValueError("densify thresholds must be positive")
        if self.interval <= 0:
            raise ValueError("densify interval must be positive")


class ProgressLog:
    """Append-only CSV of per-iteration losses, also kept in memory."""

    FIELDS = ("iteration", "stage") + LOSS_TERMS + ("total", "wall_ms")

    def __init__(self, path=None):
        self.path = path
        self.rows = []
        if path is not None:
            with open(path, "a", newline="") as fh:
                if fh.tell() == 0:
                    csv.writer(fh).writerow(self.FIELDS)

    def record(self, stage, iteration, terms, wall_ms):
        row = {"iteration": iteration, "stage": stage, "wall_ms": round(wall_ms, 3)}
        for name in LOSS_TERMS:
            row[name] = terms.get(name, 0.0)
        row["total"] = sum(terms.values())
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row[k] for k in self.FIELDS])
        return row["total"]


def _as_view(entry):
    """Normalize a (camera, image[, mask]) tuple."""
    if len(entry) == 2:
        cam, img = entry
        return cam, np.asarray(img, dtype=np.float64), None
    cam, img, mask = entry
    mask = None if mask is None else np.asarray(mask, dtype=bool)
    return cam, np.asarray(img, dtype=np.float64), mask


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (time.perf_counter() - self.t0) * 1e3


# ---------------------------------------------------------------------------
# static stage


def _densify_and_prune(cloud, opt, acc_grad, cfg):
    """Clone high-gradient small splats, drop transparent or oversized ones.

    Returns the reset gradient accumulator sized to the new cloud.
    """
    max_scale = np.exp(cloud.log_scales).max(axis=1)
    opacity = sigmoid(cloud.opacity_logits)
    prune = (opacity < cfg.opacity_floor) | (max_scale > cfg.max_scale)
    if prune.all():
        prune[np.argmax(opacity)] = False
    keep = ~prune
    clone = keep & (acc_grad > cfg.grad_threshold) & (max_scale < cfg.max_scale)
    n_clone = int(clone.sum())
    if keep.all() and n_clone == 0:
        return acc_grad

    next_id = cloud.ids.max() + 1
    new_ids = np.concatenate([cloud.ids[keep], next_id + np.arange(n_clone)])
    for name in ("means", "rotations", "log_scales", "opacity_logits", "sh"):
        old = getattr(cloud, name)
        merged = np.concatenate([old[keep], old[clone]])
        setattr(cloud, name, merged)
        opt.replace(name, merged, keep=keep, extra=n_clone)
    cloud.ids = new_ids
    return np.zeros(len(cloud))


def fit_static(views, cloud, schedule=None, densify=None, log=None, stage="static"):
    """Fit a static cloud to posed views by photometric descent.

    Densification and pruning (when a config is given) run only inside this
    stage; every later stage keeps the splat count fixed.
    """
    views = [_as_view(v) for v in views]
    if not views:
        raise ValueError("need at least one target view")
    if schedule is None:
        schedule = FitSchedule.static_defaults()
    cloud = cloud.copy()
    rng = np.random.default_rng(schedule.seed)
    lrs = schedule.lrs
    opt = AdamW(
        {"means": cloud.means, "rotations": cloud.rotations,
         "log_scales": cloud.log_scales, "opacity_logits": cloud.opacity_logits,
         "sh": cloud.sh},
        {"means": lrs["means"], "rotations": lrs["rotations"],
         "log_scales": lrs["log_scales"], "opacity_logits": lrs["opacity_logits"],
         "sh": lrs["sh"]},
    )
    acc_grad = np.zeros(len(cloud))

    for it in range(schedule.iterations):
        with _Timer() as timer:
            opt.set_lr("means", exponential_decay(
                lrs["means"], schedule.position_lr_final, it, schedule.iterations))
            batch = rng.integers(0, len(views), schedule.batch_size)
            grads = {name: np.zeros_like(p) for name, p in opt.params.items()}
            rgb_total = 0.0
            # duplicate draws share one render; their gradients just scale
            for vi, count in zip(*np.unique(batch, return_counts=True)):
                weight = count / schedule.batch_size
                cam, image, mask = views[vi]
                out, ctx = render(cam, cloud, return_ctx=True)
                term = rgb_loss(out.rgb, image, mask=mask)
                rgb_total += term.value * weight
                g = render_backward(ctx, d_rgb=term.grads["rendered"] * weight)
                grads["means"] += g.d_means
                grads["rotations"] += g.d_rotations
                grads["log_scales"] += g.d_log_scales
                grads["opacity_logits"] += g.d_opacity_logits
                grads["sh"] += g.d_sh
            acc_grad += np.linalg.norm(grads["means"], axis=1)
            opt.step(grads)
            if densify is not None and (it + 1) % densify.interval == 0:
                acc_grad = _densify_and_prune(cloud, opt, acc_grad, densify)
        if log is not None:
            log.record(stage, it, {"rgb": rgb_total}, timer.ms)
    return cloud


# ---------------------------------------------------------------------------
# object motion stage


def _field_optimizer(field, lrs, lr_scale=1.0):
    params = field.params()
    rates = {}
    for name in params:
        base = lrs["plane"] if name.startswith("plane_") else lrs["mlp"]
        rates[name] = base * lr_scale
    return AdamW(params, rates)


def fit_object_motion(canonical, frames, flows=None, novel_views=None, schedule=None,
                      deform_field=None, weights=None, neighbors=8, log=None,
                      stage="motion"):
    """Fit the deformation field to object-centric crops.

    ``frames`` lists one (camera, image, mask) per time step; ``flows`` lists
    one (flow image, confidence mask) per consecutive pair; ``novel_views``
    optionally gives extra (camera, image) targets per frame, two of which are
    sampled each step as a stand-in multi-view constraint.  The splat count
    never changes here.
    """
    frames = [_as_view(v) for v in frames]
    n_frames = len(frames)
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if flows is not None and len(flows) != n_frames - 1:
        raise ValueError(f"expected {n_frames - 1} flow fields, got {len(flows)}")
    if novel_views is not None and len(novel_views) != n_frames:
        raise ValueError("novel view bank must cover every frame")
    if schedule is None:
        schedule = FitSchedule.motion_defaults(n_frames)
    w = {"rgb": LAMBDA_RGB, "flow": LAMBDA_FLOW, "scale": LAMBDA_SCALE,
         "rigid": LAMBDA_RIGID}
    if weights:
        w.update(weights)
    rng = np.random.default_rng(schedule.seed)
    field = deform_field.copy() if deform_field is not None else create_field(
        canonical, n_frames, rng=np.random.default_rng(schedule.seed))
    opt = _field_optimizer(field, schedule.lrs)
    edges = build_neighbor_graph(canonical.means, k=neighbors)

    for it in range(schedule.iterations):
        with _Timer() as timer:
            terms = dict.fromkeys(("rgb", "flow", "scale", "rigid"), 0.0)
            cache = {}

            def at(t):
                if t not in cache:
                    cache[t] = deform(field, canonical, t)
                return cache[t]

            upstream = {}

            def push(t, d_means=None, d_rot=None, d_ls=None):
                slot = upstream.setdefault(t, [None, None, None])
                for i, d in enumerate((d_means, d_rot, d_ls)):
                    if d is not None:
                        slot[i] = d if slot[i] is None else slot[i] + d

            batch = rng.integers(1, n_frames + 1, schedule.batch_size)
            for t, count in zip(*np.unique(batch, return_counts=True)):
                t = int(t)
                weight = count / schedule.batch_size
                cam, image, mask = frames[t - 1]
                cloud_t, _ = at(t)
                flow_pair = flows[t - 1] if (flows is not None and t < n_frames
                                             and w["flow"] > 0.0) else None
                if flow_pair is not None:
                    out, rctx = render(cam, cloud_t, flow_cloud=at(t + 1)[0],
                                       return_ctx=True)
                else:
                    out, rctx = render(cam, cloud_t, return_ctx=True)
                term = rgb_loss(out.rgb, image, mask=mask)
                terms["rgb"] += w["rgb"] * term.value * weight
                d_rgb = w["rgb"] * term.grads["rendered"] * weight
                d_flow = None
                if flow_pair is not None:
                    target, conf = flow_pair
                    fterm = flow_loss(out.flow, target, conf, flow_valid=out.flow_valid)
                    terms["flow"] += w["flow"] * fterm.value * weight
                    d_flow = w["flow"] * fterm.grads["rendered_flow"] * weight
                g = render_backward(rctx, d_rgb=d_rgb, d_flow=d_flow)
                push(t, g.d_means, g.d_rotations, g.d_log_scales)
                if flow_pair is not None:
                    push(t + 1, d_means=g.d_means_next)

                if w["scale"] > 0.0 and t < n_frames:
                    s_t = np.exp(at(t)[0].log_scales)
                    s_n = np.exp(at(t + 1)[0].log_scales)
                    sterm = scale_reg_loss(np.stack([s_t, s_n]))
                    terms["scale"] += w["scale"] * sterm.value * weight
                    d_s = w["scale"] * sterm.grads["scales"] * weight
                    push(t, d_ls=d_s[0] * s_t)
                    push(t + 1, d_ls=d_s[1] * s_n)
                if w["rigid"] > 0.0 and edges.shape[0]:
                    rterm = rigidity_loss(canonical, at(t)[0], edges)
                    terms["rigid"] += w["rigid"] * rterm.value * weight
                    push(t, d_means=w["rigid"] * rterm.grads["means"][0] * weight,
                         d_rot=w["rigid"] * rterm.grads["rotations"][0] * weight)

            if novel_views is not None and w["rgb"] > 0.0:
                for _ in range(2):
                    t = int(rng.integers(1, n_frames + 1))
                    bank = novel_views[t - 1]
                    cam, image = bank[int(rng.integers(len(bank)))]
                    out, rctx = render(cam, at(t)[0], return_ctx=True)
                    term = rgb_loss(out.rgb, image)
                    terms["rgb"] += w["rgb"] * term.value / 2.0
                    g = render_backward(rctx, d_rgb=w["rgb"] * term.grads["rendered"] / 2.0)
                    push(t, g.d_means, g.d_rotations, g.d_log_scales)

            grads = {name: np.zeros_like(p) for name, p in opt.params.items()}
            for t, (d_means, d_rot, d_ls) in upstream.items():
                fg = field_backward(field, at(t)[1], d_means, d_rot, d_ls)
                for name, arr in fg.params().items():
                    grads[name] += arr
            opt.step(grads)
        if log is not None:
            log.record(stage, it, terms, timer.ms)
    return field


# ---------------------------------------------------------------------------
# world warp refinement and the joint stage


def _dilate_masks(masks, dilate):
    if masks is None:
        return None
    out = []
    for m in masks:
        m = np.asarray(m, dtype=bool)
        out.append(binary_dilation(m, iterations=dilate) if dilate > 0 else m)
    return out


def warp_defaults(n_frames, **kw):
    return FitSchedule(iterations=100, batch_size=min(10, n_frames), **kw)


def _scene_render(camera, world, background_cloud, frame, return_ctx=False):
    """Render the warped object in its full-frame context.

    With a background cloud the object is composited into the actual scene
    (the ground-truth warp is then an exact photometric fixed point); without
    one the frame itself backs the object, which leaves a small soft-edge
    residual but needs no background model.
    """
    if background_cloud is None:
        return render(camera, world, background=frame, return_ctx=return_ctx)
    merged = concat_clouds([world, background_cloud], reassign_ids=True)
    return render(camera, merged, return_ctx=return_ctx)


def fit_world_warp(canonical, deform_field, motion, cameras, frames, masks=None,
                   background_cloud=None, schedule=None, dilate=6, log=None,
                   stage="warp"):
    """Refine the per-frame world translations against the full frames.

    The size factors stay frozen; frame 1 keeps the identity warp.  The loss
    is photometric over a dilated object mask.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    n_frames = len(frames)
    if len(cameras) != n_frames or motion.n_frames != n_frames:
        raise ValueError("cameras, frames, and warp disagree on frame count")
    if schedule is None:
        schedule = warp_defaults(n_frames)
    motion = motion.copy()
    n_obj = len(canonical)
    regions = _dilate_masks(masks, dilate)
    rng = np.random.default_rng(schedule.seed)
    opt = AdamW({"delta": motion.deltas}, {"delta": schedule.lrs["delta"]})

    for it in range(schedule.iterations):
        with _Timer() as timer:
            grads = {"delta": np.zeros_like(motion.deltas)}
            rgb_total = 0.0
            batch = rng.integers(1, n_frames + 1, schedule.batch_size)
            for t, count in zip(*np.unique(batch, return_counts=True)):
                t = int(t)
                weight = count / schedule.batch_size
                world, _, obj_cloud = compose_motion(canonical, deform_field, motion, t)
                frame = frames[t - 1]
                out, rctx = _scene_render(cameras[t - 1], world, background_cloud,
                                          frame, return_ctx=True)
                mask = regions[t - 1] if regions is not None else None
                term = rgb_loss(out.rgb, frame, mask=mask)
                rgb_total += term.value * weight
                g = render_backward(rctx, d_rgb=term.grads["rendered"] * weight)
                _, _, d_delta, _ = object_to_world_backward(
                    obj_cloud, motion, t, g.d_means[:n_obj], g.d_log_scales[:n_obj])
                grads["delta"][t - 1] += d_delta
            grads["delta"][0] = 0.0  # frame 1 is the identity warp
            opt.step(grads)
        if log is not None:
            log.record(stage, it, {"rgb": rgb_total}, timer.ms)
    return motion


def joint_finetune(canonical, deform_field, motion, cameras, frames, masks=None,
                   background_cloud=None, steps=100, batch_size=10, seed=0,
                   lr_scale=0.1, dilate=6, eval_every=10, schedule_lrs=None,
                   log=None, stage="joint"):
    """Jointly polish the deformation field and world translations.

    Runs at ``lr_scale`` times the stage learning rates and returns the best
    iterate by full-clip photometric loss, so the result never regresses.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    n_frames = len(frames)
    if len(cameras) != n_frames or motion.n_frames != n_frames:
        raise ValueError("cameras, frames, and warp disagree on frame count")
    lrs = dict(DEFAULT_LRS)
    if schedule_lrs:
        lrs.update(schedule_lrs)
    deform_field = deform_field.copy()
    motion = motion.copy()
    n_obj = len(canonical)
    regions = _dilate_masks(masks, dilate)
    rng = np.random.default_rng(seed)
    opt = _field_optimizer(deform_field, lrs, lr_scale=lr_scale)
    opt_delta = AdamW({"delta": motion.deltas}, {"delta": lrs["delta"] * lr_scale})

    def full_loss():
        total = 0.0
        for t in range(1, n_frames + 1):
            world, _, _ = compose_motion(canonical, deform_field, motion, t)
            out = _scene_render(cameras[t - 1], world, background_cloud, frames[t - 1])
            mask = regions[t - 1] if regions is not None else None
            total += rgb_loss(out.rgb, frames[t - 1], mask=mask).value
        return total / n_frames

    best_loss = full_loss()
    best = (deform_field.copy(), motion.copy())

    for it in range(steps):
        with _Timer() as timer:
            grads = {name: np.zeros_like(p) for name, p in opt.params.items()}
            d_delta_all = np.zeros_like(motion.deltas)
            rgb_total = 0.0
            batch = rng.integers(1, n_frames + 1, batch_size)
            for t, count in zip(*np.unique(batch, return_counts=True)):
                t = int(t)
                weight = count / batch_size
                world, dctx, obj_cloud = compose_motion(canonical, deform_field, motion, t)
                frame = frames[t - 1]
                out, rctx = _scene_render(cameras[t - 1], world, background_cloud,
                                          frame, return_ctx=True)
                mask = regions[t - 1] if regions is not None else None
                term = rgb_loss(out.rgb, frame, mask=mask)
                rgb_total += term.value * weight
                g = render_backward(rctx, d_rgb=term.grads["rendered"] * weight)
                d_means_obj, d_ls_obj, d_delta, _ = object_to_world_backward(
                    obj_cloud, motion, t, g.d_means[:n_obj], g.d_log_scales[:n_obj])
                d_delta_all[t - 1] += d_delta
                fg = field_backward(deform_field, dctx, d_means_obj,
                                    g.d_rotations[:n_obj], d_ls_obj)
                for name, arr in fg.params().items():
                    grads[name] += arr
            d_delta_all[0] = 0.0
            opt.step(grads)
            opt_delta.step({"delta": d_delta_all})
            if (it + 1) % eval_every == 0 or it == steps - 1:
                current = full_loss()
                if current < best_loss:
                    best_loss = current
                    best = (deform_field.copy(), motion.copy())
        if log is not None:
            log.record(stage, it, {"rgb": rgb_total}, timer.ms)
    return best[0], best[1], best_loss


# ---------------------------------------------------------------------------
# camera scale and composition


@dataclass
class CameraFit:
    track: object
    scale_observable: np.ndarray  # (T,) bool, frame 1 is never observable
    flag: str = ""


def fit_camera(frames, bg_cloud, track, k_bounds=(0.25, 4.0), xatol=1e-5,
               refine_pose=False, pose_steps=30, pose_lr=1e-3, log=None,
               stage="camera"):
    """Estimate the per-frame translation scale of a camera track.

    Each observable frame's beta minimizes that frame's photometric error
    against the background render, found by bounded scalar search (the
    per-frame objectives are independent).  Frames with no translation leave
    beta at its initial value; if no frame past the first has translation the
    result is flagged scale-unobservable.
    """
    frames = np.asarray(frames, dtype=np.float64)
    track = track.copy()
    t_total = track.n_frames
    if frames.shape[0] != t_total:
        raise ValueError("camera track and clip disagree on frame count")
    observable = np.linalg.norm(track.translations, axis=1) > 1e-9

    def frame_cost(i, beta):
        trial = track.copy()
        trial.betas[i] = beta
        out = render(trial.camera(i + 1), bg_cloud)
        return rgb_loss(out.rgb, frames[i]).value

    for i in range(t_total):
        if not observable[i]:
            continue
        with _Timer() as timer:
            res = minimize_scalar(lambda b: frame_cost(i, b), bounds=k_bounds,
                                  method="bounded", options={"xatol": xatol})
            track.betas[i] = float(res.x)
        if log is not None:
            log.record(stage, i, {"rgb": float(res.fun)}, timer.ms)

    if refine_pose:
        opt = AdamW({"translations": track.translations},
                    {"translations": pose_lr})
        for _ in range(pose_steps):
            d_tr = np.zeros_like(track.translations)
            for i in range(1, t_total):
                out, ctx = render(track.camera(i + 1), bg_cloud, return_ctx=True)
                term = rgb_loss(out.rgb, frames[i])
                g = render_backward(ctx, d_rgb=term.grads["rendered"])
                d_tr[i] = track.betas[i] * g.d_cam_tvec
            opt.step({"translations": d_tr})

    flag = "" if observable[1:].any() else "scale-unobservable"
    return CameraFit(track=track, scale_observable=observable, flag=flag)


def fit_composition(object_clouds, reference, cameras, predicted_depths,
                    object_masks, ref_masks, k_bounds=(0.25, 4.0), xatol=1e-4,
                    log=None, stage="compose"):
    """Place objects in depth by matching a predicted scene depth map.

    ``object_clouds`` maps object id to its per-frame world clouds.  Each
    non-reference object's factor is searched on log k to minimize the
    affine-invariant depth mismatch over its visible pixels, summed over
    frames; the reference object pins the scale at k = 1.
    """
    if reference not in object_clouds:
        raise ValueError(f"reference object {reference!r} missing")
    n_frames = len(cameras)
    center = cameras[0].center
    factors = {}

    def cost(obj_id, k):
        comp = SceneComposition(camera_center=center, factors={obj_id: k},
                                reference=reference)
        total = 0.0
        for f in range(n_frames):
            pair = {reference: object_clouds[reference][f],
                    obj_id: object_clouds[obj_id][f]}
            scene, _ = compose_scene(pair, comp)
            out = render(cameras[f], scene)
            term = depth_align_loss(out.depth, predicted_depths[f],
                                    [object_masks[obj_id][f]], ref_masks[f])
            total += term.value
        return total / n_frames

    for idx, obj_id in enumerate(sorted(k for k in object_clouds if k != reference)):
        with _Timer() as timer:
            res = minimize_scalar(
                lambda lk: cost(obj_id, float(np.exp(lk))),
                bounds=(np.log(k_bounds[0]), np.log(k_bounds[1])),
                method="bounded", options={"xatol": xatol})
            factors[obj_id] = float(np.exp(res.x))
        if log is not None:
            log.record(stage, idx, {"depth": float(res.fun)}, timer.ms)
    return SceneComposition(camera_center=center, factors=factors,
                            reference=reference)
