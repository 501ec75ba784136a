"""Command-line pipeline driver.

Stages communicate only through files, so each subcommand can resume from
whatever the previous ones left behind:

    work/
      progress.csv             appended by every fitting stage
      static/<obj>.ply         canonical per-object clouds
      static/background.ply    static background cloud
      motion/<obj>.field       deformation checkpoints
      motion/<obj>.motion      world warp + camera track bundles
      camera/track.json        camera track with fitted translation scales
      compose/composition.json per-object depth scale factors
      renders/*.png            requested novel-view renders
      eval/report.json         metric report

Exit codes: 0 success, 2 bad input, 3 missing prerequisite artifact.  The
``GS4D_THREADS`` environment variable caps render parallelism; results are
identical for any thread count.
"""

import argparse
import os
import sys

import numpy as np

from .camera import orbit_camera
from .cloud import default_cloud
from .config import (
    EngineConfig,
    dump_engine_config,
    dump_scene_spec,
    load_engine_config,
    load_scene_spec,
)
from .dataset import build_object_crops, load_dataset, mask_bbox, write_dataset
from .deform import load_field, save_field
from .fit import (
    ProgressLog,
    fit_camera,
    fit_composition,
    fit_object_motion,
    fit_static,
    fit_world_warp,
    joint_finetune,
)
from .formats import load_cloud, read_manifest, save_cloud, save_png, write_manifest
from .metrics import TrackSet, compute_epe, project_gaussian_tracks, psnr, ssim
from .motion import (
    CameraTrack,
    SceneComposition,
    compose_motion,
    compose_scene,
    init_warp_from_bbox,
    load_motion,
    load_track,
    save_motion,
    save_track,
)
from .oracle import generate_scene, render_ground_truth
from .renderer import render
from .sh import C0

INIT_OBJECT_SPLATS = 400
INIT_BACKGROUND_SPLATS = 600
STATIC_VIEW_BANK = 8     # orbit ring supervising the unseen sides of an object
MOTION_VIEW_BANK = 4     # per-frame novel views for the motion stage
BANK_ELEVATION = 20.0


class MissingArtifact(FileNotFoundError):
    """A stage prerequisite has not been produced yet."""


def _require(path, producer):
    if not os.path.exists(path):
        raise MissingArtifact(f"missing {path}; run `gs4d {producer}` first")
    return path


def _engine_config(args):
    if getattr(args, "config", None):
        return load_engine_config(args.config)
    return EngineConfig()


def _progress_log(work):
    os.makedirs(work, exist_ok=True)
    return ProgressLog(os.path.join(work, "progress.csv"))


def _oracle_scene(dataset):
    """The generating scene, when this dataset carries its spec."""
    path = dataset.scene_spec_path()
    if path is None:
        return None
    return generate_scene(load_scene_spec(path))


def _object_index(name):
    if not name.startswith("obj") or not name[3:].isdigit():
        raise ValueError(f"object id {name!r} is not an oracle object name")
    return int(name[3:])


def _bank_camera(crop_cam, center, radius, azimuth, elevation):
    return orbit_camera(center, radius, azimuth, elevation,
                        fx=crop_cam.fx, fy=crop_cam.fy,
                        cx=crop_cam.width / 2.0, cy=crop_cam.height / 2.0,
                        width=crop_cam.width, height=crop_cam.height,
                        near=crop_cam.near, far=crop_cam.far)


def _static_view_bank(scene, name, crops):
    """Orbit-ring renders of the isolated object, frame 1."""
    cloud = scene.objects[_object_index(name)].cloud_at(0)
    center = cloud.means.mean(axis=0)
    views = []
    for azimuth in np.linspace(0.0, 360.0, STATIC_VIEW_BANK, endpoint=False):
        cam = _bank_camera(crops.cameras[0], center, crops.working_depth,
                           azimuth, BANK_ELEVATION)
        views.append((cam, render(cam, cloud).rgb))
    return views


def _objectify(camera, delta):
    """Camera that sees the object-centric cloud where ``camera`` sees the
    warped one: translating the world by ``delta`` equals shifting the eye."""
    return camera.with_pose(camera.rot, camera.tvec + camera.rot @ delta)


def _motion_view_banks(scene, name, crops, anchor, deltas, seed):
    """Per-frame novel views of the isolated object for the motion stage.

    Targets are rendered from the frame-t ground-truth object, but the paired
    cameras are shifted back by the initial warp so that they supervise the
    object-centric (residual) cloud the deformation stage renders.
    """
    obj = scene.objects[_object_index(name)]
    banks = []
    for t in range(len(crops.cameras)):
        cloud = obj.cloud_at(t)
        center = anchor + deltas[t]
        rng = np.random.default_rng([seed, _object_index(name), t])
        bank = []
        for _ in range(MOTION_VIEW_BANK):
            azimuth = rng.uniform(-60.0, 60.0)
            elevation = rng.uniform(-30.0, 30.0)
            cam = _bank_camera(crops.cameras[0], center, crops.working_depth,
                               azimuth, elevation)
            bank.append((_objectify(cam, deltas[t]), render(cam, cloud).rgb))
        banks.append(bank)
    return banks


def _seed_cloud(camera, image, depth, mask, count, scale, opacity, seed_key):
    """Splats unprojected from masked frame-1 pixels at their stored depth."""
    rng = np.random.default_rng(seed_key)
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise ValueError("cannot seed a cloud from an empty mask")
    picks = rng.integers(0, xs.size, count)
    uv = np.stack([xs[picks] + 0.5, ys[picks] + 0.5], axis=-1)
    means = camera.unproject(uv, depth[ys[picks], xs[picks]])
    cloud = default_cloud(means, scale=scale, opacity=opacity)
    cloud.sh[:, 0, :] = (image[ys[picks], xs[picks]] - 0.5) / C0
    return cloud


def _init_object_cloud(dataset, name, max_scale, seed):
    mask = dataset.masks[name][0]
    camera = dataset.cameras[0]
    bbox = mask_bbox(mask)
    depth_med = np.median(dataset.depth[0][mask])
    extent = max(bbox[2] - bbox[0], bbox[3] - bbox[1]) * depth_med / camera.fx
    # stay under the prune threshold so densification can act as intended
    scale = min(0.5 * extent / np.cbrt(INIT_OBJECT_SPLATS), 0.8 * max_scale)
    return _seed_cloud(camera, dataset.rgb[0], dataset.depth[0], mask,
                       INIT_OBJECT_SPLATS, scale, 0.9, [seed, 1])


def _init_background_cloud(dataset, seed):
    mask = dataset.background_mask()[0]
    camera = dataset.cameras[0]
    depth_med = np.median(dataset.depth[0][mask])
    width_world = camera.width * depth_med / camera.fx
    scale = 0.7 * width_world / np.sqrt(INIT_BACKGROUND_SPLATS)
    return _seed_cloud(camera, dataset.rgb[0], dataset.depth[0], mask,
                       INIT_BACKGROUND_SPLATS, scale, 0.95, [seed, 2])


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    spec = load_scene_spec(args.spec)
    bundle = render_ground_truth(generate_scene(spec), novel_views=())
    write_dataset(bundle, args.out, spec_text=dump_scene_spec(spec))
    print(f"wrote dataset with {bundle.n_frames} frames, "
          f"{len(bundle.masks)} objects to {args.out}")
    return 0


def cmd_fit_static(args):
    cfg = _engine_config(args)
    dataset = load_dataset(args.dataset)
    scene = _oracle_scene(dataset)
    log = _progress_log(args.work)
    static_dir = os.path.join(args.work, "static")
    os.makedirs(static_dir, exist_ok=True)
    schedule = cfg.static_schedule()

    for name in dataset.objects:
        crops = build_object_crops(dataset, name, cfg.crop_occupancy,
                                   cfg.image_size)
        views = [crops.frames()[0]]
        if scene is not None:
            views += _static_view_bank(scene, name, crops)
        init = _init_object_cloud(dataset, name, cfg.densify_max_scale, cfg.seed)
        cloud = fit_static(views, init, schedule=schedule,
                           densify=cfg.densify(), log=log,
                           stage=f"static/{name}")
        path = os.path.join(static_dir, f"{name}.ply")
        save_cloud(path, cloud)
        print(f"wrote {path} ({len(cloud)} splats)")

    # background splats are scene-sized, far beyond the object-scale prune
    # threshold, so densification stays off for this fit
    bg_views = [(dataset.cameras[t], dataset.rgb[t], dataset.background_mask()[t])
                for t in range(dataset.n_frames)]
    bg_cloud = fit_static(bg_views, _init_background_cloud(dataset, cfg.seed),
                          schedule=schedule, densify=None, log=log,
                          stage="static/background")
    path = os.path.join(static_dir, "background.ply")
    save_cloud(path, bg_cloud)
    print(f"wrote {path} ({len(bg_cloud)} splats)")
    return 0


def cmd_fit_motion(args):
    cfg = _engine_config(args)
    dataset = load_dataset(args.dataset)
    scene = _oracle_scene(dataset)
    log = _progress_log(args.work)
    motion_dir = os.path.join(args.work, "motion")
    os.makedirs(motion_dir, exist_ok=True)
    bg_path = os.path.join(args.work, "static", "background.ply")
    background = load_cloud(bg_path) if os.path.exists(bg_path) else None
    track = CameraTrack.from_poses(dataset.cameras)

    for name in dataset.objects:
        canonical_path = os.path.join(args.work, "static", f"{name}.ply")
        _require(canonical_path, "fit-static")
        canonical = load_cloud(canonical_path)
        crops = build_object_crops(dataset, name, cfg.crop_occupancy,
                                   cfg.image_size)
        # the bbox warp carries the gross motion; shifting the crop cameras
        # by its inverse leaves the field only the object-centric residual
        anchor = canonical.means.mean(axis=0)
        warp = init_warp_from_bbox(crops.bboxes, dataset.cameras,
                                   crops.working_depth, anchor=anchor)
        frames = [(_objectify(cam, warp.deltas[t]), crops.images[t], crops.masks[t])
                  for t, cam in enumerate(crops.cameras)]
        banks = (_motion_view_banks(scene, name, crops, anchor, warp.deltas,
                                    cfg.seed)
                 if scene is not None else None)
        field = fit_object_motion(
            canonical, frames, flows=crops.flows, novel_views=banks,
            schedule=cfg.motion_schedule(dataset.n_frames),
            weights=cfg.loss_weights(), neighbors=cfg.rigidity_neighbors,
            log=log, stage=f"motion/{name}")
        warp = fit_world_warp(canonical, field, warp, dataset.cameras,
                              dataset.rgb, masks=dataset.masks[name],
                              background_cloud=background,
                              schedule=cfg.warp_schedule(dataset.n_frames),
                              log=log, stage=f"warp/{name}")
        field, warp, _ = joint_finetune(
            canonical, field, warp, dataset.cameras, dataset.rgb,
            masks=dataset.masks[name], background_cloud=background,
            steps=cfg.joint_steps, batch_size=cfg.joint_batch, seed=cfg.seed,
            lr_scale=cfg.joint_lr_scale, log=log, stage=f"joint/{name}")
        field_path = os.path.join(motion_dir, f"{name}.field")
        save_field(field, field_path)
        bundle_path = os.path.join(motion_dir, f"{name}.motion")
        save_motion(bundle_path, warp, track, field_ref=f"{name}.field")
        print(f"wrote {field_path} and {bundle_path}")
    return 0


def cmd_fit_camera(args):
    cfg = _engine_config(args)
    dataset = load_dataset(args.dataset)
    log = _progress_log(args.work)
    bg_path = os.path.join(args.work, "static", "background.ply")
    _require(bg_path, "fit-static")
    background = load_cloud(bg_path)
    init = CameraTrack.from_poses(dataset.cameras)
    result = fit_camera(dataset.rgb, background, init, log=log)
    camera_dir = os.path.join(args.work, "camera")
    os.makedirs(camera_dir, exist_ok=True)
    path = os.path.join(camera_dir, "track.json")
    save_track(path, result.track)
    message = f"wrote {path}"
    if result.flag:
        message += f" ({result.flag})"
    print(message)
    return 0


def _load_objects(work, dataset):
    """Canonical cloud, deformation field and warp for every object."""
    objects = {}
    for name in dataset.objects:
        canonical_path = os.path.join(work, "static", f"{name}.ply")
        _require(canonical_path, "fit-static")
        bundle_path = os.path.join(work, "motion", f"{name}.motion")
        _require(bundle_path, "fit-motion")
        warp, _, field_ref = load_motion(bundle_path)
        field_path = os.path.join(work, "motion", field_ref)
        _require(field_path, "fit-motion")
        objects[name] = (load_cloud(canonical_path), load_field(field_path), warp)
    return objects


def _camera_track(work, dataset):
    path = os.path.join(work, "camera", "track.json")
    if os.path.exists(path):
        return load_track(path)
    return CameraTrack.from_poses(dataset.cameras)


def _composition(work, dataset, cameras):
    path = os.path.join(work, "compose", "composition.json")
    if not os.path.exists(path):
        return SceneComposition(camera_center=cameras[0].center,
                                factors={name: 1.0 for name in dataset.objects},
                                reference="background")
    payload = read_manifest(path)
    return SceneComposition(camera_center=np.array(payload["camera_center"]),
                            factors=payload["factors"],
                            reference=payload["reference"])


def _scene_cloud(objects, background, composition, frame):
    clouds = {"background": background}
    for name, (canonical, field, warp) in objects.items():
        clouds[name] = compose_motion(canonical, field, warp, frame)[0]
    merged, _ = compose_scene(clouds, composition)
    return merged


def cmd_compose(args):
    dataset = load_dataset(args.dataset)
    log = _progress_log(args.work)
    bg_path = os.path.join(args.work, "static", "background.ply")
    _require(bg_path, "fit-static")
    background = load_cloud(bg_path)
    objects = _load_objects(args.work, dataset)
    track = _camera_track(args.work, dataset)
    cameras = track.cameras()
    n = dataset.n_frames
    clouds = {"background": [background] * n}
    for name, (canonical, field, warp) in objects.items():
        clouds[name] = [compose_motion(canonical, field, warp, t)[0]
                        for t in range(1, n + 1)]
    composition = fit_composition(
        clouds, "background", cameras, dataset.depth,
        object_masks=dataset.masks, ref_masks=dataset.background_mask(),
        log=log)
    compose_dir = os.path.join(args.work, "compose")
    os.makedirs(compose_dir, exist_ok=True)
    path = os.path.join(compose_dir, "composition.json")
    write_manifest(path, {
        "reference": composition.reference,
        "camera_center": composition.camera_center.tolist(),
        "factors": composition.factors,
    })
    print(f"wrote {path}")
    for name in sorted(composition.factors):
        print(f"  {name}: k = {composition.factors[name]:.4f}")
    return 0


def cmd_render(args):
    dataset = load_dataset(args.dataset)
    bg_path = os.path.join(args.work, "static", "background.ply")
    _require(bg_path, "fit-static")
    background = load_cloud(bg_path)
    objects = _load_objects(args.work, dataset)
    track = _camera_track(args.work, dataset)
    composition = _composition(args.work, dataset, track.cameras())
    frame = args.t
    if not 1 <= frame <= dataset.n_frames:
        raise ValueError(f"frame {frame} outside 1..{dataset.n_frames}")
    merged = _scene_cloud(objects, background, composition, frame)

    scene = _oracle_scene(dataset)
    if scene is not None:
        center = np.asarray(scene.spec.camera.target, dtype=np.float64)
    else:
        center = merged.means.mean(axis=0)
    base = track.camera(frame)
    radius = float(np.linalg.norm(base.center - center))
    camera = orbit_camera(center, radius, args.azimuth, args.elevation,
                          fx=base.fx, fy=base.fy, cx=base.cx, cy=base.cy,
                          width=base.width, height=base.height,
                          near=base.near, far=base.far)
    out = args.out
    if out is None:
        os.makedirs(os.path.join(args.work, "renders"), exist_ok=True)
        out = os.path.join(
            args.work, "renders",
            f"az{args.azimuth:+08.2f}_el{args.elevation:+07.2f}_t{frame:03d}.png")
    save_png(out, render(camera, merged).rgb)
    print(f"wrote {out}")
    return 0


def cmd_eval(args):
    dataset = load_dataset(args.dataset)
    bg_path = os.path.join(args.work, "static", "background.ply")
    _require(bg_path, "fit-static")
    background = load_cloud(bg_path)
    objects = _load_objects(args.work, dataset)
    track = _camera_track(args.work, dataset)
    composition = _composition(args.work, dataset, track.cameras())
    n = dataset.n_frames
    frame_clouds = [_scene_cloud(objects, background, composition, t)
                    for t in range(1, n + 1)]
    cameras = track.cameras()

    gt = TrackSet(ids=dataset.track_ids, uv=dataset.track_uv,
                  visible=dataset.track_visible.astype(bool))
    predicted = project_gaussian_tracks(frame_clouds, cameras,
                                        dataset.track_uv[:, 0, :],
                                        ids=dataset.track_ids)
    report = compute_epe(predicted, gt)

    psnrs = []
    ssims = []
    for t in range(n):
        rendered = render(cameras[t], frame_clouds[t]).rgb
        psnrs.append(psnr(rendered, dataset.rgb[t]))
        ssims.append(ssim(rendered, dataset.rgb[t]))

    payload = {
        "epe": report.as_dict(),
        "psnr_per_frame": psnrs,
        "ssim_per_frame": ssims,
        "psnr_mean": float(np.mean(psnrs)),
        "ssim_mean": float(np.mean(ssims)),
        "n_frames": n,
        "objects": dataset.objects,
    }
    eval_dir = os.path.join(args.work, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    out = args.out or os.path.join(eval_dir, "report.json")
    write_manifest(out, payload)

    rows = [
        ("mean EPE", f"{report.mean_epe:.4f} px"),
        ("median EPE", f"{report.median_epe:.4f} px"),
        ("mean EPE (visible)", f"{report.mean_epe_visible:.4f} px"),
        ("mean EPE (occluded)", f"{report.mean_epe_occluded:.4f} px"),
        ("points evaluated", str(report.n_points)),
        ("PSNR", f"{payload['psnr_mean']:.2f} dB"),
        ("SSIM", f"{payload['ssim_mean']:.4f}"),
    ]
    print(f"{'metric':<22}value")
    for label, value in rows:
        print(f"{label:<22}{value}")
    print(f"report written to {out}")
    return 0


def cmd_dump_config(args):
    sys.stdout.write(dump_engine_config(_engine_config(args)))
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gs4d",
        description="Fit factorized 4D Gaussian scenes to segmented video "
                    "datasets and evaluate them.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, dataset=True, work=True, config=True):
        p = sub.add_parser(name, help=help_text)
        if dataset:
            p.add_argument("--dataset", required=True,
                           help="dataset directory (see gen)")
        if work:
            p.add_argument("--work", required=True,
                           help="working directory for stage artifacts")
        if config:
            p.add_argument("--config", help="engine config file (key = value)")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate a synthetic ground-truth dataset",
            dataset=False, work=False, config=False)
    p.add_argument("--spec", required=True, help="scene spec file")
    p.add_argument("--out", required=True, help="dataset directory to create")

    add("fit-static", cmd_fit_static,
        "lift canonical per-object clouds and the background")
    add("fit-motion", cmd_fit_motion,
        "fit deformation fields and world warps per object")
    add("fit-camera", cmd_fit_camera,
        "fit the per-frame camera translation scales")
    add("compose", cmd_compose,
        "fit per-object depth scales against predicted depth")

    p = add("render", cmd_render, "render a composed novel view", config=False)
    p.add_argument("--azimuth", type=float, required=True, help="degrees")
    p.add_argument("--elevation", type=float, required=True, help="degrees")
    p.add_argument("--t", type=int, required=True, help="1-based frame")
    p.add_argument("--out", help="output PNG (default under work/renders)")

    p = add("eval", cmd_eval, "evaluate tracks and image quality", config=False)
    p.add_argument("--out", help="report JSON path (default work/eval/report.json)")

    add("dump-config", cmd_dump_config,
        "print the effective engine configuration",
        dataset=False, work=False)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
