import tempfile
import time

import numpy as np

from gs4d.dataset import build_object_crops, load_dataset, write_dataset
from gs4d.fit import FitSchedule, fit_object_motion, fit_world_warp, warp_defaults
from gs4d.metrics import TrackSet, compute_epe, project_gaussian_tracks
from gs4d.motion import compose_motion, init_warp_from_bbox
from gs4d.oracle import (CameraSpec, ObjectSpec, SyntheticSceneSpec,
                         generate_scene, render_ground_truth)


def objectify(camera, delta):
    return camera.with_pose(camera.rot, camera.tvec + camera.rot @ delta)


def fit_factorized(ds, canonical, schedule, weights=None):
    crops = build_object_crops(ds, "obj0", 0.65, 128)
    anchor = canonical.means.mean(axis=0)
    warp = init_warp_from_bbox(crops.bboxes, ds.cameras, crops.working_depth,
                               anchor)
    frames = [(objectify(cam, warp.deltas[t]), crops.images[t], crops.masks[t])
              for t, cam in enumerate(crops.cameras)]
    field = fit_object_motion(canonical, frames, flows=crops.flows,
                              schedule=schedule, weights=weights)
    warp = fit_world_warp(canonical, field, warp, ds.cameras, ds.rgb,
                          masks=ds.masks["obj0"],
                          schedule=warp_defaults(ds.n_frames, seed=schedule.seed))
    return [compose_motion(canonical, field, warp, t)[0]
            for t in range(1, ds.n_frames + 1)]


def track_epe(clouds, cameras, bundle):
    pred = project_gaussian_tracks(clouds, cameras, bundle.track_uv[:, 0, :],
                                   ids=bundle.track_ids)
    gt = TrackSet(ids=bundle.track_ids, uv=bundle.track_uv,
                  visible=bundle.track_visible)
    return compute_epe(pred, gt).mean_epe


def main(spin_deg, seed, iters=None, arms="both"):
    spec = SyntheticSceneSpec(
        objects=(ObjectSpec(n_gaussians=140, shape="disk", extent=1.2,
                            colors="uniform", base_color=(0.7, 0.45, 0.2),
                            motion="rigid", spin_axis=(0.0, 0.0, 1.0),
                            spin_deg=spin_deg),),
        camera=CameraSpec(program="static", distance=6.0),
        n_frames=4, width=128, height=128, seed=seed, tracks_per_object=12)
    scene = generate_scene(spec)
    bundle = render_ground_truth(scene, novel_views=())
    disp = np.linalg.norm(bundle.track_uv[:, -1] - bundle.track_uv[:, 0], axis=-1)
    print(f"spin {spin_deg} seed {seed}: track displacement "
          f"min {disp.min():.1f} mean {disp.mean():.1f} max {disp.max():.1f} px",
          flush=True)
    tmp = tempfile.mkdtemp()
    write_dataset(bundle, tmp + "/ds")
    ds = load_dataset(tmp + "/ds")
    canonical = scene.objects[0].canonical
    if iters is None:
        schedule = FitSchedule.motion_defaults(ds.n_frames, seed=0)
    else:
        schedule = FitSchedule(iterations=iters, batch_size=10, seed=0)

    if arms in ("both", "with"):
        t0 = time.perf_counter()
        epe_with = track_epe(fit_factorized(ds, canonical, schedule),
                             ds.cameras, bundle)
        print(f"  epe with flow {epe_with:.3f} "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)
    if arms in ("both", "without"):
        t0 = time.perf_counter()
        epe_without = track_epe(
            fit_factorized(ds, canonical, schedule, weights={"flow": 0.0}),
            ds.cameras, bundle)
        print(f"  epe without flow {epe_without:.3f} "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)
    if arms == "both":
        print(f"  change {(epe_without / epe_with - 1.0) * 100.0:+.0f}%",
              flush=True)


if __name__ == "__main__":
    import sys
    spin = float(sys.argv[1]) if len(sys.argv) > 1 else 15.0
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 21
    iters = int(sys.argv[3]) if len(sys.argv) > 3 else None
    arms = sys.argv[4] if len(sys.argv) > 4 else "both"
    main(spin, seed, iters, arms)
