import sys
import tempfile
import time

import numpy as np
from scipy.ndimage import binary_erosion

from gs4d.dataset import load_dataset, write_dataset
from gs4d.deform import deform
from gs4d.fit import FitSchedule, fit_object_motion
from gs4d.metrics import TrackSet, compute_epe, project_gaussian_tracks
from gs4d.oracle import (CameraSpec, ObjectSpec, SyntheticSceneSpec,
                         generate_scene, render_ground_truth)


def track_epe(clouds, cameras, bundle):
    pred = project_gaussian_tracks(clouds, cameras, bundle.track_uv[:, 0, :],
                                   ids=bundle.track_ids)
    gt = TrackSet(ids=bundle.track_ids, uv=bundle.track_uv,
                  visible=bundle.track_visible)
    return compute_epe(pred, gt).mean_epe


def main(iters, spin, vel_x):
    spec = SyntheticSceneSpec(
        objects=(ObjectSpec(n_gaussians=140, shape="blob", extent=0.8,
                            center=(-0.55, 0.1, 0.0), colors="uniform",
                            base_color=(0.7, 0.45, 0.2), motion="rigid",
                            velocity=(vel_x, -0.12, 0.0),
                            spin_axis=(0.0, 0.0, 1.0), spin_deg=spin),),
        camera=CameraSpec(program="static", distance=6.0),
        n_frames=4, width=128, height=128, seed=21, tracks_per_object=12)
    scene = generate_scene(spec)
    bundle = render_ground_truth(scene, novel_views=())
    disp = np.linalg.norm(bundle.track_uv[:, -1] - bundle.track_uv[:, 0], axis=-1)
    print(f"iters {iters} spin {spin} vel {vel_x}: displacement "
          f"min {disp.min():.1f} mean {disp.mean():.1f} max {disp.max():.1f}",
          flush=True)
    tmp = tempfile.mkdtemp()
    write_dataset(bundle, tmp + "/ds")
    ds = load_dataset(tmp + "/ds")
    canonical = scene.objects[0].canonical

    conf = [binary_erosion(ds.masks["obj0"][t]) for t in range(ds.n_frames - 1)]
    flows = [(ds.flow_fwd[t], conf[t]) for t in range(ds.n_frames - 1)]
    frames = [(ds.cameras[t], ds.rgb[t], None) for t in range(ds.n_frames)]
    schedule = FitSchedule(iterations=iters, batch_size=10, seed=0)

    results = {}
    for label, weights in (("with", None), ("without", {"flow": 0.0})):
        t0 = time.perf_counter()
        field = fit_object_motion(canonical, frames, flows=flows,
                                  schedule=schedule, weights=weights)
        clouds = [deform(field, canonical, t)[0]
                  for t in range(1, ds.n_frames + 1)]
        results[label] = track_epe(clouds, ds.cameras, bundle)
        print(f"  {label:7s} flow: epe {results[label]:.3f} "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)
    print(f"  change {(results['without'] / results['with'] - 1.0) * 100.0:+.0f}%",
          flush=True)


if __name__ == "__main__":
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else 400
    spin = float(sys.argv[2]) if len(sys.argv) > 2 else 10.0
    vel = float(sys.argv[3]) if len(sys.argv) > 3 else 0.35
    main(iters, spin, vel)
