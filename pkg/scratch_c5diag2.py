import sys
import tempfile

import numpy as np

from gs4d.dataset import build_object_crops, load_dataset, write_dataset
from gs4d.deform import deform
from gs4d.fit import FitSchedule, fit_object_motion
from gs4d.oracle import (CameraSpec, ObjectSpec, SyntheticSceneSpec,
                         generate_scene, render_ground_truth)

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 400
flow_w = float(sys.argv[2]) if len(sys.argv) > 2 else 0.5

spec = SyntheticSceneSpec(
    objects=(ObjectSpec(n_gaussians=140, shape="disk", extent=1.2,
                        colors="uniform", base_color=(0.7, 0.45, 0.2),
                        motion="rigid", spin_axis=(0.0, 0.0, 1.0),
                        spin_deg=15.0),),
    camera=CameraSpec(program="static", distance=6.0),
    n_frames=4, width=128, height=128, seed=21, tracks_per_object=12)
scene = generate_scene(spec)
bundle = render_ground_truth(scene, novel_views=())
tmp = tempfile.mkdtemp()
write_dataset(bundle, tmp + "/ds")
ds = load_dataset(tmp + "/ds")
canonical = scene.objects[0].canonical
crops = build_object_crops(ds, "obj0", 0.65, 128)

frames = [(crops.cameras[t], crops.images[t], crops.masks[t])
          for t in range(ds.n_frames)]
field = fit_object_motion(
    canonical, frames, flows=crops.flows,
    schedule=FitSchedule(iterations=iters, batch_size=10, seed=0),
    weights={"flow": flow_w})

center = canonical.means.mean(axis=0)
r0 = canonical.means[:, :2] - center[:2]
for t in range(1, 5):
    moved, _ = deform(field, canonical, t)
    r1 = moved.means[:, :2] - center[:2]
    cross = r0[:, 0] * r1[:, 1] - r0[:, 1] * r1[:, 0]
    dot = (r0 * r1).sum(axis=1)
    ang = np.degrees(np.arctan2(cross.sum(), dot.sum()))
    drift = np.linalg.norm(moved.means.mean(axis=0) - center)
    print(f"frame {t}: rotation {ang:+.1f} deg (gt {(t - 1) * 15.0:+.1f} "
          f"or split {(t - 2.5) * 15.0:+.1f}), centroid drift {drift:.3f}")
