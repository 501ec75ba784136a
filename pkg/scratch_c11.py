import sys
import tempfile
import time

import numpy as np

from gs4d.dataset import build_object_crops, load_dataset, write_dataset
from gs4d.fit import FitSchedule, fit_object_motion, fit_world_warp, joint_finetune
from gs4d.metrics import psnr
from gs4d.motion import compose_motion, init_warp_from_bbox
from gs4d.oracle import (CameraSpec, ObjectSpec, SyntheticSceneSpec,
                         generate_scene, render_ground_truth)
from gs4d.renderer import render


def objectify(camera, delta):
    return camera.with_pose(camera.rot, camera.tvec + camera.rot @ delta)


def main(pre_motion, pre_warp, steps):
    t_start = time.perf_counter()
    spec = SyntheticSceneSpec(
        objects=(ObjectSpec(n_gaussians=120, shape="blob", extent=0.8,
                            center=(-1.1, 0.55, 0.0), colors="random",
                            motion="rigid", velocity=(0.5, -0.18, 0.0)),),
        camera=CameraSpec(program="static", distance=6.0),
        n_frames=4, width=128, height=128, seed=31, tracks_per_object=12)
    scene = generate_scene(spec)
    bundle = render_ground_truth(scene, novel_views=())
    tmp = tempfile.mkdtemp()
    write_dataset(bundle, tmp + "/ds")
    ds = load_dataset(tmp + "/ds")
    canonical = scene.objects[0].canonical
    t_count = ds.n_frames

    crops = build_object_crops(ds, "obj0", 0.65, 128)
    anchor = canonical.means.mean(axis=0)
    warp = init_warp_from_bbox(crops.bboxes, ds.cameras, crops.working_depth,
                               anchor)
    frames = [(objectify(cam, warp.deltas[t]), crops.images[t], crops.masks[t])
              for t, cam in enumerate(crops.cameras)]
    field = fit_object_motion(
        canonical, frames, flows=crops.flows,
        schedule=FitSchedule(iterations=pre_motion, batch_size=10, seed=0))
    warp = fit_world_warp(canonical, field, warp, ds.cameras, ds.rgb,
                          masks=ds.masks["obj0"],
                          schedule=FitSchedule(iterations=pre_warp,
                                               batch_size=4, seed=0))
    masks = [ds.masks["obj0"][t] for t in range(t_count)]

    def clip_psnr(fld, wrp):
        scores = []
        for t in range(1, t_count + 1):
            world, _, _ = compose_motion(canonical, fld, wrp, t)
            out = render(ds.cameras[t - 1], world, background=ds.rgb[t - 1])
            scores.append(psnr(out.rgb, ds.rgb[t - 1]))
        return float(np.mean(scores))

    _, _, initial_loss = joint_finetune(canonical, field, warp, ds.cameras,
                                        ds.rgb, masks=masks, steps=0,
                                        batch_size=10, seed=0)
    before = clip_psnr(field, warp)
    t0 = time.perf_counter()
    field2, warp2, returned = joint_finetune(canonical, field, warp,
                                             ds.cameras, ds.rgb, masks=masks,
                                             steps=steps, batch_size=10, seed=0)
    t_joint = time.perf_counter() - t0
    after = clip_psnr(field2, warp2)
    print(f"pre {pre_motion}/{pre_warp} joint {steps}: psnr {before:.2f} -> "
          f"{after:.2f} ({after - before:+.2f} dB), loss {initial_loss:.4e} -> "
          f"{returned:.4e}, joint {t_joint:.0f}s total "
          f"{time.perf_counter() - t_start:.0f}s", flush=True)


if __name__ == "__main__":
    pre_motion = int(sys.argv[1]) if len(sys.argv) > 1 else 150
    pre_warp = int(sys.argv[2]) if len(sys.argv) > 2 else 60
    steps = int(sys.argv[3]) if len(sys.argv) > 3 else 100
    main(pre_motion, pre_warp, steps)
