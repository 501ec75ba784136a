import sys
import time

import numpy as np

from gs4d.camera import orbit_camera
from gs4d.cloud import default_cloud
from gs4d.fit import DensifyConfig, FitSchedule, fit_static
from gs4d.metrics import psnr
from gs4d.oracle import ObjectSpec, SyntheticSceneSpec, generate_scene, surface_depth
from gs4d.renderer import render
from gs4d.sh import C0

SIZE = 128
FX = 0.5 * SIZE / np.tan(np.radians(25.0))
INTR = dict(fx=FX, fy=FX, cx=SIZE / 2.0, cy=SIZE / 2.0, width=SIZE, height=SIZE)


def build(n_init=224, radius=2.1, iters=1000, seed=7, init_scale=0.02,
          max_scale=0.12, grad_threshold=0.5):
    spec = SyntheticSceneSpec(
        objects=(ObjectSpec(n_gaussians=500, extent=1.0, colors="gradient",
                            motion="static"),),
        n_frames=1, width=SIZE, height=SIZE, seed=seed)
    gt = generate_scene(spec).objects[0].canonical

    train, held = [], []
    for k in range(8):
        cam = orbit_camera((0, 0, 0), radius, 45.0 * k,
                           20.0 if k % 2 == 0 else -20.0, **INTR)
        train.append((cam, render(cam, gt).rgb))
    for k in range(4):
        cam = orbit_camera((0, 0, 0), radius, 22.5 + 90.0 * k, 0.0, **INTR)
        held.append((cam, render(cam, gt).rgb))

    rng = np.random.default_rng(0)
    per_view = n_init // len(train)
    means, colors = [], []
    for cam, img in train:
        out = render(cam, gt)
        depth = surface_depth(out.depth, out.alpha, cam.far)
        ys, xs = np.nonzero(np.isfinite(depth))
        picks = rng.integers(0, xs.size, per_view)
        uv = np.stack([xs[picks] + 0.5, ys[picks] + 0.5], axis=-1)
        means.append(cam.unproject(uv, depth[ys[picks], xs[picks]]))
        colors.append(img[ys[picks], xs[picks]])
    init = default_cloud(np.concatenate(means), scale=init_scale, opacity=0.9)
    init.sh[:, 0, :] = (np.concatenate(colors) - 0.5) / C0

    t0 = time.perf_counter()
    cloud = fit_static(train, init,
                       schedule=FitSchedule(iterations=iters, batch_size=16, seed=0),
                       densify=DensifyConfig(max_scale=max_scale,
                                             grad_threshold=grad_threshold))
    dt = time.perf_counter() - t0
    scores = [psnr(render(cam, cloud).rgb, img) for cam, img in held]
    print(f"n_init {n_init} iters {iters} max_scale {max_scale} "
          f"thresh {grad_threshold} init_scale {init_scale}: "
          f"{dt:.0f}s, {len(cloud)} splats, "
          f"held-out {['%.1f' % s for s in scores]} mean {np.mean(scores):.2f}",
          flush=True)
    return np.mean(scores)


if __name__ == "__main__":
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else 250
    max_scale = float(sys.argv[2]) if len(sys.argv) > 2 else 0.12
    thresh = float(sys.argv[3]) if len(sys.argv) > 3 else 0.5
    init_scale = float(sys.argv[4]) if len(sys.argv) > 4 else 0.02
    n_init = int(sys.argv[5]) if len(sys.argv) > 5 else 224
    build(n_init=n_init, iters=iters, max_scale=max_scale,
          grad_threshold=thresh, init_scale=init_scale)
