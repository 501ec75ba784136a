"""Tiled EWA splat rasterizer with an analytic backward pass.

Forward semantics are defined per pixel, front to back over a single global
depth order (camera-space z of the center, Gaussian id as tie-break):

* a splat contributes iff its quadratic falloff exceeds ``exp(-4.5)`` (the 3
  sigma ellipse), its alpha is at least 1/255, and the running transmittance
  is still at least 1e-4;
* alpha is ``sigmoid(opacity_logit) * exp(power)`` clamped to 0.999;
* color, depth and flow accumulate ``alpha_i * T_i`` weighted payloads, and
  whatever transmittance remains goes to the background color and far depth.

The tiled implementation reproduces those semantics bit for bit: excluded
splats are zeroed (adding 0.0 is exact), and all cross-splat reductions use
``cumsum``/``cumprod``, which accumulate strictly sequentially.  Tiles are
pure functions merged in a fixed order, so results do not depend on
``GS4D_THREADS``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import projection_jacobian
from .cloud import sigmoid
from .geometry import build_covariance, covariance_backward
from .parallel import ordered_map
from .sh import evaluate_sh, evaluate_sh_backward

TILE = 16
LOWPASS = 0.3          # px^2 added to both screen-space variances
POWER_CUTOFF = -4.5    # contribution limit: 3 sigma ellipse
ALPHA_SKIP = 1.0 / 255.0
ALPHA_CLAMP = 0.999
T_CUTOFF = 1e-4


@dataclass
class SplatProjection:
    """Screen-space quantities of the visible splats, in global depth order."""

    index: np.ndarray     # (M,) indices into the source cloud
    mean2d: np.ndarray    # (M, 2) pixel coordinates of the centers
    depth: np.ndarray     # (M,) camera-space z
    conic: np.ndarray     # (M, 3) inverse 2D covariance as (A, B, C)
    radius: np.ndarray    # (M,) 3 sigma screen footprint radius
    color: np.ndarray     # (M, 3) decoded RGB
    opacity: np.ndarray   # (M,) activated opacity
    p_cam: np.ndarray     # (M, 3) camera-space centers
    cov2d: np.ndarray     # (M, 2, 2) screen covariance incl. low-pass
    view_dir: np.ndarray  # (M, 3) unit camera-to-center directions


@dataclass
class RenderOutput:
    rgb: np.ndarray                      # (H, W, 3)
    depth: np.ndarray                    # (H, W)
    alpha: np.ndarray                    # (H, W)
    flow: Optional[np.ndarray] = None    # (H, W, 2) forward flow in pixels
    flow_valid: Optional[np.ndarray] = None  # (H, W) bool


@dataclass
class RenderGradients:
    d_means: np.ndarray
    d_rotations: np.ndarray
    d_log_scales: np.ndarray
    d_opacity_logits: np.ndarray
    d_sh: np.ndarray
    d_cam_tvec: np.ndarray
    d_means_next: Optional[np.ndarray] = None  # flow target positions


@dataclass
class RenderContext:
    camera: object
    cloud: object
    proj: SplatProjection
    tiles: list            # [(y0, y1, x0, x1, member_positions)]
    background: np.ndarray  # (H, W, 3)
    flow_payload: Optional[np.ndarray]     # (M, 2) or None
    flow_valid_mask: Optional[np.ndarray]  # (M,) bool, next projection usable
    p_cam_next: Optional[np.ndarray]       # (M, 3)
    output: RenderOutput


def project_gaussian(cloud, camera, lowpass=LOWPASS):
    """Project a cloud to screen space, cull, and sort front to back.

    Culls splats behind the near plane and splats whose 3 sigma footprint
    misses the image.  The low-pass term keeps the 2D covariance invertible,
    so no conditioning cull is needed.  Ties in depth break on Gaussian id,
    which makes the order (and thus compositing) reproducible.
    """
    p_cam = camera.to_camera(cloud.means)
    z = p_cam[:, 2]
    front = z > camera.near
    idx = np.nonzero(front)[0]
    if idx.size == 0:
        return _empty_projection(cloud)
    p_cam = p_cam[idx]
    z = z[idx]

    u = camera.fx * p_cam[:, 0] / z + camera.cx
    v = camera.fy * p_cam[:, 1] / z + camera.cy
    mean2d = np.stack([u, v], axis=-1)

    sigma = build_covariance(cloud.rotations[idx], cloud.log_scales[idx])
    vcam = np.einsum("ij,njk,lk->nil", camera.rot, sigma, camera.rot)
    jac = projection_jacobian(camera, p_cam)
    cov2d = np.einsum("nij,njk,nlk->nil", jac, vcam, jac)
    cov2d[:, 0, 0] += lowpass
    cov2d[:, 1, 1] += lowpass

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(lam_max)

    on_image = (
        (mean2d[:, 0] + radius > 0.0)
        & (mean2d[:, 0] - radius < camera.width)
        & (mean2d[:, 1] + radius > 0.0)
        & (mean2d[:, 1] - radius < camera.height)
    )
    if not np.all(on_image):
        keep = np.nonzero(on_image)[0]
        idx, p_cam, z, mean2d, cov2d, det, radius = (
            idx[keep], p_cam[keep], z[keep], mean2d[keep], cov2d[keep], det[keep], radius[keep],
        )
    if idx.size == 0:
        return _empty_projection(cloud)

    conic = np.stack(
        [cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], axis=-1
    )

    center = camera.center
    offset = cloud.means[idx] - center
    dist = np.linalg.norm(offset, axis=-1, keepdims=True)
    view_dir = offset / dist
    color = evaluate_sh(cloud.sh[idx], view_dir)
    opacity = sigmoid(cloud.opacity_logits[idx])

    order = np.lexsort((cloud.ids[idx], z))
    return SplatProjection(
        index=idx[order],
        mean2d=mean2d[order],
        depth=z[order],
        conic=conic[order],
        radius=radius[order],
        color=color[order],
        opacity=opacity[order],
        p_cam=p_cam[order],
        cov2d=cov2d[order],
        view_dir=view_dir[order],
    )


def _empty_projection(cloud):
    return SplatProjection(
        index=np.zeros(0, dtype=np.int64),
        mean2d=np.zeros((0, 2)),
        depth=np.zeros(0),
        conic=np.zeros((0, 3)),
        radius=np.zeros(0),
        color=np.zeros((0, 3)),
        opacity=np.zeros(0),
        p_cam=np.zeros((0, 3)),
        cov2d=np.zeros((0, 2, 2)),
        view_dir=np.zeros((0, 3)),
    )


def _tile_layout(camera, proj):
    """Assign sorted splats to the 16x16 tiles their footprints overlap."""
    n_tx = (camera.width + TILE - 1) // TILE
    n_ty = (camera.height + TILE - 1) // TILE
    mx, my, r = proj.mean2d[:, 0], proj.mean2d[:, 1], proj.radius
    tx0 = np.clip(np.floor((mx - r) / TILE).astype(np.int64), 0, n_tx - 1)
    tx1 = np.clip(np.floor((mx + r) / TILE).astype(np.int64), 0, n_tx - 1)
    ty0 = np.clip(np.floor((my - r) / TILE).astype(np.int64), 0, n_ty - 1)
    ty1 = np.clip(np.floor((my + r) / TILE).astype(np.int64), 0, n_ty - 1)
    members = [[] for _ in range(n_tx * n_ty)]
    for pos in range(proj.index.size):
        for ty in range(ty0[pos], ty1[pos] + 1):
            row = ty * n_tx
            for tx in range(tx0[pos], tx1[pos] + 1):
                members[row + tx].append(pos)
    tiles = []
    for ty in range(n_ty):
        y0, y1 = ty * TILE, min((ty + 1) * TILE, camera.height)
        for tx in range(n_tx):
            x0, x1 = tx * TILE, min((tx + 1) * TILE, camera.width)
            tiles.append((y0, y1, x0, x1, np.asarray(members[ty * n_tx + tx], dtype=np.int64)))
    return tiles


def _tile_chain(proj, members, px, py):
    """Per-tile compositing chain; shared by forward and backward.

    Returns ``(dx, dy, power, raw_alpha, alpha, t_excl, weight, t_end)`` where
    ``alpha`` is zeroed for non-contributing splats and ``t_excl`` is the
    transmittance in front of each splat.  All reductions along the splat axis
    are strictly sequential.
    """
    mx = proj.mean2d[members, 0][:, None]
    my = proj.mean2d[members, 1][:, None]
    a = proj.conic[members, 0][:, None]
    b = proj.conic[members, 1][:, None]
    c = proj.conic[members, 2][:, None]
    opac = proj.opacity[members][:, None]

    dx = px[None, :] - mx
    dy = py[None, :] - my
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    raw_alpha = opac * np.exp(power)
    alpha = np.minimum(raw_alpha, ALPHA_CLAMP)
    alpha = np.where((power > POWER_CUTOFF) & (alpha >= ALPHA_SKIP), alpha, 0.0)

    t_incl = np.cumprod(1.0 - alpha, axis=0)
    t_before = np.empty_like(t_incl)
    t_before[0] = 1.0
    t_before[1:] = t_incl[:-1]
    alpha = np.where(t_before >= T_CUTOFF, alpha, 0.0)

    t_incl = np.cumprod(1.0 - alpha, axis=0)
    t_excl = np.empty_like(t_incl)
    t_excl[0] = 1.0
    t_excl[1:] = t_incl[:-1]
    weight = alpha * t_excl
    t_end = t_incl[-1]
    return dx, dy, power, raw_alpha, alpha, t_excl, weight, t_end


def _seq_sum(terms):
    """Sequential sum along axis 0 (cumsum is left-to-right, so bit stable)."""
    return np.cumsum(terms, axis=0)[-1]


def render(camera, cloud, background=(0.0, 0.0, 0.0), flow_cloud=None,
           alpha_min=0.5, lowpass=LOWPASS, return_ctx=False):
    """Rasterize a cloud.  Optionally also composites 2D flow toward
    ``flow_cloud``, a cloud holding the same splats at the next time step.

    ``background`` is an RGB triple or a full (H, W, 3) image; uncovered
    transmittance receives it, and the far plane depth.  Flow pixels whose
    accumulated alpha falls below ``alpha_min`` are flagged invalid.
    """
    h, w = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64)
    if bg.ndim == 1:
        bg = np.broadcast_to(bg, (h, w, 3)).copy()
    elif bg.shape != (h, w, 3):
        raise ValueError(f"background image must be ({h}, {w}, 3), got {bg.shape}")

    proj = project_gaussian(cloud, camera, lowpass=lowpass)
    tiles = _tile_layout(camera, proj)

    flow_payload = None
    flow_valid_mask = None
    p_cam_next = None
    if flow_cloud is not None:
        if len(flow_cloud) != len(cloud):
            raise ValueError("flow cloud must pair splats one-to-one with the source cloud")
        p_cam_next = camera.to_camera(flow_cloud.means[proj.index])
        zn = p_cam_next[:, 2]
        flow_valid_mask = zn > camera.near
        zs = np.where(flow_valid_mask, zn, 1.0)
        un = camera.fx * p_cam_next[:, 0] / zs + camera.cx
        vn = camera.fy * p_cam_next[:, 1] / zs + camera.cy
        flow_payload = np.stack([un, vn], axis=-1) - proj.mean2d
        flow_payload[~flow_valid_mask] = 0.0

    rgb = np.empty((h, w, 3))
    depth = np.empty((h, w))
    alpha_map = np.empty((h, w))
    flow = np.empty((h, w, 2)) if flow_cloud is not None else None
    grid = camera.pixel_grid()

    def run_tile(tile):
        y0, y1, x0, x1, members = tile
        px = grid[y0:y1, x0:x1, 0].ravel()
        py = grid[y0:y1, x0:x1, 1].ravel()
        shape = (y1 - y0, x1 - x0)
        if members.size == 0:
            t_end = np.ones(px.size)
            out_rgb = t_end[:, None] * bg[y0:y1, x0:x1].reshape(-1, 3)
            out_depth = t_end * camera.far
            out_flow = np.zeros((px.size, 2)) if flow_cloud is not None else None
            return shape, out_rgb, out_depth, 1.0 - t_end, out_flow
        _, _, _, _, _, _, weight, t_end = _tile_chain(proj, members, px, py)
        out_rgb = _seq_sum(weight[:, :, None] * proj.color[members][:, None, :])
        out_rgb = out_rgb + t_end[:, None] * bg[y0:y1, x0:x1].reshape(-1, 3)
        out_depth = _seq_sum(weight * proj.depth[members][:, None]) + t_end * camera.far
        out_flow = None
        if flow_cloud is not None:
            out_flow = _seq_sum(weight[:, :, None] * flow_payload[members][:, None, :])
        return shape, out_rgb, out_depth, 1.0 - t_end, out_flow

    results = ordered_map(run_tile, tiles)
    for tile, res in zip(tiles, results):
        y0, y1, x0, x1, _ = tile
        shape, out_rgb, out_depth, out_alpha, out_flow = res
        rgb[y0:y1, x0:x1] = out_rgb.reshape(shape + (3,))
        depth[y0:y1, x0:x1] = out_depth.reshape(shape)
        alpha_map[y0:y1, x0:x1] = out_alpha.reshape(shape)
        if flow is not None:
            flow[y0:y1, x0:x1] = out_flow.reshape(shape + (2,))

    output = RenderOutput(
        rgb=rgb,
        depth=depth,
        alpha=alpha_map,
        flow=flow,
        flow_valid=(alpha_map >= alpha_min) if flow is not None else None,
    )
    if not return_ctx:
        return output
    ctx = RenderContext(
        camera=camera,
        cloud=cloud,
        proj=proj,
        tiles=tiles,
        background=bg,
        flow_payload=flow_payload,
        flow_valid_mask=flow_valid_mask,
        p_cam_next=p_cam_next,
        output=output,
    )
    return output, ctx


def render_flow(camera, cloud, cloud_next, background=(0.0, 0.0, 0.0), alpha_min=0.5,
                return_ctx=False):
    """Render with the forward-flow channel toward ``cloud_next`` filled in."""
    return render(camera, cloud, background=background, flow_cloud=cloud_next,
                  alpha_min=alpha_min, return_ctx=return_ctx)


def composite_weights(camera, cloud, points_px):
    """Per-splat compositing weights at arbitrary pixel positions.

    Returns ``(weights, index)`` where ``weights[m, p]`` is the contribution
    ``alpha_m * T_m`` splat ``index[m]`` would receive at pixel position
    ``points_px[p]``, under exactly the rasterizer's cutoff and ordering
    rules.  Columns sum to the accumulated alpha at that position.
    """
    proj = project_gaussian(cloud, camera)
    pts = np.asarray(points_px, dtype=np.float64).reshape(-1, 2)
    if proj.index.size == 0:
        return np.zeros((0, pts.shape[0])), proj.index
    members = np.arange(proj.index.size)
    *_, weight, _ = _tile_chain(proj, members, pts[:, 0], pts[:, 1])
    return weight, proj.index


def render_backward(ctx, d_rgb=None, d_depth=None, d_alpha=None, d_flow=None):
    """Pull image-space gradients back to cloud parameters and camera translation.

    Any of the upstream maps may be None (treated as zero).  Returns dense
    per-splat gradients; culled splats receive zeros.  When the forward pass
    composited flow, ``d_means_next`` carries the gradient w.r.t. the
    next-step splat positions.
    """
    camera, cloud, proj = ctx.camera, ctx.cloud, ctx.proj
    h, w = camera.height, camera.width
    if d_flow is not None and ctx.flow_payload is None:
        raise ValueError("flow gradient given but the forward pass composited no flow")
    if d_rgb is None:
        d_rgb = np.zeros((h, w, 3))
    if d_depth is None:
        d_depth = np.zeros((h, w))
    if d_alpha is None:
        d_alpha = np.zeros((h, w))
    if d_flow is None and ctx.flow_payload is not None:
        d_flow = np.zeros((h, w, 2))

    m = proj.index.size
    d_mean2d = np.zeros((m, 2))
    d_conic = np.zeros((m, 3))
    d_color = np.zeros((m, 3))
    d_depth_pay = np.zeros(m)
    d_opac = np.zeros(m)
    d_flow_pay = np.zeros((m, 2)) if ctx.flow_payload is not None else None
    grid = camera.pixel_grid()
    far = camera.far

    def run_tile(tile):
        y0, y1, x0, x1, members = tile
        if members.size == 0:
            return None
        px = grid[y0:y1, x0:x1, 0].ravel()
        py = grid[y0:y1, x0:x1, 1].ravel()
        dx, dy, power, raw_alpha, alpha, t_excl, weight, t_end = _tile_chain(
            proj, members, px, py
        )
        g_rgb = d_rgb[y0:y1, x0:x1].reshape(-1, 3)
        g_depth = d_depth[y0:y1, x0:x1].reshape(-1)
        g_alpha = d_alpha[y0:y1, x0:x1].reshape(-1)
        bg = ctx.background[y0:y1, x0:x1].reshape(-1, 3)

        col = proj.color[members]
        dep = proj.depth[members]
        # d loss / d weight_i for every (splat, pixel) pair
        s = np.einsum("kc,pc->kp", col, g_rgb) + dep[:, None] * g_depth[None, :] + g_alpha[None, :]
        s_bg = np.einsum("pc,pc->p", bg, g_rgb) + far * g_depth
        if d_flow_pay is not None:
            g_flow = d_flow[y0:y1, x0:x1].reshape(-1, 2)
            s = s + np.einsum("ka,pa->kp", ctx.flow_payload[members], g_flow)

        top = weight * s
        total = _seq_sum(top)
        suffix = total[None, :] - np.cumsum(top, axis=0) + t_end[None, :] * s_bg[None, :]
        included = alpha > 0.0
        # alpha is clamped at 0.999, so 1 - alpha stays well away from zero
        dalpha = t_excl * s - suffix / (1.0 - alpha)
        dalpha = np.where(included, dalpha, 0.0)
        live = raw_alpha < ALPHA_CLAMP
        d_raw = np.where(live, dalpha, 0.0)

        opac = proj.opacity[members][:, None]
        gauss = np.exp(power)
        d_opac_t = _seq_colsum(d_raw * gauss)
        d_power = d_raw * raw_alpha  # opac * gauss
        a = proj.conic[members, 0][:, None]
        b = proj.conic[members, 1][:, None]
        c = proj.conic[members, 2][:, None]
        d_mx = _seq_colsum(d_power * (a * dx + b * dy))
        d_my = _seq_colsum(d_power * (c * dy + b * dx))
        d_a = _seq_colsum(d_power * (-0.5 * dx * dx))
        d_b = _seq_colsum(d_power * (-dx * dy))
        d_c = _seq_colsum(d_power * (-0.5 * dy * dy))
        d_col_t = np.einsum("kp,pc->kc", weight, g_rgb)
        d_dep_t = np.einsum("kp,p->k", weight, g_depth)
        d_flow_t = None
        if d_flow_pay is not None:
            d_flow_t = np.einsum("kp,pa->ka", weight, g_flow)
        return members, d_mx, d_my, d_a, d_b, d_c, d_col_t, d_dep_t, d_opac_t, d_flow_t

    results = ordered_map(run_tile, ctx.tiles)
    for res in results:
        if res is None:
            continue
        members, d_mx, d_my, d_a, d_b, d_c, d_col_t, d_dep_t, d_opac_t, d_flow_t = res
        np.add.at(d_mean2d[:, 0], members, d_mx)
        np.add.at(d_mean2d[:, 1], members, d_my)
        np.add.at(d_conic[:, 0], members, d_a)
        np.add.at(d_conic[:, 1], members, d_b)
        np.add.at(d_conic[:, 2], members, d_c)
        np.add.at(d_color, members, d_col_t)
        np.add.at(d_depth_pay, members, d_dep_t)
        np.add.at(d_opac, members, d_opac_t)
        if d_flow_pay is not None:
            np.add.at(d_flow_pay, members, d_flow_t)

    return _geometry_backward(ctx, d_mean2d, d_conic, d_color, d_depth_pay, d_opac, d_flow_pay)


def _seq_colsum(terms):
    # per-splat totals over the tile's pixels; the tile content is identical
    # for any GS4D_THREADS value, so a plain sum is reproducible here
    return terms.sum(axis=1)


def _geometry_backward(ctx, d_mean2d, d_conic, d_color, d_depth_pay, d_opac, d_flow_pay):
    camera, cloud, proj = ctx.camera, ctx.cloud, ctx.proj
    n = len(cloud)
    grads = RenderGradients(
        d_means=np.zeros((n, 3)),
        d_rotations=np.zeros((n, 4)),
        d_log_scales=np.zeros((n, 3)),
        d_opacity_logits=np.zeros(n),
        d_sh=np.zeros_like(cloud.sh),
        d_cam_tvec=np.zeros(3),
        d_means_next=np.zeros((n, 3)) if d_flow_pay is not None else None,
    )
    m = proj.index.size
    if m == 0:
        return grads
    idx = proj.index

    d_p_cam = np.zeros((m, 3))
    if d_flow_pay is not None:
        # flow = uv_next - uv_this: route the payload gradient to both ends
        d_mean2d -= d_flow_pay
        valid = ctx.flow_valid_mask
        p_next = ctx.p_cam_next
        jac_next = projection_jacobian(camera, np.where(valid[:, None], p_next, 1.0))
        d_p_next = np.einsum("nji,nj->ni", jac_next, d_flow_pay)
        d_p_next[~valid] = 0.0
        grads.d_means_next[idx] = d_p_next @ camera.rot
        grads.d_cam_tvec += d_p_next.sum(axis=0)

    # pixel-position and depth payload
    jac = projection_jacobian(camera, proj.p_cam)
    d_p_cam += np.einsum("nji,nj->ni", jac, d_mean2d)
    d_p_cam[:, 2] += d_depth_pay

    # conic -> 2D covariance (inverse-matrix differential)
    minv = np.empty((m, 2, 2))
    minv[:, 0, 0] = proj.conic[:, 0]
    minv[:, 0, 1] = minv[:, 1, 0] = proj.conic[:, 1]
    minv[:, 1, 1] = proj.conic[:, 2]
    g_sym = np.empty((m, 2, 2))
    g_sym[:, 0, 0] = d_conic[:, 0]
    g_sym[:, 0, 1] = g_sym[:, 1, 0] = 0.5 * d_conic[:, 1]
    g_sym[:, 1, 1] = d_conic[:, 2]
    d_cov2d = -np.einsum("nij,njk,nkl->nil", minv, g_sym, minv)

    # cov2d = J V J^T (+ lowpass const)
    sigma = build_covariance(cloud.rotations[idx], cloud.log_scales[idx])
    vcam = np.einsum("ij,njk,lk->nil", camera.rot, sigma, camera.rot)
    sym = d_cov2d + np.swapaxes(d_cov2d, -1, -2)
    d_jac = np.einsum("nij,njk,nkl->nil", sym, jac, vcam)
    d_vcam = np.einsum("nji,njk,nkl->nil", jac, d_cov2d, jac)
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    fx, fy = camera.fx, camera.fy
    z2 = z * z
    d_p_cam[:, 0] += d_jac[:, 0, 2] * (-fx / z2)
    d_p_cam[:, 1] += d_jac[:, 1, 2] * (-fy / z2)
    d_p_cam[:, 2] += (
        d_jac[:, 0, 0] * (-fx / z2)
        + d_jac[:, 1, 1] * (-fy / z2)
        + d_jac[:, 0, 2] * (2.0 * fx * x / (z2 * z))
        + d_jac[:, 1, 2] * (2.0 * fy * y / (z2 * z))
    )

    # V = R_cam Sigma R_cam^T
    d_sigma = np.einsum("ji,njk,kl->nil", camera.rot, d_vcam, camera.rot)
    d_quat, d_log_scale = covariance_backward(
        cloud.rotations[idx], cloud.log_scales[idx], d_sigma
    )

    # color through SH and the view direction
    d_sh_k, d_dir = evaluate_sh_backward(cloud.sh[idx], proj.view_dir, d_color)
    offset = cloud.means[idx] - camera.center
    dist = np.linalg.norm(offset, axis=-1, keepdims=True)
    dir_dot = np.sum(d_dir * proj.view_dir, axis=-1, keepdims=True)
    d_mu_dir = (d_dir - proj.view_dir * dir_dot) / dist
    # camera center moves opposite to the splat in the direction argument
    d_center = -d_mu_dir.sum(axis=0)
    grads.d_cam_tvec += -(camera.rot @ d_center)

    # opacity logit through the sigmoid
    op = proj.opacity
    d_logit = d_opac * op * (1.0 - op)

    d_mu = d_p_cam @ camera.rot + d_mu_dir
    grads.d_means[idx] = d_mu
    grads.d_rotations[idx] = d_quat
    grads.d_log_scales[idx] = d_log_scale
    grads.d_opacity_logits[idx] = d_logit
    grads.d_sh[idx] = d_sh_k
    grads.d_cam_tvec += d_p_cam.sum(axis=0)
    return grads
