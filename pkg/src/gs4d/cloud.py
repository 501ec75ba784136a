"""Gaussian primitives and the structure-of-arrays cloud container.

Parameters are stored unactivated: log-scales, opacity logits, raw (not
necessarily unit) quaternions.  Activations live next to the accessors so
every consumer applies the same ones: ``exp`` for scale, ``sigmoid`` for
opacity, normalization for rotations.
"""

from dataclasses import dataclass, field

import numpy as np

from . import sh as shlib
from .geometry import IDENTITY_QUAT


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class Gaussian3D:
    """A single splat; mostly a convenience view for tests and debugging."""

    mean: np.ndarray          # (3,) world position
    rotation: np.ndarray      # (4,) quaternion (w, x, y, z), not necessarily unit
    log_scale: np.ndarray     # (3,)
    opacity_logit: float
    sh: np.ndarray            # (K, 3) SH coefficients, K in {1, 4, 9, 16}

    @property
    def opacity(self):
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self):
        return np.exp(np.asarray(self.log_scale, dtype=np.float64))


@dataclass
class TimeIndex:
    """Frame indexing for a clip: frames are 1-based, time is normalized to [0, 1]."""

    n_frames: int

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("a clip needs at least one frame")

    def normalized(self, frame):
        frame = np.asarray(frame, dtype=np.float64)
        if np.any(frame < 1) or np.any(frame > self.n_frames):
            raise ValueError(f"frame out of range 1..{self.n_frames}")
        if self.n_frames == 1:
            return np.zeros_like(frame)
        return (frame - 1.0) / (self.n_frames - 1.0)

    def frames(self):
        return range(1, self.n_frames + 1)


@dataclass
class GaussianCloud:
    """All splats of one object (or the background) as flat arrays."""

    means: np.ndarray          # (N, 3)
    rotations: np.ndarray      # (N, 4)
    log_scales: np.ndarray     # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray             # (N, K, 3)
    ids: np.ndarray = field(default=None)  # (N,) stable int64 identities

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64)
        if n == 0:
            k = sh.shape[1] if sh.ndim == 3 else 1
            self.sh = sh.reshape(0, k, 3)
        else:
            self.sh = sh.reshape(n, -1, 3)
        shlib.degree_for_coeffs(self.sh.shape[1])
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64).reshape(n)
            if len(np.unique(self.ids)) != n:
                raise ValueError("gaussian ids must be unique")

    def __len__(self):
        return self.means.shape[0]

    @property
    def sh_degree(self):
        return shlib.degree_for_coeffs(self.sh.shape[1])

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    @property
    def scales(self):
        return np.exp(self.log_scales)

    def gaussian(self, i):
        return Gaussian3D(
            mean=self.means[i].copy(),
            rotation=self.rotations[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh=self.sh[i].copy(),
        )

    def copy(self):
        return GaussianCloud(
            means=self.means.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh=self.sh.copy(),
            ids=self.ids.copy(),
        )

    def subset(self, index):
        return GaussianCloud(
            means=self.means[index],
            rotations=self.rotations[index],
            log_scales=self.log_scales[index],
            opacity_logits=self.opacity_logits[index],
            sh=self.sh[index],
            ids=self.ids[index],
        )

    def centroid(self):
        return self.means.mean(axis=0)


def concat_clouds(clouds, reassign_ids=False):
    """Stack clouds into one; SH degrees must match.

    With ``reassign_ids`` the result gets fresh consecutive ids, otherwise the
    originals are kept and must not collide.
    """
    clouds = list(clouds)
    if not clouds:
        raise ValueError("need at least one cloud")
    deg = {c.sh.shape[1] for c in clouds}
    if len(deg) != 1:
        raise ValueError("clouds disagree on SH coefficient count")
    ids = None
    if not reassign_ids:
        ids = np.concatenate([c.ids for c in clouds])
    out = GaussianCloud(
        means=np.concatenate([c.means for c in clouds]),
        rotations=np.concatenate([c.rotations for c in clouds]),
        log_scales=np.concatenate([c.log_scales for c in clouds]),
        opacity_logits=np.concatenate([c.opacity_logits for c in clouds]),
        sh=np.concatenate([c.sh for c in clouds]),
        ids=None if reassign_ids else ids,
    )
    return out


def default_cloud(means, color=(0.5, 0.5, 0.5), scale=0.05, opacity=0.9, sh_degree=0):
    """Cloud with identity rotations and constant appearance, for tests and init."""
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    n = means.shape[0]
    k = shlib.coeffs_for_degree(sh_degree)
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = (np.asarray(color, dtype=np.float64) - 0.5) / shlib.C0
    return GaussianCloud(
        means=means,
        rotations=np.tile(IDENTITY_QUAT, (n, 1)),
        log_scales=np.full((n, 3), np.log(scale)),
        opacity_logits=np.full(n, logit(opacity)),
        sh=sh,
    )
