"""Engine and scene configuration in a flat ``key = value`` text format.

One assignment per line, ``#`` starts a comment, blank lines are skipped.
Unknown or duplicate keys are rejected so typos cannot silently fall back to
defaults.  Every accepted file round-trips: ``dumps`` writes values with
``repr``, which parses back to the identical number.

``EngineConfig`` collects the fitting defaults (schedules, learning rates,
loss weights, densification, crop occupancy).  Scene specs use the same
format with dotted prefixes (``camera.``, ``background.``, ``objectN.``) to
describe synthetic ground-truth scenes for the ``gen`` command.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional

from .fit import DEFAULT_LRS, POSITION_LR_FINAL, DensifyConfig, FitSchedule
from .losses import LAMBDA_FLOW, LAMBDA_RGB, LAMBDA_RIGID, LAMBDA_SCALE
from .oracle import BackgroundSpec, CameraSpec, ObjectSpec, SyntheticSceneSpec


@dataclass
class EngineConfig:
    """Every tunable of the fitting pipeline with its default."""

    # reproducibility and image geometry
    seed: int = 0
    image_size: int = 128        # object-centric crop resolution
    sh_degree: int = 0
    crop_occupancy: float = 0.65  # object size relative to its crop

    # static lift schedule
    static_iterations: int = 1000
    static_batch: int = 16

    # motion schedule (iterations scale with clip length)
    motion_iterations_per_frame: int = 100
    motion_batch: int = 10

    # world-warp refinement schedule
    warp_iterations: int = 100
    warp_batch: int = 10

    # learning rates
    lr_means: float = DEFAULT_LRS["means"]
    lr_means_final: float = POSITION_LR_FINAL
    lr_rotations: float = DEFAULT_LRS["rotations"]
    lr_log_scales: float = DEFAULT_LRS["log_scales"]
    lr_opacity_logits: float = DEFAULT_LRS["opacity_logits"]
    lr_sh: float = DEFAULT_LRS["sh"]
    lr_plane: float = DEFAULT_LRS["plane"]
    lr_mlp: float = DEFAULT_LRS["mlp"]
    lr_delta: float = DEFAULT_LRS["delta"]

    # loss weights
    lambda_rgb: float = LAMBDA_RGB
    lambda_flow: float = LAMBDA_FLOW
    lambda_scale: float = LAMBDA_SCALE
    lambda_rigid: float = LAMBDA_RIGID
    rigidity_neighbors: int = 8

    # densification
    densify_grad_threshold: float = 0.5
    densify_max_scale: float = 0.05
    densify_opacity_floor: float = 0.01
    densify_interval: int = 100

    # joint fine-tune
    joint_steps: int = 100
    joint_batch: int = 10
    joint_lr_scale: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.crop_occupancy <= 1.0:
            raise ValueError("crop occupancy must lie in (0, 1]")
        if self.sh_degree not in (0, 1, 2, 3):
            raise ValueError("SH degree must be one of 0, 1, 2, 3")
        if self.image_size < 16:
            raise ValueError("crop size below 16 pixels is not usable")

    def lrs(self):
        return {
            "means": self.lr_means,
            "rotations": self.lr_rotations,
            "log_scales": self.lr_log_scales,
            "opacity_logits": self.lr_opacity_logits,
            "sh": self.lr_sh,
            "plane": self.lr_plane,
            "mlp": self.lr_mlp,
            "delta": self.lr_delta,
        }

    def loss_weights(self):
        return {
            "rgb": self.lambda_rgb,
            "flow": self.lambda_flow,
            "scale": self.lambda_scale,
            "rigid": self.lambda_rigid,
        }

    def static_schedule(self):
        return FitSchedule(
            iterations=self.static_iterations,
            batch_size=self.static_batch,
            seed=self.seed,
            lrs=self.lrs(),
            position_lr_final=self.lr_means_final,
        )

    def motion_schedule(self, n_frames):
        return FitSchedule(
            iterations=self.motion_iterations_per_frame * n_frames,
            batch_size=min(self.motion_batch, n_frames),
            seed=self.seed,
            lrs=self.lrs(),
            position_lr_final=self.lr_means_final,
        )

    def warp_schedule(self, n_frames):
        return FitSchedule(
            iterations=self.warp_iterations,
            batch_size=min(self.warp_batch, n_frames),
            seed=self.seed,
            lrs=self.lrs(),
            position_lr_final=self.lr_means_final,
        )

    def densify(self):
        return DensifyConfig(
            grad_threshold=self.densify_grad_threshold,
            max_scale=self.densify_max_scale,
            opacity_floor=self.densify_opacity_floor,
            interval=self.densify_interval,
        )


# --------------------------------------------------------------------------
# the flat text format


def _parse_lines(text, source="config"):
    pairs = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source} line {lineno}: expected 'key = value', got {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"{source} line {lineno}: empty key or value")
        if key in pairs:
            raise ValueError(f"{source} line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _convert(raw, target_type, key):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if target_type is tuple:
            return tuple(float(part.strip()) for part in raw.split(","))
        if target_type == Optional[float]:
            return None if raw.lower() == "none" else float(raw)
    except ValueError as exc:
        raise ValueError(f"key {key!r}: cannot parse {raw!r} as {target_type}") from exc
    raise ValueError(f"key {key!r} has unsupported type {target_type}")


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(repr(float(part)) for part in value)
    if value is None:
        return "none"
    if isinstance(value, str):
        return value
    return repr(value)


def _build_from_pairs(cls, pairs, source):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in pairs.items():
        if key not in fields:
            raise ValueError(f"{source}: unknown key {key!r}")
        kwargs[key] = _convert(raw, fields[key].type, key)
    return cls(**kwargs)


def parse_engine_config(text):
    """Engine config from text; absent keys keep their documented defaults."""
    return _build_from_pairs(EngineConfig, _parse_lines(text), "engine config")


def load_engine_config(path):
    with open(path) as fh:
        return parse_engine_config(fh.read())


def dump_engine_config(config):
    """Render a config as text that parses back to the identical values."""
    lines = ["# engine configuration"]
    for f in dataclasses.fields(EngineConfig):
        lines.append(f"{f.name} = {_format(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def save_engine_config(config, path):
    with open(path, "w") as fh:
        fh.write(dump_engine_config(config))


# --------------------------------------------------------------------------
# scene specs


def parse_scene_spec(text):
    """Scene spec from text with ``objectN.``/``camera.``/``background.`` keys."""
    pairs = _parse_lines(text, source="scene spec")
    scene_pairs = {}
    camera_pairs = {}
    background_pairs = {}
    object_pairs = {}
    for key, raw in pairs.items():
        if "." in key:
            prefix, name = key.split(".", 1)
            if prefix == "camera":
                camera_pairs[name] = raw
                continue
            if prefix == "background":
                background_pairs[name] = raw
                continue
            if prefix.startswith("object") and prefix[6:].isdigit():
                object_pairs.setdefault(int(prefix[6:]), {})[name] = raw
                continue
            raise ValueError(f"scene spec: unknown section {prefix!r}")
        scene_pairs[key] = raw

    indices = sorted(object_pairs)
    if indices and indices != list(range(len(indices))):
        raise ValueError(f"scene spec: object indices must be 0..N-1, got {indices}")
    objects = tuple(
        _build_from_pairs(ObjectSpec, object_pairs[i], f"object{i}") for i in indices
    )

    scene_fields = {f.name: f for f in dataclasses.fields(SyntheticSceneSpec)}
    kwargs = {}
    for key, raw in scene_pairs.items():
        if key not in scene_fields or key in ("objects", "camera", "background"):
            raise ValueError(f"scene spec: unknown key {key!r}")
        kwargs[key] = _convert(raw, scene_fields[key].type, key)
    if objects:
        kwargs["objects"] = objects
    if camera_pairs:
        kwargs["camera"] = _build_from_pairs(CameraSpec, camera_pairs, "camera")
    if background_pairs:
        kwargs["background"] = _build_from_pairs(BackgroundSpec, background_pairs,
                                                 "background")
    return SyntheticSceneSpec(**kwargs)


def load_scene_spec(path):
    with open(path) as fh:
        return parse_scene_spec(fh.read())


def dump_scene_spec(spec):
    lines = ["# synthetic scene"]
    for f in dataclasses.fields(SyntheticSceneSpec):
        if f.name in ("objects", "camera", "background"):
            continue
        lines.append(f"{f.name} = {_format(getattr(spec, f.name))}")
    for f in dataclasses.fields(CameraSpec):
        lines.append(f"camera.{f.name} = {_format(getattr(spec.camera, f.name))}")
    if spec.background is not None:
        for f in dataclasses.fields(BackgroundSpec):
            lines.append(
                f"background.{f.name} = {_format(getattr(spec.background, f.name))}"
            )
    for i, obj in enumerate(spec.objects):
        for f in dataclasses.fields(ObjectSpec):
            lines.append(f"object{i}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def save_scene_spec(spec, path):
    with open(path, "w") as fh:
        fh.write(dump_scene_spec(spec))
