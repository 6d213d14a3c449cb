"""Run configuration: nested dataclasses read from flat ``section.key = value`` text.

Lines are ``key = value``; ``#`` starts a comment; tuples are comma
separated; booleans accept true/false/yes/no/1/0. Unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class VoxelConfig:
    range_min: tuple[float, ...] = (0.0, -40.0, -3.0)
    range_max: tuple[float, ...] = (70.4, 40.0, 1.0)
    size: tuple[float, ...] = (0.05, 0.05, 0.1)
    max_points: int = 5


@dataclass
class AnchorConfig:
    size: tuple[float, ...] = (1.6, 3.9, 1.56)
    z: float = -1.0
    yaws_deg: tuple[float, ...] = (0.0, 90.0)
    pos_iou: float = 0.6
    neg_iou: float = 0.45


@dataclass
class CameraConfig:
    feature_stride: float = 8.0
    channels: int = 256
    slabs: int = 4
    offset_tiles: tuple[int, ...] = (8, 8)
    interp: str = "idw"
    enabled: bool = True
    source: str = "features"  # or "image": run the conv stem on decoded images


@dataclass
class NetworkConfig:
    voxel_width: int = 16
    backbone: tuple[int, ...] = (32, 64, 128)
    camera_bev: int = 128
    rpn_hidden: int = 128
    roi_grid: int = 6
    camera_grid_r: int = 3
    encoder_width: int = 32
    refine_hidden: int = 128
    init_seed: int = 0


@dataclass
class LossConfig:
    beta1: float = 1.0
    beta2: float = 2.0
    alpha: float = 0.25
    gamma: float = 2.0
    iou_lo: float = 0.25
    iou_hi: float = 0.75


@dataclass
class ProposalConfig:
    nms_iou: float = 0.7
    max_keep: int = 100
    score_threshold: float = 0.05
    train_rois: int = 16
    refine_pos_iou: float = 0.55
    final_nms_iou: float = 0.1
    final_score_threshold: float = 0.1


@dataclass
class AugmentConfig:
    flip: bool = True
    rotation: tuple[float, ...] = (-math.pi / 4, math.pi / 4)
    scale: tuple[float, ...] = (0.95, 1.05)


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 0.003
    optimizer: str = "adam"
    augment: bool = False


@dataclass
class SynthConfig:
    n_objects: int = 3
    n_distractors: int = 0
    x_range: tuple[float, ...] = (5.0, 68.0)
    y_limit: float = 18.0
    fov_deg: float = 48.0
    density: float = 60.0
    ground_density: float = 10.0
    sparse_beyond: float = 1000.0
    sparse_factor: float = 1.0
    image_size: tuple[int, ...] = (1280, 384)
    focal: float = 400.0
    camera_mode: str = "signature"
    camera_noise: float = 0.05


@dataclass
class RunConfig:
    voxel: VoxelConfig = field(default_factory=VoxelConfig)
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0

    # derived objects -------------------------------------------------
    def voxel_spec(self):
        from ..voxel import VoxelGridSpec

        return VoxelGridSpec(self.voxel.range_min, self.voxel.range_max, self.voxel.size, self.voxel.max_points)

    def anchor_spec(self):
        from ..detect.anchors import AnchorSpec

        return AnchorSpec(self.anchor.size, self.anchor.z, tuple(math.radians(a) for a in self.anchor.yaws_deg))

    def loss_weights(self):
        from ..detect.losses import LossWeights

        c = self.loss
        return LossWeights(c.beta1, c.beta2, c.alpha, c.gamma, c.iou_lo, c.iou_hi)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if dataclasses.is_dataclass(val):
                for sub in dataclasses.fields(val):
                    lines.append(f"{f.name}.{sub.name} = {_format(getattr(val, sub.name))}")
            else:
                lines.append(f"{f.name} = {_format(val)}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_scalar(text: str, typ, where: str):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {typ.__name__}") from None


def _parse_value(text: str, typ, where: str):
    if typing.get_origin(typ) is tuple:
        inner = typing.get_args(typ)[0]
        parts = [p for p in text.split(",") if p.strip()]
        return tuple(_parse_scalar(p, inner, where) for p in parts)
    return _parse_scalar(text, typ, where)


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = base if base is not None else RunConfig()
    hints = typing.get_type_hints(RunConfig)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        parts = key.split(".")
        if len(parts) == 1 and parts[0] in hints and not dataclasses.is_dataclass(getattr(cfg, parts[0])):
            setattr(cfg, parts[0], _parse_value(value, hints[parts[0]], where))
            continue
        if len(parts) != 2 or parts[0] not in hints:
            raise ConfigError(f"{where}: unknown key {key!r}")
        section = getattr(cfg, parts[0])
        sub_hints = typing.get_type_hints(type(section))
        if parts[1] not in sub_hints:
            raise ConfigError(f"{where}: unknown key {key!r}")
        setattr(section, parts[1], _parse_value(value, sub_hints[parts[1]], where))
    return cfg


def load_config(path=None) -> RunConfig:
    """Parse a config file on top of the built-in KITTI defaults.

    ``path`` may name a file or one of the bundled configs (``kitti``, ``desk``).
    """
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists() and str(path) in bundled_configs():
        text = resources.files("cvfusion.configs").joinpath(f"{path}.cfg").read_text()
        return parse_config(text, source=f"{path}.cfg")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))


def bundled_configs() -> list[str]:
    return sorted(
        f.name[: -len(".cfg")] for f in resources.files("cvfusion.configs").iterdir() if f.name.endswith(".cfg")
    )
