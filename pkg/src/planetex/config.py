"""Project configuration with strict JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import InputError
from .lines import MatchThresholds
from .views import SelectionWeights
from .warp.energy import EnergyWeights


@dataclass
class SegmentationConfig:
    angle_tol: float = 2.0
    dist_tol: float | None = None  # None means 1e-4 of the bbox diagonal


@dataclass
class GridConfig:
    min_edge_samples: int = 512
    max_pixels: int = 2048 * 2048
    margin_frac: float = 0.05


@dataclass
class DetectConfig:
    grad_thresh: float = 0.02
    anchor_thresh: float = 0.05
    sigma: float = 1.0
    min_len: float = 8.0
    fit_tol: float = 1.5
    angle_tol: float = 30.0
    thin_width: float = 4.0


@dataclass
class MergeConfig:
    angle_tol: float = 2.0
    dist_tol: float = 2.0
    gap_tol: float = 12.0


@dataclass
class ClusterConfig:
    split_tol: float = 0.15
    n_init: int = 4


@dataclass
class StitchConfig:
    icp_trim: float = 0.8
    icp_max_iters: int = 100
    icp_max_angle: float = 5.0
    sample_step: float = 1.0
    snap_tol: float = 3.0
    blend: bool = True


@dataclass
class InpaintConfig:
    backend: str = "builtin"  # builtin, external or none
    url: str | None = None
    timeout: float = 120.0
    part_count: int | None = None
    harmonize: bool = True
    large_mask_fraction: float = 0.5

    def __post_init__(self):
        if self.backend not in ("builtin", "external", "none"):
            raise InputError(f"inpaint.backend must be builtin, external or none, not {self.backend!r}")


@dataclass
class PathsConfig:
    mesh: str | None = None
    cameras: str | None = None
    out: str | None = None


@dataclass
class ProjectConfig:
    selection: SelectionWeights = field(default_factory=SelectionWeights)
    energy: EnergyWeights = field(default_factory=EnergyWeights)
    matching: MatchThresholds = field(default_factory=MatchThresholds)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    stitch: StitchConfig = field(default_factory=StitchConfig)
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.jobs < 1:
            raise InputError("jobs must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectConfig":
        return _build(cls, data, "")

    @classmethod
    def from_json(cls, text: str) -> "ProjectConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ProjectConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise InputError(f"config section {where or '<root>'} must be an object")
    known = {f.name: f for f in fields(cls)}
    extra = sorted(set(data) - set(known))
    if extra:
        raise InputError(f"unknown config keys in {where or '<root>'}: {extra}")
    kwargs = {}
    default = cls()
    for name, value in data.items():
        sub = getattr(default, name)
        if is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config section {where or '<root>'}: {exc}") from exc
