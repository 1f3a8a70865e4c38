"""Run configuration: JSON file plus flag overrides, serialized per run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

__all__ = ["RunConfig"]


@dataclass
class RunConfig:
    # model
    image_height: int = 64
    image_width: int = 80
    dp_ratio: int = 2
    feature_channels: int = 16
    dp_channels: int = 16
    fusion_channels: int = 8
    trunk_channels: int = 16
    guide_channels: int = 32
    fusion_mode: str = "dp_dc_conf"
    refine_mode: str = "rgb_plus_dp"
    validity_channel: bool = True
    gamma: float = 0.1
    temperature: float = 0.5
    leaky_slope: float = 0.2
    huber_delta: float = 1.0
    # loss weights
    lambda_dp: float = 1.0
    lambda_dc: float = 10.0
    lambda_unref: float = 1.0
    lambda_ref: float = 1.0
    # training (desk defaults; the full-scale schedule is 3e-5 for 2e6 steps)
    learning_rate: float = 1e-3
    steps: int = 2000
    checkpoint_every: int = 500
    seed: int = 0
    # data generation
    n_train: int = 64
    n_test: int = 8
    occluder_min: int = 1
    occluder_max: int = 2
    textures: tuple = ("noise", "stripes-horizontal", "stripes-vertical", "checker")
    baseline: float = 0.2
    focal: float = 200.0
    warp_magnitude: float = 2.0
    # ground-truth oracle
    planes: int = 64
    z_min: float = 0.2
    z_max: float = 100.0

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        values = {}
        if path is not None:
            raw = json.loads(Path(path).read_text())
            unknown = set(raw) - {f.name for f in fields(cls)}
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            values.update(raw)
        if overrides:
            values.update({k: v for k, v in overrides.items() if v is not None})
        if "textures" in values:
            values["textures"] = tuple(values["textures"])
        return cls(**values)

    def dump(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = asdict(self)
        data["textures"] = list(self.textures)
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
