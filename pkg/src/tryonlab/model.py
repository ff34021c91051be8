"""Model bundle: every trainable module, its config, and checkpoint round-trips."""
from __future__ import annotations

import dataclasses
import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from tryonlab.encoders import (
    LATENT_CHANNELS,
    N_HEATMAPS,
    FeatureMapper,
    FlowEstimator,
    PoseEncoder,
    ShapeHead,
    TextureEncoder,
    init_weights,
)
from tryonlab.errors import ValidationError
from tryonlab.generator import ConditionalGenerator, Decoder

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

N_SEG_CLASSES = 5


@dataclass
class TrainConfig:
    lambda_gan: float = 1.0
    lambda_seg: float = 0.1
    learning_rate: float = 2e-4
    batch_size: int = 6
    steps: int = 2000
    seed: int = 0
    checkpoint_every: int = 500
    dataset_path: str = ""
    out_dir: str = "runs/default"
    feature_seed: int = 101       # frozen perceptual feature extractor init
    mask_head_lr: float | None = None  # optional faster rate for the shape head

    def __post_init__(self):
        if self.lambda_gan < 0 or self.lambda_seg < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))


class PatchDiscriminator(nn.Module):
    """Four stride-2 convolution layers over (image, conditioning) producing a
    patch map of least-squares adversarial scores."""

    def __init__(self, cond_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3 + cond_channels, 24, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(24, 48, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(48, 96, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(96, 1, 4, stride=2, padding=1),
        )
        init_weights(self)

    def forward(self, image: torch.Tensor, conditioning: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([image, conditioning], dim=1))


class ModelBundle:
    """All trainable parameters plus the config snapshot and step counter."""

    MODULE_NAMES = ("e_pose", "e_tex", "shape_head", "flow_net", "e_map",
                    "g_body", "phi", "g_dec", "d_pose", "d_seg")

    def __init__(self, config: TrainConfig):
        self.config = config
        self.step = 0
        self.checkpoint_id = "untrained"
        torch.manual_seed(config.seed)
        self.e_pose = PoseEncoder()
        self.e_tex = TextureEncoder()
        self.shape_head = ShapeHead()
        self.flow_net = FlowEstimator()
        self.e_map = FeatureMapper()
        self.g_body = ConditionalGenerator()
        self.phi = ConditionalGenerator()
        self.g_dec = Decoder()
        self.d_pose = PatchDiscriminator(N_HEATMAPS)
        self.d_seg = PatchDiscriminator(N_SEG_CLASSES)

    def modules(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in self.MODULE_NAMES}

    def generator_modules(self) -> dict[str, nn.Module]:
        return {n: m for n, m in self.modules().items() if not n.startswith("d_")}

    def generator_parameters(self):
        for m in self.generator_modules().values():
            yield from m.parameters()

    def discriminator_parameters(self):
        yield from self.d_pose.parameters()
        yield from self.d_seg.parameters()

    def train(self) -> "ModelBundle":
        for m in self.modules().values():
            m.train()
        return self

    def eval(self) -> "ModelBundle":
        for m in self.modules().values():
            m.eval()
        return self

    def save(self, path: str | Path) -> str:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "config": self.config.to_dict(),
            "step": self.step,
            "state": {name: m.state_dict() for name, m in self.modules().items()},
        }
        torch.save(payload, path)
        self.checkpoint_id = _file_digest(path)
        return self.checkpoint_id

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"checkpoint not found: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=False)
        bundle = cls(TrainConfig.from_dict(payload["config"]))
        bundle.step = payload["step"]
        for name, m in bundle.modules().items():
            m.load_state_dict(payload["state"][name])
        bundle.checkpoint_id = _file_digest(path)
        return bundle


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]
