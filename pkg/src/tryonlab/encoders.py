"""Encoders: pose, texture, shape head, flow estimator, channel mapper, warping.

All feature maps live on a 16x16 grid (input 64x64 downsampled 4x) with
LATENT_CHANNELS channels. Flow fields store backward-sampling offsets in
feature-grid units: output[p] reads the source at (p + flow[p]).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from tryonlab.errors import ShapeError
from tryonlab.preprocess import GarmentSegment

IMAGE_SIZE = 64
FEATURE_GRID = 16
LATENT_CHANNELS = 64
N_HEATMAPS = 18


@dataclass
class GarmentFeature:
    """Pose-warped texture features plus the soft shape mask of one segment."""

    texture: torch.Tensor       # (L, 16, 16)
    shape_mask: torch.Tensor    # (1, 16, 16), sigmoid output, strictly in (0, 1)
    shape_logits: torch.Tensor  # (1, 16, 16), pre-sigmoid head output
    flow: torch.Tensor          # (2, 16, 16) sampling offsets
    source_label: int

    def detached_copy(self) -> "GarmentFeature":
        return GarmentFeature(
            texture=self.texture.detach().clone(),
            shape_mask=self.shape_mask.detach().clone(),
            shape_logits=self.shape_logits.detach().clone(),
            flow=self.flow.detach().clone(),
            source_label=self.source_label,
        )


def _ensure_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ShapeError(f"expected a 3D or 4D tensor, got {tuple(x.shape)}")


def init_weights(module: nn.Module, scale: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, scale)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class PoseEncoder(nn.Module):
    """Three Convolution-InstanceNorm-LeakyReLU layers, 18x64x64 -> Lx16x16."""

    def __init__(self, channels: int = LATENT_CHANNELS):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(N_HEATMAPS, 32, 3, stride=2, padding=1),
            nn.InstanceNorm2d(32, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, channels, 3, stride=2, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, stride=1, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.LeakyReLU(0.2),
        )
        init_weights(self)

    def forward(self, heatmaps: torch.Tensor) -> torch.Tensor:
        x, squeeze = _ensure_batched(heatmaps)
        if x.shape[1:] != (N_HEATMAPS, IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError(f"expected (*, {N_HEATMAPS}, {IMAGE_SIZE}, {IMAGE_SIZE}), got {tuple(x.shape)}")
        out = self.net(x)
        return out.squeeze(0) if squeeze else out


class TextureEncoder(nn.Module):
    """Same recipe as the pose encoder, over a masked RGB segment image."""

    def __init__(self, channels: int = LATENT_CHANNELS):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 24, 3, stride=2, padding=1),
            nn.InstanceNorm2d(24, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(24, 48, 3, stride=2, padding=1),
            nn.InstanceNorm2d(48, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(48, channels, 3, stride=1, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.LeakyReLU(0.2),
        )
        init_weights(self)

    def forward(self, masked_image: torch.Tensor) -> torch.Tensor:
        x, squeeze = _ensure_batched(masked_image)
        out = self.net(x)
        return out.squeeze(0) if squeeze else out


class ShapeHead(nn.Module):
    """Three convolution layers from texture features to mask logits.

    The final bias starts at -3 so untrained masks are near zero: garments
    begin confined, the update module specializes to true garment regions, and
    the reconstruction losses then punish (rather than ignore) mask inflation.
    """

    def __init__(self, channels: int = LATENT_CHANNELS):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(channels, 32, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 16, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(16, 1, 3, padding=1),
        )
        init_weights(self)
        nn.init.constant_(self.net[-1].bias, -3.0)

    def forward(self, texture: torch.Tensor) -> torch.Tensor:
        x, squeeze = _ensure_batched(texture)
        out = self.net(x)
        return out.squeeze(0) if squeeze else out


class FlowEstimator(nn.Module):
    """Dense offsets on the 16x16 grid from (segment image, source pose, target pose).

    Inputs are average-pooled 4x and concatenated; five convolution layers
    predict one flow map. The final layer is zero-initialized so the
    untrained warp is the identity.
    """

    def __init__(self):
        super().__init__()
        in_ch = 3 + 2 * N_HEATMAPS
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, 48, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(48, 48, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(48, 32, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 16, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(16, 2, 3, padding=1),
        )
        init_weights(self)
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, seg_image: torch.Tensor, source_pose: torch.Tensor,
                target_pose: torch.Tensor) -> torch.Tensor:
        img, squeeze = _ensure_batched(seg_image)
        src, _ = _ensure_batched(source_pose)
        tgt, _ = _ensure_batched(target_pose)
        if img.shape[-2:] != (IMAGE_SIZE, IMAGE_SIZE) or src.shape[-2:] != (IMAGE_SIZE, IMAGE_SIZE) \
                or tgt.shape[-2:] != (IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeError("flow estimator inputs must be on the 64x64 grid")
        x = torch.cat([
            F.avg_pool2d(img, 4),
            F.avg_pool2d(src, 4),
            F.avg_pool2d(tgt, 4),
        ], dim=1)
        out = self.net(x)
        return out.squeeze(0) if squeeze else out


class FeatureMapper(nn.Module):
    """Per-pixel linear projection of (texture, mask) channels to L channels."""

    def __init__(self, in_channels: int = LATENT_CHANNELS, out_channels: int = LATENT_CHANNELS):
        super().__init__()
        self.proj = nn.Conv2d(in_channels + 1, out_channels, 1)
        init_weights(self)

    def forward(self, texture: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        tex, squeeze = _ensure_batched(texture)
        m, _ = _ensure_batched(mask)
        if tex.shape[-2:] != m.shape[-2:]:
            raise ShapeError(f"texture {tuple(tex.shape)} and mask {tuple(m.shape)} disagree")
        out = self.proj(torch.cat([tex, m], dim=1))
        return out.squeeze(0) if squeeze else out

    def set_identity(self) -> "FeatureMapper":
        """Test seam: pass the first L texture channels through unchanged."""
        with torch.no_grad():
            self.proj.weight.zero_()
            self.proj.bias.zero_()
            n = min(self.proj.out_channels, self.proj.in_channels - 1)
            for i in range(n):
                self.proj.weight[i, i, 0, 0] = 1.0
        return self


def identity_map(texture: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Stub channel mapper: returns the texture unchanged."""
    return texture


def bilinear_warp(feature: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Sample `feature` at (p + flow[p]) with bilinear interpolation.

    Coordinates are clamped to the grid border; differentiable with respect
    to both the feature and the flow. Zero flow returns the input exactly.
    """
    feat, squeeze = _ensure_batched(feature)
    fl, fl_squeeze = _ensure_batched(flow)
    if squeeze != fl_squeeze or feat.shape[0] != fl.shape[0]:
        raise ShapeError("feature and flow batch shapes disagree")
    if fl.shape[1] != 2 or feat.shape[-2:] != fl.shape[-2:]:
        raise ShapeError(f"flow must be (*, 2, H, W) matching feature, got {tuple(fl.shape)}")

    b, c, h, w = feat.shape
    device, dtype = feat.device, feat.dtype
    gy, gx = torch.meshgrid(
        torch.arange(h, device=device, dtype=dtype),
        torch.arange(w, device=device, dtype=dtype),
        indexing="ij",
    )
    x = (gx.unsqueeze(0) + fl[:, 0]).clamp(0, w - 1)
    y = (gy.unsqueeze(0) + fl[:, 1]).clamp(0, h - 1)

    x0 = x.floor()
    y0 = y.floor()
    wx = (x - x0).unsqueeze(1)
    wy = (y - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = feat.reshape(b, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return torch.gather(flat, 2, idx).reshape(b, c, h, w)

    out = ((1 - wx) * (1 - wy) * gather(y0, x0)
           + wx * (1 - wy) * gather(y0, x1)
           + (1 - wx) * wy * gather(y1, x0)
           + wx * wy * gather(y1, x1))
    return out.squeeze(0) if squeeze else out


def encode_pose(pose_encoder: PoseEncoder, heatmaps: torch.Tensor) -> torch.Tensor:
    return pose_encoder(heatmaps)


def estimate_flow(flow_net: FlowEstimator, source_seg_image: torch.Tensor,
                  source_pose: torch.Tensor, target_pose: torch.Tensor) -> torch.Tensor:
    return flow_net(source_seg_image, source_pose, target_pose)


def encode_segment(
    texture_encoder: TextureEncoder,
    shape_head: ShapeHead,
    segment: GarmentSegment,
    flow: torch.Tensor,
) -> GarmentFeature:
    """Texture features warped by the flow, then the soft shape mask from them."""
    texture = bilinear_warp(texture_encoder(segment.masked_image), flow)
    logits = shape_head(texture)
    return GarmentFeature(
        texture=texture,
        shape_mask=torch.sigmoid(logits),
        shape_logits=logits,
        flow=flow,
        source_label=segment.source_label,
    )


def map_texture(mapper, texture: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Apply a channel mapper (module or stub callable) to (texture, mask)."""
    return mapper(texture, mask)
