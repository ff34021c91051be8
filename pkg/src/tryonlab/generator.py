"""Generation pipeline: body texture composition, conditional style blocks,
recurrent garment application, and the image decoder.

Style blocks modulate per pixel from a conditioning feature map. The
parameter-free normalization inside them (and in the decoder) acts across
channels at each location, never across space, so every generator stage is
strictly local: changes to an input region can only reach outputs within the
convolutional receptive field. Soft masks are snapped at the ends (below
MASK_SNAP_EPS to exactly 0, above 1 - eps to exactly 1) before blending, which
makes masked no-op regions bit-exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tryonlab.encoders import (
    FEATURE_GRID,
    IMAGE_SIZE,
    LATENT_CHANNELS,
    GarmentFeature,
    _ensure_batched,
    init_weights,
    map_texture,
)
from tryonlab.errors import ShapeError, TrainingError

MASK_SNAP_EPS = 1e-3

# Receptive-field radii on the 16x16 grid, derived from kernel sizes below:
# each spatial modulation reads the condition through one 3x3 conv (radius 1),
# a style block adds two 3x3 convs on the main path (radius 2).
SPADE_COND_RADIUS = 1
STYLE_BLOCK_X_RADIUS = 2
STYLE_BLOCK_COND_RADIUS = SPADE_COND_RADIUS + STYLE_BLOCK_X_RADIUS
GENERATOR_X_RADIUS = 2 * STYLE_BLOCK_X_RADIUS
GENERATOR_COND_RADIUS = STYLE_BLOCK_COND_RADIUS + STYLE_BLOCK_X_RADIUS
# Decoder: two residual blocks at 16x16 (radius 4) plus upsampling convs; the
# upsampled convs add less than one extra input cell in total.
DECODER_INPUT_RADIUS = 2 * STYLE_BLOCK_X_RADIUS + 1
DECODER_UPSAMPLE = 4


class ChannelNorm(nn.Module):
    """Normalize across channels independently at every spatial location."""

    def __init__(self, channels: int, affine: bool = True, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.affine = affine
        if affine:
            self.weight = nn.Parameter(torch.ones(channels))
            self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        out = (x - mu) / torch.sqrt(var + self.eps)
        if self.affine:
            out = out * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)
        return out


class SpatialModulation(nn.Module):
    """Spatially-adaptive normalization: per-pixel scale and shift from a
    conditioning map (one shared 3x3 conv, then 1x1 heads)."""

    def __init__(self, channels: int, cond_channels: int, hidden: int = 32):
        super().__init__()
        self.norm = ChannelNorm(channels, affine=False)
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 1)
        self.beta = nn.Conv2d(hidden, channels, 1)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.shared(cond), 0.2)
        return self.norm(x) * (1.0 + self.gamma(h)) + self.beta(h)


class StyleBlock(nn.Module):
    """Residual block with two modulated convolutions (bottlenecked inside)."""

    def __init__(self, channels: int, cond_channels: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden if hidden is not None else max(channels // 2, 8)
        self.mod1 = SpatialModulation(channels, cond_channels)
        self.conv1 = nn.Conv2d(channels, hidden, 3, padding=1)
        self.mod2 = SpatialModulation(hidden, cond_channels)
        self.conv2 = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.leaky_relu(self.mod1(x, cond), 0.2))
        h = self.conv2(F.leaky_relu(self.mod2(h, cond), 0.2))
        return x + h


class ConditionalGenerator(nn.Module):
    """Two style blocks driven by one conditioning map. Used both for the
    body state generator and for the per-garment update module."""

    def __init__(self, channels: int = LATENT_CHANNELS, cond_channels: int = LATENT_CHANNELS):
        super().__init__()
        self.block1 = StyleBlock(channels, cond_channels)
        self.block2 = StyleBlock(channels, cond_channels)
        init_weights(self)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        xb, squeeze = _ensure_batched(x)
        cb, _ = _ensure_batched(cond)
        if xb.shape[-2:] != cb.shape[-2:]:
            raise ShapeError(f"state {tuple(xb.shape)} and condition {tuple(cb.shape)} disagree")
        out = self.block2(self.block1(xb, cb), cb)
        return out.squeeze(0) if squeeze else out


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden if hidden is not None else max(channels // 2, 8)
        self.norm1 = ChannelNorm(channels)
        self.conv1 = nn.Conv2d(channels, hidden, 3, padding=1)
        self.norm2 = ChannelNorm(hidden)
        self.conv2 = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.relu(self.norm1(x)))
        h = self.conv2(F.relu(self.norm2(h)))
        return x + h


class Decoder(nn.Module):
    """Residual blocks, then 4x nearest-neighbor upsampling with convolution,
    channel normalization and ReLU; sigmoid keeps the image in [0, 1]."""

    def __init__(self, channels: int = LATENT_CHANNELS):
        super().__init__()
        self.res = nn.Sequential(ResidualBlock(channels), ResidualBlock(channels))
        self.up1 = nn.Conv2d(channels, 48, 3, padding=1)
        self.norm1 = ChannelNorm(48)
        self.up2 = nn.Conv2d(48, 24, 3, padding=1)
        self.norm2 = ChannelNorm(24)
        self.out = nn.Conv2d(24, 3, 3, padding=1)
        init_weights(self)

    def forward(self, state: torch.Tensor) -> torch.Tensor:
        x, squeeze = _ensure_batched(state)
        x = self.res(x)
        x = F.relu(self.norm1(self.up1(F.interpolate(x, scale_factor=2, mode="nearest"))))
        x = F.relu(self.norm2(self.up2(F.interpolate(x, scale_factor=2, mode="nearest"))))
        img = torch.sigmoid(self.out(x))
        return img.squeeze(0) if squeeze else img


@dataclass
class BodyTextureMap:
    """Composed body features plus the foreground mask used to build them."""

    texture: torch.Tensor          # (L, 16, 16)
    foreground_mask: torch.Tensor  # (1, 16, 16) in [0, 1]
    used_mean_fallback: bool = False


@dataclass
class PersonRepresentation:
    """The (pose, body, garments) tuple driving generation. Garment order is
    significant and preserved exactly as given."""

    pose: torch.Tensor                   # hidden pose map (L, 16, 16)
    body: BodyTextureMap
    garments: list[GarmentFeature] = field(default_factory=list)
    keypoints: np.ndarray | None = None  # target-pose keypoints, used by tweaks

    def with_garments(self, garments: list[GarmentFeature]) -> "PersonRepresentation":
        return replace(self, garments=list(garments))


def snap_mask(mask: torch.Tensor, eps: float = MASK_SNAP_EPS) -> torch.Tensor:
    """Clamp near-0/near-1 soft-mask values to exact 0/1 for composition."""
    zero = torch.zeros((), dtype=mask.dtype, device=mask.device)
    one = torch.ones((), dtype=mask.dtype, device=mask.device)
    out = torch.where(mask < eps, zero, mask)
    return torch.where(out > 1.0 - eps, one, out)


def blend_state(state: torch.Tensor, update: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """The garment recurrence: update * M + state * (1 - M), with M snapped."""
    m = snap_mask(mask)
    return update * m + state * (1.0 - m)


def assert_finite(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise TrainingError(f"{what} contains non-finite values")
    return t


def compose_body_texture_tensors(
    skin_texture: torch.Tensor,
    skin_mask: torch.Tensor,
    bg_texture: torch.Tensor,
    bg_mask: torch.Tensor,
    fg_masks: list[torch.Tensor],
    e_map,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Batched body composition; returns (texture, fg mask, per-item fallback flags)."""
    if not fg_masks:
        raise ShapeError("at least one foreground mask is required")
    skin_tex, squeeze = _ensure_batched(skin_texture)
    skin_m, _ = _ensure_batched(skin_mask)
    bg_tex, _ = _ensure_batched(bg_texture)
    bg_m, _ = _ensure_batched(bg_mask)

    roi = (skin_m > 0.5).to(skin_tex.dtype)
    denom = roi.sum(dim=(-2, -1))                       # (B, 1)
    total = (skin_tex * roi).sum(dim=(-2, -1))          # (B, L)
    global_mean = skin_tex.mean(dim=(-2, -1))
    empty = denom == 0
    b = torch.where(empty, global_mean, total / denom.clamp(min=1.0))

    fg = snap_mask(_ensure_batched(fg_masks[0])[0])
    for m in fg_masks[1:]:
        fg = torch.maximum(fg, snap_mask(_ensure_batched(m)[0]))

    broadcast = b.unsqueeze(-1).unsqueeze(-1) * fg
    mapped_fg = map_texture(e_map, broadcast, fg)
    mapped_bg = map_texture(e_map, bg_tex, bg_m)
    texture = fg * mapped_fg + (1.0 - fg) * mapped_bg
    fallback = empty.reshape(-1)
    if squeeze:
        return texture.squeeze(0), fg.squeeze(0), fallback
    return texture, fg, fallback


def compose_body_texture(
    skin: GarmentFeature,
    background: GarmentFeature,
    all_fg_masks: list[torch.Tensor],
    e_map,
) -> BodyTextureMap:
    """Broadcast the mean skin vector over the foreground and blend with the
    mapped background features.

    The mean vector is taken over cells where the skin mask exceeds 0.5; an
    empty region falls back to the global mean and flags the result.
    """
    texture, fg, fallback = compose_body_texture_tensors(
        skin.texture, skin.shape_mask, background.texture, background.shape_mask,
        all_fg_masks, e_map,
    )
    return BodyTextureMap(texture=texture, foreground_mask=fg,
                          used_mean_fallback=bool(fallback.any()))


def generate_body(g_body: ConditionalGenerator, pose: torch.Tensor, body: BodyTextureMap) -> torch.Tensor:
    """Initial hidden state from the hidden pose map, modulated by the body texture."""
    return g_body(pose, body.texture)


def add_garment(state: torch.Tensor, garment: GarmentFeature, phi, e_map) -> torch.Tensor:
    """One recurrence step: run the conditional update on the mapped garment
    texture and blend it in through the soft shape mask.

    `phi` and `e_map` are the trained modules in normal use; tests may inject
    stub callables with the same signatures.
    """
    mapped = map_texture(e_map, garment.texture, garment.shape_mask)
    update = phi(state, mapped)
    return blend_state(state, update, garment.shape_mask)


def decode(g_dec: Decoder, state: torch.Tensor) -> torch.Tensor:
    return g_dec(state)


def try_on(model, person: PersonRepresentation) -> torch.Tensor:
    """Full chain: body state, garments folded in order, decoded image."""
    state = generate_body(model.g_body, person.pose, person.body)
    assert_finite(state, "body state")
    for k, garment in enumerate(person.garments):
        state = add_garment(state, garment, model.phi, model.e_map)
        assert_finite(state, f"state after garment {k}")
    return decode(model.g_dec, state)


def decoder_affected_mask(changed_cells: np.ndarray) -> np.ndarray:
    """Conservative 64x64 mask of output pixels the decoder may change when the
    given 16x16 state cells change. Everything outside is guaranteed untouched."""
    if changed_cells.shape != (FEATURE_GRID, FEATURE_GRID):
        raise ShapeError(f"expected a {FEATURE_GRID}x{FEATURE_GRID} grid, got {changed_cells.shape}")
    from tryonlab.geom import dilate_bool

    grown = dilate_bool(changed_cells.astype(bool), DECODER_INPUT_RADIUS + 1)
    return np.kron(grown, np.ones((DECODER_UPSAMPLE, DECODER_UPSAMPLE), dtype=bool))
