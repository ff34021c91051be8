"""Training objectives: content, flow geometry, least-squares adversarial, and
mask cross-entropy, plus their weighted combination."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from tryonlab.encoders import bilinear_warp, _ensure_batched
from tryonlab.errors import ShapeError, TrainingError, ValidationError
from tryonlab.model import N_SEG_CLASSES, TrainConfig

DEFAULT_FEATURE_SEED = 101


class FrozenFeatureNet(nn.Module):
    """Fixed, seeded, randomly-initialized 4-layer feature extractor.

    Stands in for a large pretrained backbone at desk scale; the perceptual
    and style distances keep their structure, only the features change.
    """

    def __init__(self, seed: int = DEFAULT_FEATURE_SEED):
        super().__init__()
        torch.manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, 64, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(64, 64, 3, stride=2, padding=1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.orthogonal_(m.weight, gain=1.4)
                nn.init.zeros_(m.bias)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        x, squeeze = _ensure_batched(image)
        feats = []
        for conv in (self.conv1, self.conv2, self.conv3, self.conv4):
            x = F.relu(conv(x))
            feats.append(x.squeeze(0) if squeeze else x)
        return feats


_default_features: FrozenFeatureNet | None = None


def default_feature_net() -> FrozenFeatureNet:
    global _default_features
    if _default_features is None:
        _default_features = FrozenFeatureNet()
    return _default_features


def _gram(feat: torch.Tensor) -> torch.Tensor:
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def content_loss_parts(generated: torch.Tensor, target: torch.Tensor,
                       features: FrozenFeatureNet | None = None) -> dict[str, torch.Tensor]:
    if generated.shape != target.shape:
        raise ShapeError(f"generated {tuple(generated.shape)} vs target {tuple(target.shape)}")
    net = features if features is not None else default_feature_net()
    if next(net.parameters()).dtype != generated.dtype:
        import copy

        net = copy.deepcopy(net).to(generated.dtype)  # never mutate the shared net
    l1 = (generated - target).abs().mean()
    gen_b, _ = _ensure_batched(generated)
    tgt_b, _ = _ensure_batched(target)
    perceptual = generated.new_zeros(())
    style = generated.new_zeros(())
    for fg, ft in zip(net(gen_b), net(tgt_b)):
        perceptual = perceptual + (fg - ft).abs().mean()
        style = style + (_gram(fg) - _gram(ft)).abs().mean()
    return {"l1": l1, "perceptual": perceptual, "style": style,
            "total": l1 + perceptual + style}


def content_loss(generated: torch.Tensor, target: torch.Tensor,
                 features: FrozenFeatureNet | None = None) -> torch.Tensor:
    """L1 plus perceptual plus style (Gram) distance over frozen features."""
    return content_loss_parts(generated, target, features)["total"]


def flow_smoothness(flow: torch.Tensor) -> torch.Tensor:
    """Mean squared first difference of the flow, both axes and channels pooled."""
    fl, _ = _ensure_batched(flow)
    dx = fl[..., :, 1:] - fl[..., :, :-1]
    dy = fl[..., 1:, :] - fl[..., :-1, :]
    return (dx.square().sum() + dy.square().sum()) / (dx.numel() + dy.numel())


def geo_loss(flow: torch.Tensor, source_feats: torch.Tensor,
             target_feats: torch.Tensor) -> torch.Tensor:
    """Warp correctness (one minus cosine similarity against the target
    features) plus total-variation smoothness of the flow."""
    if source_feats.shape != target_feats.shape:
        raise ShapeError("source and target feature shapes disagree")
    warped = bilinear_warp(source_feats, flow)
    wb, _ = _ensure_batched(warped)
    tb, _ = _ensure_batched(target_feats)
    cos = F.cosine_similarity(wb, tb, dim=1, eps=1e-6)
    correctness = (1.0 - cos).mean()
    return correctness + flow_smoothness(flow)


def gan_loss(discriminator, real: torch.Tensor, fake: torch.Tensor,
             conditioning: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares adversarial objective over patch scores.

    Returns (generator_loss, discriminator_loss); the discriminator loss uses
    the detached fake so the two can be stepped independently.
    """
    if real.shape != fake.shape:
        raise ShapeError("real and fake shapes disagree")
    score_fake = discriminator(fake, conditioning)
    g_loss = (score_fake - 1.0).square().mean()
    score_real = discriminator(real, conditioning)
    score_fake_d = discriminator(fake.detach(), conditioning)
    d_loss = 0.5 * ((score_real - 1.0).square().mean() + score_fake_d.square().mean())
    return g_loss, d_loss


def downsample_labels_majority(seg: torch.Tensor, factor: int = 4,
                               n_classes: int = N_SEG_CLASSES) -> torch.Tensor:
    """Majority vote per factor x factor block; ties go to the lowest label."""
    s, squeeze = (seg.unsqueeze(0), True) if seg.dim() == 2 else (seg, False)
    one_hot = F.one_hot(s.long(), n_classes).permute(0, 3, 1, 2).float()
    counts = F.avg_pool2d(one_hot, factor)
    out = counts.argmax(dim=1)
    return out.squeeze(0) if squeeze else out


def seg_loss(mask_logits, ground_truth: torch.Tensor) -> torch.Tensor:
    """Pixel cross-entropy of softmax-stacked mask logits against labels.

    `mask_logits` is one pre-sigmoid map per label in label order (list of
    (1, 16, 16) maps or a stacked (K, 16, 16) tensor); the ground-truth label
    map is downsampled to the feature grid by majority vote.
    """
    if isinstance(mask_logits, (list, tuple)):
        stacked = torch.cat([m if m.dim() == 3 else m.unsqueeze(0) for m in mask_logits], dim=-3)
    else:
        stacked = mask_logits
    logits, squeeze = _ensure_batched(stacked)
    if logits.shape[1] != N_SEG_CLASSES:
        raise ValidationError(
            f"expected {N_SEG_CLASSES} predicted masks, got {logits.shape[1]}")
    gt = torch.as_tensor(ground_truth)
    gt_b = gt.unsqueeze(0) if gt.dim() == 2 else gt
    if gt_b.shape[-1] != logits.shape[-1]:
        gt_b = downsample_labels_majority(gt_b, factor=gt_b.shape[-1] // logits.shape[-1])
    return F.cross_entropy(logits, gt_b.long())


@dataclass
class LossReport:
    content: float
    geo: float
    gan: float
    seg: float
    total: float
    step: int = 0

    CSV_HEADER = "step,content,geo,gan,seg,total"

    def csv_row(self) -> str:
        return f"{self.step},{self.content:.6g},{self.geo:.6g},{self.gan:.6g},{self.seg:.6g},{self.total:.6g}"


def total_loss(content, geo, gan, seg, config: TrainConfig, step: int = 0) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of the four terms; non-finite parts abort with the name."""
    def scalar(value) -> float:
        return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)

    parts = {"content": content, "geo": geo, "gan": gan, "seg": seg}
    for name, value in parts.items():
        if not math.isfinite(scalar(value)):
            raise TrainingError(f"loss term {name!r} is non-finite at step {step}: {scalar(value)}")
    total = content + geo + config.lambda_gan * gan + config.lambda_seg * seg
    report = LossReport(
        content=scalar(content), geo=scalar(geo), gan=scalar(gan), seg=scalar(seg),
        total=scalar(total), step=step,
    )
    return total, report
