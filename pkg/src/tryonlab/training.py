"""Joint supervised pose-transfer training with two patch discriminators.

The whole pipeline trains end to end: encoders, flow, mask head, body and
garment generators, and the decoder, against same-identity pose pairs from
the toy dataset. No stage-wise pretraining.
"""
from __future__ import annotations

import dataclasses
import shutil
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from tryonlab import dolls
from tryonlab.dataset import DatasetManifest, load_sample
from tryonlab.encoders import bilinear_warp
from tryonlab.errors import TrainingError, ValidationError
from tryonlab.generator import blend_state, compose_body_texture_tensors
from tryonlab.losses import (
    FrozenFeatureNet,
    LossReport,
    content_loss,
    downsample_labels_majority,
    gan_loss,
    flow_smoothness,
    seg_loss,
    total_loss,
)
from tryonlab.model import ModelBundle, N_SEG_CLASSES, TrainConfig
from tryonlab.pipeline import TRAIN_GARMENT_ORDER
from tryonlab.preprocess import make_heatmaps


def resolve_manifest(dataset_path: str | Path) -> DatasetManifest:
    path = Path(dataset_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise ValidationError(f"dataset manifest not found: {path}")
    return DatasetManifest.load(path)


class PairSampler:
    """Draws same-identity pose pairs from manifest entries.

    The source sample comes from disk (cached); the partner is re-rendered
    from the stored spec with freshly drawn pose parameters.
    """

    def __init__(self, manifest: DatasetManifest, split: str, seed: int):
        self.entries = manifest.split_entries(split)
        if not self.entries:
            raise ValidationError(f"split {split!r} is empty")
        self.manifest = manifest
        self.rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 99])
        self._source_cache: dict[str, dolls.Sample] = {}
        self._heat_cache: dict[str, torch.Tensor] = {}

    def _source(self, entry) -> dolls.Sample:
        if entry.sample_id not in self._source_cache:
            self._source_cache[entry.sample_id] = load_sample(self.manifest, entry)
        return self._source_cache[entry.sample_id]

    def _source_heat(self, entry, sample) -> torch.Tensor:
        if entry.sample_id not in self._heat_cache:
            self._heat_cache[entry.sample_id] = make_heatmaps(sample.keypoints)
        return self._heat_cache[entry.sample_id]

    def batch(self, size: int) -> dict[str, torch.Tensor]:
        idx = self.rng.integers(0, len(self.entries), size=size)
        src_imgs, src_segs, src_heats = [], [], []
        tgt_imgs, tgt_segs, tgt_heats = [], [], []
        for i in idx:
            entry = self.entries[int(i)]
            src = self._source(entry)
            pose2 = tuple(float(p) for p in self.rng.uniform(-1.0, 1.0, size=10))
            tgt = dolls.render_person(dataclasses.replace(entry.spec, pose_params=pose2))
            src_imgs.append(torch.from_numpy(src.image))
            src_segs.append(torch.from_numpy(src.seg.astype(np.int64)))
            src_heats.append(self._source_heat(entry, src))
            tgt_imgs.append(torch.from_numpy(tgt.image))
            tgt_segs.append(torch.from_numpy(tgt.seg.astype(np.int64)))
            tgt_heats.append(make_heatmaps(tgt.keypoints))
        return {
            "src_image": torch.stack(src_imgs),
            "src_seg": torch.stack(src_segs),
            "src_heat": torch.stack(src_heats),
            "tgt_image": torch.stack(tgt_imgs),
            "tgt_seg": torch.stack(tgt_segs),
            "tgt_heat": torch.stack(tgt_heats),
        }


def _alignment_features(features: FrozenFeatureNet, images: torch.Tensor,
                        heatmaps: torch.Tensor | None = None) -> torch.Tensor:
    """Frozen features conditioned for the flow-correctness cosine: centered per
    channel (so the cosine discriminates), lightly blurred (wider gradient
    basin), with a constant channel that keeps empty-vs-empty cells aligned.

    Passing the pose heatmaps appends pooled joint-bump channels, which gives
    the correctness term a dense joint-correspondence signal exactly on the
    parts that move between poses."""
    f = features(images)[2]
    f = f - f.mean(dim=(-2, -1), keepdim=True)
    f = F.avg_pool2d(f, 3, stride=1, padding=1)
    parts = [f]
    if heatmaps is not None:
        bumps = F.avg_pool2d(heatmaps, 4) * 4.0
        parts.append(F.avg_pool2d(bumps, 3, stride=1, padding=1))
    parts.append(f.new_full((f.shape[0], 1, *f.shape[-2:]), 0.2))
    return torch.cat(parts, dim=1)


def transfer_forward(model: ModelBundle, batch: dict, features: FrozenFeatureNet) -> dict:
    """Batched pose-transfer forward pass over all five segments.

    The five per-label segment streams are stacked into one big batch for the
    flow, texture and mask networks (one conv call instead of five), then
    split back per label. Returns the generated image plus per-label
    masks/logits/flows and the geometric loss accumulated over segments.
    """
    src_image, src_seg = batch["src_image"], batch["src_seg"]
    src_heat, tgt_heat = batch["src_heat"], batch["tgt_heat"]
    tgt_image, tgt_seg = batch["tgt_image"], batch["tgt_seg"]
    b = src_image.shape[0]
    k = N_SEG_CLASSES

    labels = torch.arange(k).view(k, 1, 1, 1)
    src_masks = (src_seg.unsqueeze(0) == labels).transpose(0, 1).float()   # (B, K, 64, 64)
    tgt_masks = (tgt_seg.unsqueeze(0) == labels).transpose(0, 1).float()
    # stack label streams: (B*K, 3, 64, 64), label-major within each sample
    masked = (src_image.unsqueeze(1) * src_masks.unsqueeze(2)).reshape(b * k, 3, *src_image.shape[-2:])
    tgt_masked = (tgt_image.unsqueeze(1) * tgt_masks.unsqueeze(2)).reshape(b * k, 3, *tgt_image.shape[-2:])
    heat_rep = src_heat.repeat_interleave(k, dim=0)
    tgt_heat_rep = tgt_heat.repeat_interleave(k, dim=0)

    flow_all = model.flow_net(masked, heat_rep, tgt_heat_rep)
    texture_all = bilinear_warp(model.e_tex(masked), flow_all)
    logits_all = model.shape_head(texture_all)
    masks_all = torch.sigmoid(logits_all)

    with torch.no_grad():  # frozen features of constant inputs carry no grad
        src_feats = _alignment_features(features, masked, heat_rep)
        tgt_feats = _alignment_features(features, tgt_masked, tgt_heat_rep)
    warped = bilinear_warp(src_feats, flow_all)
    cos = F.cosine_similarity(warped, tgt_feats, dim=1, eps=1e-6)
    geo = (1.0 - cos).mean() + flow_smoothness(flow_all)

    def per_label(t: torch.Tensor) -> dict[int, torch.Tensor]:
        split = t.reshape(b, k, *t.shape[1:])
        return {label: split[:, label] for label in range(k)}

    textures = per_label(texture_all)
    masks = per_label(masks_all)
    flows = per_label(flow_all)

    body_texture, fg_mask, _ = compose_body_texture_tensors(
        textures[dolls.LABEL_SKIN], masks[dolls.LABEL_SKIN],
        textures[dolls.LABEL_BACKGROUND], masks[dolls.LABEL_BACKGROUND],
        [masks[dolls.LABEL_SKIN]] + [masks[l] for l in TRAIN_GARMENT_ORDER],
        model.e_map,
    )
    state = model.g_body(model.e_pose(tgt_heat), body_texture)
    for label in TRAIN_GARMENT_ORDER:
        mapped = model.e_map(textures[label], masks[label])
        state = blend_state(state, model.phi(state, mapped), masks[label])
    generated = model.g_dec(state)

    return {
        "generated": generated,
        "masks": masks,
        "logits": logits_all.reshape(b, k, *logits_all.shape[-2:]),
        "flows": flows,
        "geo": geo,
        "body_texture": body_texture,
    }


def _onehot_seg(seg: torch.Tensor) -> torch.Tensor:
    return F.one_hot(seg.long(), N_SEG_CLASSES).permute(0, 3, 1, 2).float()


def train(config: TrainConfig, resume_from: str | Path | None = None,
          log_every: int = 50, quiet: bool = False) -> ModelBundle:
    """Run the alternating generator/discriminator loop and checkpoint.

    Deterministic in the config seed. Resuming restores parameters and the
    step counter; optimizer state restarts fresh.
    """
    manifest = resolve_manifest(config.dataset_path)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        model = ModelBundle.load(resume_from)
        model.config = config
    else:
        model = ModelBundle(config)
    model.train()

    features = FrozenFeatureNet(config.feature_seed)
    sampler = PairSampler(manifest, "train", config.seed)
    head_params = list(model.shape_head.parameters())
    head_ids = {id(p) for p in head_params}
    trunk_params = [p for p in model.generator_parameters() if id(p) not in head_ids]
    opt_g = torch.optim.Adam(
        [{"params": trunk_params},
         {"params": head_params, "lr": config.mask_head_lr or config.learning_rate}],
        lr=config.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(model.discriminator_parameters(), lr=config.learning_rate,
                             betas=(0.5, 0.999))

    log_path = out_dir / "loss_log.csv"
    mode = "a" if resume_from is not None and log_path.exists() else "w"
    log = open(log_path, mode)
    if mode == "w":
        log.write(LossReport.CSV_HEADER + "\n")

    reports: list[LossReport] = []
    start = time.time()
    first_step = model.step
    try:
        for _ in range(config.steps):
            model.step += 1
            batch = sampler.batch(config.batch_size)
            out = transfer_forward(model, batch, features)

            tgt_onehot = _onehot_seg(batch["tgt_seg"])
            g_pose, d_pose = gan_loss(model.d_pose, batch["tgt_image"], out["generated"],
                                      batch["tgt_heat"])
            g_seg, d_seg = gan_loss(model.d_seg, batch["tgt_image"], out["generated"],
                                    tgt_onehot)
            loss_content = content_loss(out["generated"], batch["tgt_image"], features)
            loss_seg = seg_loss(out["logits"], batch["tgt_seg"])
            g_total, report = total_loss(loss_content, out["geo"], g_pose + g_seg,
                                         loss_seg, config, step=model.step)

            opt_g.zero_grad(set_to_none=True)
            g_total.backward()
            opt_g.step()

            d_total = d_pose + d_seg
            if not torch.isfinite(d_total):
                raise TrainingError(f"discriminator loss non-finite at step {model.step}")
            opt_d.zero_grad(set_to_none=True)
            d_total.backward()
            opt_d.step()

            reports.append(report)
            log.write(report.csv_row() + "\n")
            if model.step % 100 == 0:
                log.flush()
            if not quiet and (model.step % log_every == 0 or model.step == first_step + 1):
                rate = (model.step - first_step) / max(time.time() - start, 1e-9)
                print(f"step {model.step}: total={report.total:.4f} "
                      f"content={report.content:.4f} geo={report.geo:.4f} "
                      f"gan={report.gan:.4f} seg={report.seg:.4f} ({rate:.2f} it/s)")
            if config.checkpoint_every > 0 and model.step % config.checkpoint_every == 0:
                model.save(out_dir / f"checkpoint_step{model.step}.pt")
    finally:
        log.close()

    final_path = out_dir / f"checkpoint_step{model.step}.pt"
    model.save(final_path)
    shutil.copyfile(final_path, out_dir / "checkpoint_latest.pt")
    model.eval()
    try:
        write_loss_figure(log_path, out_dir / "loss_curves.png")
    except Exception as exc:  # figure rendering must not kill a finished run
        if not quiet:
            print(f"loss figure skipped: {exc}")
    return model


def smoothed_total(reports_or_csv, window: int = 100) -> np.ndarray:
    """Moving average of the total loss column."""
    if isinstance(reports_or_csv, (str, Path)):
        rows = np.genfromtxt(reports_or_csv, delimiter=",", names=True)
        totals = np.atleast_1d(rows["total"])
    else:
        totals = np.array([r.total for r in reports_or_csv])
    if len(totals) < window:
        window = max(1, len(totals))
    kernel = np.ones(window) / window
    return np.convolve(totals, kernel, mode="valid")


def write_loss_figure(csv_path: str | Path, out_path: str | Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = np.genfromtxt(csv_path, delimiter=",", names=True)
    steps = np.atleast_1d(rows["step"])
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in ("content", "geo", "gan", "seg", "total"):
        ax.plot(steps, np.atleast_1d(rows[name]), label=name, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
