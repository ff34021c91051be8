#!/usr/bin/env python3
"""Fit latent attribute directions from a dataset + checkpoint.

Pools each sample's top-garment features over its mask and labels them from
the generating spec (the dataset stores exact attributes), then fits one
linear boundary per attribute and writes AttributeDirection JSON files.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import torch

from tryonlab import dolls
from tryonlab.dataset import load_sample
from tryonlab.model import ModelBundle
from tryonlab.pipeline import encode_garment
from tryonlab.preprocess import make_heatmaps
from tryonlab.training import resolve_manifest
from tryonlab.tweaks import fit_attribute_direction, pooled_latent

ATTRIBUTES = {
    "sleeve_length": lambda spec: spec.top.sleeve_or_leg_length > 0.5,
    "top_width": lambda spec: spec.top.width > 0.5,
    "top_brightness": lambda spec: sum(spec.top.base_color) / 3.0 > 0.5,
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", required=True)
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--out", required=True, help="directions output directory")
    parser.add_argument("--max-samples", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    model = ModelBundle.load(args.model).eval()
    manifest = resolve_manifest(args.dataset)
    entries = manifest.split_entries("train")[: args.max_samples]

    latents, specs = [], []
    with torch.no_grad():
        for entry in entries:
            sample = load_sample(manifest, entry)
            heat = make_heatmaps(sample.keypoints)
            feature = encode_garment(model, sample.image, sample.seg,
                                     dolls.LABEL_TOP, sample.keypoints, heat)
            latents.append(pooled_latent(feature))
            specs.append(entry.spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, labeler in ATTRIBUTES.items():
        labels = np.array([int(labeler(spec)) for spec in specs])
        if min((labels == 0).sum(), (labels == 1).sum()) < 20:
            print(f"{name}: skipped (needs 20 examples per class, "
                  f"got {(labels == 0).sum()}/{(labels == 1).sum()})")
            continue
        direction = fit_attribute_direction(latents, labels, attribute=name,
                                            seed=args.seed)
        direction.save(out / f"{name}.json")
        print(f"{name}: holdout accuracy {direction.fit_accuracy:.3f} "
              f"({direction.train_count} training examples)")


if __name__ == "__main__":
    main()
