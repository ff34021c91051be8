"""Shared fixtures. The trained bundle is expensive (minutes); it is cached
under tests/_artifacts keyed by its config so repeat runs reuse it."""
from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from tryonlab import dolls
from tryonlab.dataset import DatasetManifest, build_dataset
from tryonlab.model import ModelBundle, TrainConfig
from tryonlab.training import train

ARTIFACTS = Path(__file__).parent / "_artifacts"
ORACLE_CORPUS = Path(__file__).parent / "data" / "oracle_cases"

ACCEPT_DATA_COUNT = 500
ACCEPT_DATA_SEED = 20240
# lambda_seg raised from its 0.1 default and the shape head given a faster
# rate: the cross-entropy term is what anchors thresholded mask shape, and at
# the defaults the masks converge too slowly to clear the IoU gate in 2000 steps
ACCEPT_TRAIN_KWARGS = dict(steps=2000, batch_size=6, seed=11, checkpoint_every=1000,
                           lambda_seg=2.0, mask_head_lr=1e-3)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def untrained_model() -> ModelBundle:
    return ModelBundle(TrainConfig(seed=11)).eval()


@pytest.fixture(scope="session")
def toy_sample() -> dolls.Sample:
    pose = (0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    spec = dolls.PaperDollSpec(
        seed=2, pose_params=pose, body_tone=0.3, hair_style="long",
        top=dolls.GarmentAttrs(0.6, 0.4, (0.20, 0.60, 0.30), "stripes"),
        bottom=dolls.GarmentAttrs(0.7, 0.3, (0.50, 0.30, 0.20), "solid"),
    )
    return dolls.render_person(spec)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory) -> DatasetManifest:
    out = tmp_path_factory.mktemp("smalldata")
    return build_dataset(30, 7, out)


@pytest.fixture(scope="session")
def accept_manifest() -> DatasetManifest:
    out = ARTIFACTS / f"data_{ACCEPT_DATA_COUNT}_{ACCEPT_DATA_SEED}"
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        return DatasetManifest.load(manifest_path)
    return build_dataset(ACCEPT_DATA_COUNT, ACCEPT_DATA_SEED, out)


def _train_key(config: TrainConfig) -> str:
    d = config.to_dict()
    d.pop("dataset_path")
    d.pop("out_dir")
    d["data"] = [ACCEPT_DATA_COUNT, ACCEPT_DATA_SEED]
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


@pytest.fixture(scope="session")
def trained_run(accept_manifest) -> dict:
    """Train the acceptance model once (or reuse the cached checkpoint).

    Returns {"model": ModelBundle, "minutes": float, "run_dir": Path}.
    """
    config = TrainConfig(dataset_path=str(accept_manifest.root), **ACCEPT_TRAIN_KWARGS)
    run_dir = ARTIFACTS / f"run_{_train_key(config)}"
    config.out_dir = str(run_dir)
    ckpt = run_dir / "checkpoint_latest.pt"
    sidecar = run_dir / "train_time.json"
    if ckpt.exists() and sidecar.exists():
        minutes = json.loads(sidecar.read_text())["minutes"]
        return {"model": ModelBundle.load(ckpt), "minutes": minutes, "run_dir": run_dir}

    start = time.time()
    model = train(config, quiet=True)
    minutes = (time.time() - start) / 60.0
    sidecar.write_text(json.dumps({"minutes": minutes}))
    return {"model": model, "minutes": minutes, "run_dir": run_dir}


@pytest.fixture(scope="session")
def trained_model(trained_run) -> ModelBundle:
    return trained_run["model"].eval()
