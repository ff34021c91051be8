"""Dataset building and loading: PNG images, label maps, keypoint JSON, manifest."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from tryonlab import dolls
from tryonlab.errors import ValidationError

SCHEMA_VERSION = 1


@dataclass
class ManifestEntry:
    sample_id: str
    image: str      # paths relative to the manifest directory
    seg: str
    keypoints: str
    split: str      # train | val | test
    spec: dolls.PaperDollSpec

    def to_json(self) -> dict:
        return {
            "id": self.sample_id,
            "image": self.image,
            "seg": self.seg,
            "keypoints": self.keypoints,
            "split": self.split,
            "spec": self.spec.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        return cls(
            sample_id=d["id"], image=d["image"], seg=d["seg"],
            keypoints=d["keypoints"], split=d["split"],
            spec=dolls.PaperDollSpec.from_json(d["spec"]),
        )


@dataclass
class DatasetManifest:
    seed: int
    count: int
    samples: list[ManifestEntry]
    root: Path | None = None
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "count": self.count,
            "samples": [s.to_json() for s in self.samples],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in ("train", "val", "test"):
            raise ValidationError(f"unknown split {split!r}")
        return [s for s in self.samples if s.split == split]

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        return cls(
            seed=d["seed"], count=d["count"],
            samples=[ManifestEntry.from_json(s) for s in d["samples"]],
            root=path.parent, schema_version=d["schema_version"],
        )


def save_image_png(image: np.ndarray, path: Path) -> None:
    """(3, H, W) float in [0,1] -> 8-bit RGB PNG."""
    arr = np.round(np.asarray(image) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def save_seg_png(seg: np.ndarray, path: Path) -> None:
    """Single-channel PNG with raw label values."""
    Image.fromarray(np.asarray(seg, dtype=np.uint8), mode="L").save(path)


def load_seg_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.uint8)


def save_keypoints_json(keypoints: np.ndarray, path: Path) -> None:
    triples = [[float(x), float(y), int(v)] for x, y, v in keypoints]
    path.write_text(json.dumps(triples))


def load_keypoints_json(path: Path) -> np.ndarray:
    triples = json.loads(Path(path).read_text())
    return np.asarray(triples, dtype=np.float32)


def _split_for(count: int, seed: int, sample_ids: list[str]) -> dict[str, str]:
    """80/10/10 split: order samples by a seed-derived hash, slice exactly."""
    def key(sid: str) -> str:
        return hashlib.sha256(f"{seed}:{sid}".encode()).hexdigest()

    ordered = sorted(sample_ids, key=key)
    n_val = count // 10
    n_test = count // 10
    splits: dict[str, str] = {}
    for i, sid in enumerate(ordered):
        if i < count - n_val - n_test:
            splits[sid] = "train"
        elif i < count - n_test:
            splits[sid] = "val"
        else:
            splits[sid] = "test"
    return splits


def build_dataset(count: int, seed: int, out_path: str | Path) -> DatasetManifest:
    """Render `count` dolls and write images, labels, keypoints and a manifest.

    Fully deterministic in (count, seed).
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    out = Path(out_path)
    for sub in ("images", "seg", "keypoints"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(int(seed) & 0xFFFFFFFF)
    sample_ids = [f"s{i:05d}" for i in range(count)]
    splits = _split_for(count, seed, sample_ids)

    entries = []
    for sid in sample_ids:
        spec = dolls.random_spec(rng)
        sample = dolls.render_person(spec)
        image_rel = f"images/{sid}.png"
        seg_rel = f"seg/{sid}.png"
        kp_rel = f"keypoints/{sid}.json"
        save_image_png(sample.image, out / image_rel)
        save_seg_png(sample.seg, out / seg_rel)
        save_keypoints_json(sample.keypoints, out / kp_rel)
        entries.append(ManifestEntry(
            sample_id=sid, image=image_rel, seg=seg_rel, keypoints=kp_rel,
            split=splits[sid], spec=spec,
        ))

    manifest = DatasetManifest(seed=seed, count=count, samples=entries, root=out)
    (out / "manifest.json").write_text(manifest.dumps())
    return manifest


def load_sample(manifest: DatasetManifest, entry: ManifestEntry) -> dolls.Sample:
    """Read one sample back from disk (image quantized to 8 bits)."""
    if manifest.root is None:
        raise ValidationError("manifest has no root directory; load it from disk")
    root = Path(manifest.root)
    return dolls.Sample(
        image=load_image_png(root / entry.image),
        keypoints=load_keypoints_json(root / entry.keypoints),
        seg=load_seg_png(root / entry.seg),
        spec=entry.spec,
    )
