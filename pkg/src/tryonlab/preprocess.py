"""Network input preparation: keypoint heatmaps, garment segments, external adapters."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from tryonlab.dolls import ALL_LABELS, CANVAS, N_KEYPOINTS
from tryonlab.errors import FormatError, ShapeError, ValidationError

HEATMAP_SIGMA = 1.5
DEFAULT_CONFIDENCE_THRESHOLD = 0.1


@dataclass
class GarmentSegment:
    """A binary mask plus the image restricted to it."""

    mask: torch.Tensor          # (1, 64, 64) in {0, 1}
    masked_image: torch.Tensor  # (3, 64, 64), zero off-mask
    source_label: int


def make_heatmaps(keypoints: np.ndarray, size: int = CANVAS, sigma: float = HEATMAP_SIGMA) -> torch.Tensor:
    """One Gaussian-bump channel per visible keypoint, peak exactly 1 at the
    keypoint's rounded pixel; invisible channels are identically zero."""
    keypoints = np.asarray(keypoints, dtype=np.float64)
    if keypoints.shape != (N_KEYPOINTS, 3):
        raise ShapeError(f"expected ({N_KEYPOINTS}, 3) keypoints, got {keypoints.shape}")
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    maps = np.zeros((N_KEYPOINTS, size, size), dtype=np.float64)
    for k, (x, y, v) in enumerate(keypoints):
        if v <= 0:
            continue
        if not (0.0 <= x < size and 0.0 <= y < size):
            raise ValidationError(f"keypoint {k} at ({x}, {y}) outside [0, {size})")
        cx, cy = round(float(x)), round(float(y))
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        maps[k] = np.exp(-d2 / (2.0 * sigma * sigma))
    return torch.from_numpy(maps).float()


def extract_segment(image, seg, label: int) -> GarmentSegment:
    """mask = (seg == label); masked_image = image * mask."""
    if label not in ALL_LABELS:
        raise ValidationError(f"label {label} outside schema {ALL_LABELS}")
    image_t = torch.as_tensor(np.asarray(image), dtype=torch.float32)
    seg_a = np.asarray(seg)
    if image_t.shape[-2:] != tuple(seg_a.shape):
        raise ShapeError(f"image {tuple(image_t.shape)} and seg {seg_a.shape} disagree")
    mask = torch.from_numpy((seg_a == label).astype(np.float32)).unsqueeze(0)
    return GarmentSegment(mask=mask, masked_image=image_t * mask, source_label=label)


def import_external_pose(
    file: str | Path,
    source_size: int | tuple[int, int] = CANVAS,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> np.ndarray:
    """Adapt an external keypoint JSON (flat list of 18x3 x, y, confidence).

    Coordinates are rescaled from `source_size` to the 64x64 canvas;
    confidence above the threshold maps to visible.
    """
    raw = json.loads(Path(file).read_text())
    if not isinstance(raw, list) or len(raw) != N_KEYPOINTS * 3:
        n = len(raw) if isinstance(raw, list) else "non-list"
        raise FormatError(f"expected a flat list of {N_KEYPOINTS * 3} numbers, got {n}")
    src_w, src_h = (source_size, source_size) if isinstance(source_size, int) else source_size
    arr = np.asarray(raw, dtype=np.float64).reshape(N_KEYPOINTS, 3)
    out = np.zeros_like(arr, dtype=np.float32)
    out[:, 0] = np.clip(arr[:, 0] * (CANVAS / src_w), 0.0, CANVAS - 1e-3)
    out[:, 1] = np.clip(arr[:, 1] * (CANVAS / src_h), 0.0, CANVAS - 1e-3)
    out[:, 2] = (arr[:, 2] > confidence_threshold).astype(np.float32)
    return out


def _nearest_resize_labels(labels: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor by index flooring: out[i, j] = src[floor(i*sh), floor(j*sw)]."""
    h, w = labels.shape
    rows = (np.arange(size) * (h / size)).astype(int)
    cols = (np.arange(size) * (w / size)).astype(int)
    return labels[np.ix_(rows, cols)]


def import_external_parse(
    file: str | Path, label_map: dict, size: int = CANVAS
) -> np.ndarray:
    """Adapt an external single-channel label PNG via a user remapping table.

    Every label id present in the file must appear in label_map (ids may be
    given as ints or strings); pixels claimed by several source garments are
    not disambiguated here - first label wins in the source file itself.
    """
    img = Image.open(Path(file))
    if img.mode not in ("L", "P", "I", "I;16"):
        raise FormatError(f"expected a single-channel label PNG, got mode {img.mode!r}")
    if img.mode == "P":
        labels = np.asarray(img, dtype=np.int64)  # raw palette indices, not RGB
    else:
        labels = np.asarray(img.convert("I"), dtype=np.int64)

    table = {}
    for k, v in label_map.items():
        table[int(k)] = int(v)
        if int(v) not in ALL_LABELS:
            raise FormatError(f"label_map target {v} outside schema {ALL_LABELS}")

    present = set(int(u) for u in np.unique(labels))
    unmapped = sorted(present - set(table))
    if unmapped:
        raise FormatError(f"unmapped label ids in parse file: {unmapped}")

    lookup = np.zeros(max(present) + 1, dtype=np.uint8)
    for k, v in table.items():
        if k <= max(present):
            lookup[k] = v
    remapped = lookup[labels]
    return _nearest_resize_labels(remapped, size).astype(np.uint8)
