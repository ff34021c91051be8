"""Deliberately slow, loop-based reference implementations of the core formulas.

Each oracle is independent of the fast path it checks: plain Python loops over
numpy float64 arrays, no torch. Divergence between an oracle and the main
implementation is always attributed to the main implementation first.

The case corpus lives as one JSON metadata file plus one .npz tensor file per
kind, regenerated by scripts/make_oracle_cases.py with a fixed seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tryonlab.errors import OracleSizeError, ValidationError

ORACLE_KINDS = ("eq1", "eq2", "warp", "ssim", "siou", "xent", "losssum")
MAX_SPATIAL = 8
MAX_SPATIAL_SSIM = 16  # the 11x11 window needs room
MAX_CHANNELS = 4
MASK_SNAP_EPS = 1e-3


@dataclass
class OracleCase:
    name: str
    kind: str
    inputs: dict[str, np.ndarray]
    expected: np.ndarray
    tolerance: float
    provenance: str = "DERIVED"


def _check_size(kind: str, arrays: dict[str, np.ndarray]) -> None:
    limit = MAX_SPATIAL_SSIM if kind == "ssim" else MAX_SPATIAL
    # xent's leading dim is the class count (5 by schema), not a channel count
    channel_limited = kind not in ("siou", "xent")
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.ndim >= 2 and max(arr.shape[-2:]) > limit:
            raise OracleSizeError(
                f"{kind} oracle refuses {name} of shape {arr.shape}; limit {limit}")
        if arr.ndim == 3 and arr.shape[0] > MAX_CHANNELS and channel_limited:
            raise OracleSizeError(
                f"{kind} oracle refuses {name} with {arr.shape[0]} channels")


def _snap(m: float) -> float:
    if m < MASK_SNAP_EPS:
        return 0.0
    if m > 1.0 - MASK_SNAP_EPS:
        return 1.0
    return m


def eq1_oracle(skin_texture, skin_mask, bg_mapped, fg_masks):
    """Body texture composition with an identity channel mapper.

    skin_texture (C,h,w), skin_mask (1,h,w), bg_mapped (C,h,w) already mapped,
    fg_masks (K,1,h,w) or list. Returns (texture (C,h,w), used_fallback).
    """
    skin_texture = np.asarray(skin_texture, dtype=np.float64)
    skin_mask = np.asarray(skin_mask, dtype=np.float64)
    bg_mapped = np.asarray(bg_mapped, dtype=np.float64)
    c, h, w = skin_texture.shape

    roi_sum = np.zeros(c)
    roi_count = 0
    for y in range(h):
        for x in range(w):
            if skin_mask[0, y, x] > 0.5:
                roi_count += 1
                for ch in range(c):
                    roi_sum[ch] += skin_texture[ch, y, x]
    if roi_count == 0:
        b = np.array([skin_texture[ch].mean() for ch in range(c)])
        fallback = True
    else:
        b = roi_sum / roi_count
        fallback = False

    fg = np.zeros((h, w))
    for m in fg_masks:
        m = np.asarray(m, dtype=np.float64).reshape(h, w)
        for y in range(h):
            for x in range(w):
                fg[y, x] = max(fg[y, x], _snap(float(m[y, x])))

    out = np.zeros_like(skin_texture)
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                mapped_fg = b[ch] * fg[y, x]  # identity mapper on the broadcast
                out[ch, y, x] = fg[y, x] * mapped_fg + (1.0 - fg[y, x]) * bg_mapped[ch, y, x]
    return out, fallback


def eq2_oracle(state, update, mask):
    """The garment recurrence, elementwise: update*M + state*(1-M)."""
    state = np.asarray(state, dtype=np.float64)
    update = np.asarray(update, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    c, h, w = state.shape
    out = np.zeros_like(state)
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                m = _snap(float(mask[0, y, x]))
                out[ch, y, x] = update[ch, y, x] * m + state[ch, y, x] * (1.0 - m)
    return out


def warp_oracle(feature, flow):
    """Bilinear backward warp with border clamping, one sample at a time."""
    feature = np.asarray(feature, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    c, h, w = feature.shape
    out = np.zeros_like(feature)
    for y in range(h):
        for x in range(w):
            sx = min(max(x + flow[0, y, x], 0.0), w - 1.0)
            sy = min(max(y + flow[1, y, x], 0.0), h - 1.0)
            x0 = math.floor(sx)
            y0 = math.floor(sy)
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            wx = sx - x0
            wy = sy - y0
            for ch in range(c):
                out[ch, y, x] = ((1 - wx) * (1 - wy) * feature[ch, y0, x0]
                                 + wx * (1 - wy) * feature[ch, y0, x1]
                                 + (1 - wx) * wy * feature[ch, y1, x0]
                                 + wx * wy * feature[ch, y1, x1])
    return out


def ssim_oracle(a, b, window: int = 11, sigma: float = 1.5):
    """Direct-formula SSIM over every valid window position."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    half = window // 2
    ax = np.arange(window, dtype=np.float64) - half
    g = np.exp(-(ax ** 2) / (2 * sigma * sigma))
    win = np.outer(g, g)
    win = win / win.sum()

    channels, h, w = a.shape
    values = []
    for ch in range(channels):
        for cy in range(half, h - half):
            for cx in range(half, w - half):
                mu_a = mu_b = 0.0
                e_aa = e_bb = e_ab = 0.0
                for dy in range(window):
                    for dx in range(window):
                        va = a[ch, cy - half + dy, cx - half + dx]
                        vb = b[ch, cy - half + dy, cx - half + dx]
                        wgt = win[dy, dx]
                        mu_a += wgt * va
                        mu_b += wgt * vb
                        e_aa += wgt * va * va
                        e_bb += wgt * vb * vb
                        e_ab += wgt * va * vb
                var_a = e_aa - mu_a * mu_a
                var_b = e_bb - mu_b * mu_b
                cov = e_ab - mu_a * mu_b
                num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
                den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
                values.append(num / den)
    return float(np.mean(values))


def siou_oracle(pred, truth, labels=(0, 1, 2, 3, 4)):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    h, w = pred.shape
    out = {}
    for label in labels:
        inter = union = 0
        for y in range(h):
            for x in range(w):
                p = pred[y, x] == label
                t = truth[y, x] == label
                if p and t:
                    inter += 1
                if p or t:
                    union += 1
        out[int(label)] = 1.0 if union == 0 else inter / union
    return out


def xent_oracle(logits, labels):
    """Per-pixel softmax cross-entropy, averaged."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    k, h, w = logits.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            z = logits[:, y, x]
            zmax = z.max()
            logsum = zmax + math.log(np.exp(z - zmax).sum())
            total += logsum - z[int(labels[y, x])]
    return total / (h * w)


def losssum_oracle(content, geo, gan, seg, lambda_gan, lambda_seg):
    return content + geo + lambda_gan * gan + lambda_seg * seg


def eq_oracle(kind: str, inputs: dict):
    """Dispatch to one loop-based formula implementation."""
    if kind not in ORACLE_KINDS:
        raise ValidationError(f"unknown oracle kind {kind!r}")
    arrays = {k: np.asarray(v) for k, v in inputs.items()
              if isinstance(v, (np.ndarray, list, tuple))}
    _check_size(kind, arrays)
    if kind == "eq1":
        texture, fallback = eq1_oracle(inputs["skin_texture"], inputs["skin_mask"],
                                       inputs["bg_mapped"], inputs["fg_masks"])
        return texture
    if kind == "eq2":
        return eq2_oracle(inputs["state"], inputs["update"], inputs["mask"])
    if kind == "warp":
        return warp_oracle(inputs["feature"], inputs["flow"])
    if kind == "ssim":
        return ssim_oracle(inputs["a"], inputs["b"])
    if kind == "siou":
        scores = siou_oracle(inputs["pred"], inputs["truth"])
        return np.array([scores[label] for label in sorted(scores)])
    if kind == "xent":
        return xent_oracle(inputs["logits"], inputs["labels"])
    return losssum_oracle(float(inputs["content"]), float(inputs["geo"]),
                          float(inputs["gan"]), float(inputs["seg"]),
                          float(inputs["lambda_gan"]), float(inputs["lambda_seg"]))


def _stable_mask(rng: np.random.Generator, shape) -> np.ndarray:
    """Random soft mask whose values are fixed points of the snap clamp."""
    m = rng.uniform(0.01, 0.99, size=shape)
    hard = rng.random(shape)
    m[hard < 0.15] = 0.0
    m[hard > 0.85] = 1.0
    return m


def generate_cases(kind: str, count: int, seed: int) -> list[OracleCase]:
    """Random small cases with expected outputs computed by the oracles."""
    rng = np.random.default_rng([seed, ORACLE_KINDS.index(kind)])
    cases = []
    for i in range(count):
        if kind == "eq1":
            c, h, w = 3, int(rng.integers(2, 7)), int(rng.integers(2, 7))
            n_masks = int(rng.integers(1, 4))
            inputs = {
                "skin_texture": rng.normal(size=(c, h, w)),
                "skin_mask": _stable_mask(rng, (1, h, w)),
                "bg_mapped": rng.normal(size=(c, h, w)),
                "fg_masks": np.stack([_stable_mask(rng, (1, h, w)) for _ in range(n_masks)]),
            }
            tol = 1e-6
        elif kind == "eq2":
            c, h, w = 3, int(rng.integers(2, 8)), int(rng.integers(2, 8))
            inputs = {
                "state": rng.normal(size=(c, h, w)),
                "update": rng.normal(size=(c, h, w)),
                "mask": _stable_mask(rng, (1, h, w)),
            }
            tol = 1e-6
        elif kind == "warp":
            c, h, w = int(rng.integers(1, 4)), int(rng.integers(3, 8)), int(rng.integers(3, 8))
            inputs = {
                "feature": rng.normal(size=(c, h, w)),
                "flow": rng.uniform(-2.0, 2.0, size=(2, h, w)),
            }
            tol = 1e-6
        elif kind == "ssim":
            h = int(rng.integers(11, 17))
            w = int(rng.integers(11, 17))
            inputs = {
                "a": rng.uniform(0, 1, size=(3, h, w)),
                "b": rng.uniform(0, 1, size=(3, h, w)),
            }
            tol = 1e-5
        elif kind == "siou":
            h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
            inputs = {
                "pred": rng.integers(0, 5, size=(h, w)),
                "truth": rng.integers(0, 5, size=(h, w)),
            }
            tol = 1e-9
        elif kind == "xent":
            h, w = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            inputs = {
                "logits": rng.normal(scale=3.0, size=(5, h, w)),
                "labels": rng.integers(0, 5, size=(h, w)),
            }
            tol = 1e-6
        else:  # losssum
            inputs = {name: rng.uniform(0, 4) for name in ("content", "geo", "gan", "seg")}
            inputs["lambda_gan"] = rng.uniform(0, 2)
            inputs["lambda_seg"] = rng.uniform(0, 2)
            tol = 1e-9
        expected = np.asarray(eq_oracle(kind, inputs), dtype=np.float64)
        cases.append(OracleCase(name=f"{kind}_{i:03d}", kind=kind, inputs=inputs,
                                expected=expected, tolerance=tol))
    return cases


def save_corpus(cases_by_kind: dict[str, list[OracleCase]], out_dir: str | Path,
                seed: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind, cases in cases_by_kind.items():
        meta = {"kind": kind, "seed": seed, "version": 1, "cases": []}
        arrays = {}
        for case in cases:
            entry = {"name": case.name, "tolerance": case.tolerance,
                     "provenance": case.provenance, "inputs": {}}
            for field_name, value in case.inputs.items():
                arr = np.asarray(value)
                key = f"{case.name}__{field_name}"
                arrays[key] = arr
                entry["inputs"][field_name] = key
            arrays[f"{case.name}__expected"] = case.expected
            entry["expected"] = f"{case.name}__expected"
            meta["cases"].append(entry)
        (out / f"{kind}.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        np.savez(out / f"{kind}.npz", **arrays)


def load_corpus(corpus_dir: str | Path, kinds=ORACLE_KINDS) -> dict[str, list[OracleCase]]:
    corpus_dir = Path(corpus_dir)
    out: dict[str, list[OracleCase]] = {}
    for kind in kinds:
        meta_path = corpus_dir / f"{kind}.json"
        if not meta_path.exists():
            raise ValidationError(f"missing oracle corpus file: {meta_path}")
        meta = json.loads(meta_path.read_text())
        arrays = np.load(corpus_dir / f"{kind}.npz")
        cases = []
        for entry in meta["cases"]:
            inputs = {name: arrays[key] for name, key in entry["inputs"].items()}
            cases.append(OracleCase(
                name=entry["name"], kind=kind, inputs=inputs,
                expected=arrays[entry["expected"]], tolerance=entry["tolerance"],
                provenance=entry["provenance"],
            ))
        out[kind] = cases
    return out
