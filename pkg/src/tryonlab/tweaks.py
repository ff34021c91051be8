"""Garment tweaking: post-transfer attribute edits applied to encoded garment
features before re-rendering.

Geometric kinds (sleeve/leg length, width) edit the soft shape mask inside a
limb corridor derived from the keypoints; recoloring blends texture features
toward the encoding of a flat color patch; latent tweaks move pooled garment
features along a learned attribute direction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.optimize import minimize

from tryonlab import geom
from tryonlab.encoders import FEATURE_GRID, GarmentFeature
from tryonlab.errors import TweakError, ValidationError
from tryonlab.generator import PersonRepresentation, try_on

TWEAK_KINDS = ("sleeve_length", "leg_length", "width", "recolor", "latent")

# Keypoint index triples (proximal to distal) per corridor.
ARM_CHAINS = ((2, 3, 4), (5, 6, 7))
LEG_CHAINS = ((8, 9, 10), (11, 12, 13))
LIMB_CORRIDOR_RADIUS = 1.6   # feature-grid cells
TORSO_CORRIDOR_RADIUS = 4.0
LATENT_STEP_SCALE = 3.0


@dataclass(frozen=True)
class Tweak:
    kind: str
    magnitude: float
    target_garment: int
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TWEAK_KINDS:
            raise ValidationError(f"kind must be one of {TWEAK_KINDS}, got {self.kind!r}")
        if not (-1.0 <= self.magnitude <= 1.0):
            raise ValidationError(f"magnitude must be in [-1, 1], got {self.magnitude}")
        if self.kind == "recolor":
            color = self.payload.get("color")
            if color is None or len(color) != 3:
                raise ValidationError("recolor tweak needs payload {'color': [r, g, b]}")
        if self.kind == "latent" and "direction" not in self.payload:
            raise ValidationError("latent tweak needs payload {'direction': <id>}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "magnitude": self.magnitude,
                "target_garment": self.target_garment, "payload": dict(self.payload)}

    @classmethod
    def from_json(cls, d: dict) -> "Tweak":
        return cls(kind=d["kind"], magnitude=float(d["magnitude"]),
                   target_garment=int(d["target_garment"]),
                   payload=dict(d.get("payload") or {}))


@dataclass
class AttributeDirection:
    """Unit vector in garment-feature space along which one attribute varies."""

    direction: np.ndarray  # (L,), unit norm
    attribute: str
    fit_accuracy: float
    train_count: int

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(self.direction)
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"direction must be unit norm, |d| = {norm}")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "attribute": self.attribute,
            "direction": self.direction.tolist(),
            "fit_accuracy": self.fit_accuracy,
            "train_count": self.train_count,
        }, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "AttributeDirection":
        d = json.loads(Path(path).read_text())
        return cls(direction=np.asarray(d["direction"]), attribute=d["attribute"],
                   fit_accuracy=float(d["fit_accuracy"]), train_count=int(d["train_count"]))


def _corridor(keypoints: np.ndarray, chain: tuple[int, int, int],
              radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(inside, arc parameter, distance) over the 16x16 grid for one limb chain."""
    kps = np.asarray(keypoints, dtype=np.float64)
    missing = [int(i) for i in chain if kps[i, 2] <= 0]
    if missing:
        raise TweakError(f"required keypoints invisible: {missing}")
    line = [kps[i, :2] / 4.0 for i in chain]  # pixel -> grid coordinates
    ys, xs = np.mgrid[0:FEATURE_GRID, 0:FEATURE_GRID].astype(np.float64)
    dist, t = geom.polyline_distance_and_param(xs, ys, line)
    return dist <= radius, t, dist


def _nearest_covered_fill(texture: np.ndarray, covered: np.ndarray,
                          cells: np.ndarray) -> np.ndarray:
    """Copy each newly covered cell's texture from its nearest covered cell."""
    out = texture.copy()
    src_ys, src_xs = np.nonzero(covered)
    if len(src_ys) == 0:
        return out
    for y, x in zip(*np.nonzero(cells)):
        d2 = (src_ys - y) ** 2 + (src_xs - x) ** 2
        k = int(np.argmin(d2))
        out[:, y, x] = texture[:, src_ys[k], src_xs[k]]
    return out


def tweak_shape_mask(garment: GarmentFeature, keypoints, kind: str,
                     magnitude: float) -> GarmentFeature:
    """Extend or retract mask coverage along limb corridors, or widen/narrow the
    torso region. Magnitude 0 is the exact identity; cells outside the corridor
    are bit-identical."""
    if kind not in ("sleeve_length", "leg_length", "width"):
        raise ValidationError(f"not a shape tweak kind: {kind!r}")
    if not (-1.0 <= magnitude <= 1.0):
        raise ValidationError(f"magnitude must be in [-1, 1], got {magnitude}")
    if magnitude == 0.0:
        return garment

    mask = garment.shape_mask.detach().cpu().numpy().copy()[0]
    texture = garment.texture.detach().cpu().numpy().copy()
    covered = mask > 0.5

    if kind == "width":
        kps = np.asarray(keypoints, dtype=np.float64)
        missing = [int(i) for i in (1, 8, 11) if kps[i, 2] <= 0]
        if missing:
            raise TweakError(f"required keypoints invisible: {missing}")
        mid_hip = (kps[8, :2] + kps[11, :2]) / 2.0
        line = [kps[1, :2] / 4.0, mid_hip / 4.0]
        ys, xs = np.mgrid[0:FEATURE_GRID, 0:FEATURE_GRID].astype(np.float64)
        dist, _ = geom.polyline_distance_and_param(xs, ys, line)
        corridor = dist <= TORSO_CORRIDOR_RADIUS
        steps = max(1, round(2 * abs(magnitude)))
        area = covered & corridor
        if magnitude > 0:
            grown = area.copy()
            for _ in range(steps):
                grown[:, 1:] |= grown[:, :-1]
                grown[:, :-1] |= grown[:, 1:]
            new_cells = grown & corridor & ~covered
            mask[new_cells] = 1.0
            texture = _nearest_covered_fill(texture, covered, new_cells)
        else:
            shrunk = area.copy()
            for _ in range(steps):
                keep = shrunk.copy()
                keep[:, 1:] &= shrunk[:, :-1]
                keep[:, :-1] &= shrunk[:, 1:]
                shrunk = keep
            removed = area & ~shrunk
            mask[removed] = 0.0
    else:
        chains = ARM_CHAINS if kind == "sleeve_length" else LEG_CHAINS
        for chain in chains:
            corridor, t, _ = _corridor(keypoints, chain, LIMB_CORRIDOR_RADIUS)
            in_corridor_covered = covered & corridor
            cutoff = float(t[in_corridor_covered].max()) if in_corridor_covered.any() else 0.0
            new_cutoff = float(np.clip(cutoff + magnitude, 0.0, 1.0))
            if magnitude > 0:
                new_cells = corridor & (t <= new_cutoff) & ~covered
                mask[new_cells] = 1.0
                texture = _nearest_covered_fill(texture, covered, new_cells)
            else:
                removed = corridor & (t > new_cutoff) & covered
                mask[removed] = 0.0

    mask_t = torch.from_numpy(mask).unsqueeze(0).to(garment.shape_mask.dtype)
    return GarmentFeature(
        texture=torch.from_numpy(texture).to(garment.texture.dtype),
        shape_mask=mask_t,
        shape_logits=garment.shape_logits,
        flow=garment.flow,
        source_label=garment.source_label,
    )


def recolor_texture(garment: GarmentFeature, color, strength: float,
                    texture_encoder) -> GarmentFeature:
    """Blend texture features toward the encoding of a flat color patch inside
    the garment mask. Strength 1 is idempotent."""
    if not (0.0 <= strength <= 1.0):
        raise ValidationError(f"strength must be in [0, 1], got {strength}")
    if strength == 0.0:
        return garment
    color = [float(c) for c in color]
    if len(color) != 3:
        raise ValidationError("color must be an RGB triple")
    patch = torch.tensor(color, dtype=garment.texture.dtype).view(3, 1, 1).expand(3, 64, 64)
    with torch.no_grad():
        target = texture_encoder(patch.contiguous())
    inside = (garment.shape_mask > 0.5).to(garment.texture.dtype)
    blended = garment.texture * (1.0 - strength * inside) + target * (strength * inside)
    return GarmentFeature(texture=blended, shape_mask=garment.shape_mask,
                          shape_logits=garment.shape_logits, flow=garment.flow,
                          source_label=garment.source_label)


def pooled_latent(garment: GarmentFeature) -> np.ndarray:
    """Mean texture vector over cells where the mask exceeds 0.5."""
    tex = garment.texture.detach().cpu().numpy()
    inside = garment.shape_mask.detach().cpu().numpy()[0] > 0.5
    if not inside.any():
        return tex.mean(axis=(1, 2)).astype(np.float64)
    return tex[:, inside].mean(axis=1).astype(np.float64)


def _logistic_objective(params, x, y, l2):
    w = params[:-1]
    b = params[-1]
    z = y * (x @ w + b)
    # mean softplus(-z) + l2 * |w|^2, numerically stable
    loss = np.mean(np.logaddexp(0.0, -z)) + l2 * float(w @ w)
    s = 1.0 / (1.0 + np.exp(np.clip(z, -60, 60)))
    grad_w = -(x.T @ (y * s)) / len(y) + 2.0 * l2 * w
    grad_b = -float(np.mean(y * s))
    return loss, np.concatenate([grad_w, [grad_b]])


def fit_attribute_direction(latents, labels, attribute: str = "custom",
                            l2: float = 1e-3, holdout: float = 0.2,
                            seed: int = 0) -> AttributeDirection:
    """Linear boundary between two labeled sets of pooled garment latents.

    Fits a logistic classifier with L2 penalty on an 80% split; the unit
    normal of the boundary is the attribute direction, and accuracy comes from
    the held-out 20%. Examples are canonically sorted before the seeded split,
    so the fit does not depend on input order.
    """
    x = np.asarray([np.asarray(v, dtype=np.float64).reshape(-1) for v in latents])
    y_raw = np.asarray(labels).astype(int).reshape(-1)
    if len(x) != len(y_raw):
        raise ValidationError("latents and labels must have the same length")
    classes = np.unique(y_raw)
    if len(classes) != 2:
        raise ValidationError(f"need exactly two classes, got {classes.tolist()}")
    for cls_value in classes:
        if (y_raw == cls_value).sum() < 20:
            raise ValidationError("need at least 20 examples per class")
    y = np.where(y_raw == classes.max(), 1.0, -1.0)

    order = np.lexsort((y, *(x[:, i] for i in reversed(range(x.shape[1])))))
    x, y = x[order], y[order]
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 31])
    perm = rng.permutation(len(x))
    n_hold = max(1, int(round(holdout * len(x))))
    hold_idx, fit_idx = perm[:n_hold], perm[n_hold:]

    x0 = np.zeros(x.shape[1] + 1)
    res = minimize(_logistic_objective, x0, args=(x[fit_idx], y[fit_idx], l2),
                   jac=True, method="L-BFGS-B", options={"maxiter": 500})
    w = res.x[:-1]
    b = res.x[-1]
    norm = np.linalg.norm(w)
    if norm == 0:
        raise ValidationError("degenerate fit: zero weight vector")
    pred = np.sign(x[hold_idx] @ w + b)
    accuracy = float((pred == y[hold_idx]).mean())
    return AttributeDirection(direction=w / norm, attribute=attribute,
                              fit_accuracy=accuracy, train_count=len(fit_idx))


def tweak_latent(garment: GarmentFeature, direction: AttributeDirection,
                 magnitude: float, step_scale: float = LATENT_STEP_SCALE) -> GarmentFeature:
    """Shift texture features along the attribute direction inside the mask."""
    if magnitude == 0.0:
        return garment
    inside = (garment.shape_mask > 0.5).to(garment.texture.dtype)
    shift = torch.from_numpy(direction.direction).to(garment.texture.dtype)
    delta = magnitude * step_scale * shift.view(-1, 1, 1) * inside
    return GarmentFeature(texture=garment.texture + delta,
                          shape_mask=garment.shape_mask,
                          shape_logits=garment.shape_logits, flow=garment.flow,
                          source_label=garment.source_label)


def apply_tweak(person: PersonRepresentation, tweak: Tweak, model,
                directions: dict[str, AttributeDirection] | None = None) -> PersonRepresentation:
    """Apply one tweak to the targeted garment, returning a new person."""
    if not (0 <= tweak.target_garment < len(person.garments)):
        raise ValidationError(
            f"garment index {tweak.target_garment} out of range "
            f"(stack has {len(person.garments)})")
    garment = person.garments[tweak.target_garment]
    if tweak.kind in ("sleeve_length", "leg_length", "width"):
        if person.keypoints is None:
            raise TweakError("person has no keypoints; shape tweaks unavailable")
        edited = tweak_shape_mask(garment, person.keypoints, tweak.kind, tweak.magnitude)
    elif tweak.kind == "recolor":
        strength = abs(tweak.magnitude)
        edited = recolor_texture(garment, tweak.payload["color"], strength, model.e_tex)
    else:
        name = tweak.payload["direction"]
        if not directions or name not in directions:
            raise ValidationError(f"unknown attribute direction {name!r}")
        edited = tweak_latent(garment, directions[name], tweak.magnitude)
    garments = list(person.garments)
    garments[tweak.target_garment] = edited
    return person.with_garments(garments)


def apply_tweaks(person: PersonRepresentation, tweaks, model,
                 directions: dict[str, AttributeDirection] | None = None) -> torch.Tensor:
    """Apply tweaks in order to the garment features, then re-run the try-on."""
    for tweak in tweaks:
        person = apply_tweak(person, tweak, model, directions)
    with torch.no_grad():
        return try_on(model, person)
