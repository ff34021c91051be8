"""Procedural paper-doll people with exact pose, segmentation and garment labels.

Dolls are vector-drawn (disks, capsules, quads) and rasterized at 64x64.
The same analytic geometry produces the image, the label map and the
keypoints, so ground truth is exact by construction.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace

import numpy as np

from tryonlab import geom
from tryonlab.errors import ValidationError

CANVAS = 64
N_KEYPOINTS = 18

# Label schema.
LABEL_BACKGROUND = 0
LABEL_SKIN = 1
LABEL_HAIR = 2
LABEL_TOP = 3
LABEL_BOTTOM = 4
ALL_LABELS = (0, 1, 2, 3, 4)
GARMENT_LABELS = (LABEL_HAIR, LABEL_TOP, LABEL_BOTTOM)

HAIR_STYLES = ("short", "long", "none")
PATTERNS = ("solid", "stripes", "dots")

# COCO-18 keypoint names in OpenPose order. The doll defines 0-13 analytically;
# eyes/ears (14-17) are placed but marked invisible.
KEYPOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)

_SKIN_LIGHT = np.array([0.99, 0.87, 0.76])
_SKIN_DARK = np.array([0.42, 0.28, 0.18])
_BG_COLOR = np.array([0.93, 0.93, 0.95])
_HAIR_PALETTE = np.array([
    [0.13, 0.09, 0.06],
    [0.38, 0.22, 0.08],
    [0.82, 0.72, 0.34],
    [0.45, 0.12, 0.10],
])


@dataclass(frozen=True)
class GarmentAttrs:
    """Ground-truth attributes of one garment; used verbatim by the renderer."""

    sleeve_or_leg_length: float  # 0 = sleeveless/shorts, 1 = full length
    width: float                 # 0 = slim, 1 = wide
    base_color: tuple[float, float, float]
    pattern: str = "solid"

    def __post_init__(self):
        for name in ("sleeve_or_leg_length", "width"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if len(self.base_color) != 3 or not all(0.0 <= c <= 1.0 for c in self.base_color):
            raise ValidationError(f"base_color must be an RGB triple in [0,1]^3, got {self.base_color}")
        if self.pattern not in PATTERNS:
            raise ValidationError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")

    def to_json(self) -> dict:
        return {
            "sleeve_or_leg_length": self.sleeve_or_leg_length,
            "width": self.width,
            "base_color": list(self.base_color),
            "pattern": self.pattern,
        }

    @classmethod
    def from_json(cls, d: dict) -> "GarmentAttrs":
        try:
            return cls(
                sleeve_or_leg_length=float(d["sleeve_or_leg_length"]),
                width=float(d["width"]),
                base_color=tuple(float(c) for c in d["base_color"]),
                pattern=str(d["pattern"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed garment attributes: {exc!r}") from exc


@dataclass(frozen=True)
class PaperDollSpec:
    """Full recipe for one doll. Rendering is a pure function of this value."""

    seed: int
    # torso tilt, r/l shoulder, r/l elbow, r/l hip, r/l knee, head offset
    pose_params: tuple[float, ...]
    body_tone: float
    hair_style: str
    top: GarmentAttrs
    bottom: GarmentAttrs

    def __post_init__(self):
        if len(self.pose_params) != 10:
            raise ValidationError(f"pose_params must have 10 entries, got {len(self.pose_params)}")
        for i, p in enumerate(self.pose_params):
            if not (-1.0 <= p <= 1.0):
                raise ValidationError(f"pose_params[{i}] = {p} outside [-1, 1]")
        if not (0.0 <= self.body_tone <= 1.0):
            raise ValidationError(f"body_tone must be in [0, 1], got {self.body_tone}")
        if self.hair_style not in HAIR_STYLES:
            raise ValidationError(f"hair_style must be one of {HAIR_STYLES}, got {self.hair_style!r}")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "pose_params": list(self.pose_params),
            "body_tone": self.body_tone,
            "hair_style": self.hair_style,
            "top": self.top.to_json(),
            "bottom": self.bottom.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PaperDollSpec":
        try:
            return cls(
                seed=int(d["seed"]),
                pose_params=tuple(float(p) for p in d["pose_params"]),
                body_tone=float(d["body_tone"]),
                hair_style=str(d["hair_style"]),
                top=GarmentAttrs.from_json(d["top"]),
                bottom=GarmentAttrs.from_json(d["bottom"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed doll spec: {exc!r}") from exc


@dataclass
class Sample:
    """One rendered doll: image, keypoints, labels and the generating spec."""

    image: np.ndarray      # (3, 64, 64) float32 in [0, 1]
    keypoints: np.ndarray  # (18, 3) float32, (x, y, visible) in pixel coords
    seg: np.ndarray        # (64, 64) uint8 labels in {0..4}
    spec: PaperDollSpec


def skeleton_joints(pose_params) -> dict[str, np.ndarray]:
    """Analytic joint positions (x, y) in pixel coordinates."""
    p = np.asarray(pose_params, dtype=np.float64)
    tilt = 0.22 * p[0]
    up = np.array([np.sin(tilt), -np.cos(tilt)])
    right = np.array([np.cos(tilt), np.sin(tilt)])
    down = -up

    pelvis = np.array([32.0, 39.0])
    neck = pelvis + 13.0 * up
    head = neck + 5.6 * up + np.array([2.5 * p[9], 0.0])
    nose = head + 1.0 * down

    joints = {
        "pelvis": pelvis,
        "neck": neck,
        "head": head,
        "nose": nose,
        "r_eye": head + np.array([-1.5, -0.8]),
        "l_eye": head + np.array([1.5, -0.8]),
        "r_ear": head + np.array([-3.2, 0.0]),
        "l_ear": head + np.array([3.2, 0.0]),
    }

    shoulder = {"r": neck - 6.2 * right + 1.5 * down, "l": neck + 6.2 * right + 1.5 * down}
    sides = {"r": (-1.0, p[1], p[3], p[5], p[7]), "l": (1.0, p[2], p[4], p[6], p[8])}
    for side, (s, p_sh, p_el, p_hip, p_knee) in sides.items():
        sho = shoulder[side]
        phi_u = 0.81 + 0.49 * p_sh
        elbow = sho + 7.2 * np.array([s * np.sin(phi_u), np.cos(phi_u)])
        phi_f = np.clip(phi_u + 0.8 * p_el, -0.3, 1.6)
        wrist = elbow + 6.8 * np.array([s * np.sin(phi_f), np.cos(phi_f)])

        hip = pelvis + np.array([s * 3.6, 0.5])
        phi_h = 0.10 + 0.15 * (p_hip + 1.0)
        knee = hip + 8.5 * np.array([s * np.sin(phi_h), np.cos(phi_h)])
        phi_s = np.clip(phi_h + 0.35 * p_knee, -0.05, 0.9)
        ankle = knee + 8.0 * np.array([s * np.sin(phi_s), np.cos(phi_s)])

        joints[f"{side}_shoulder"] = sho
        joints[f"{side}_elbow"] = elbow
        joints[f"{side}_wrist"] = wrist
        joints[f"{side}_hip"] = hip
        joints[f"{side}_knee"] = knee
        joints[f"{side}_ankle"] = ankle
    return joints


def doll_keypoints(spec: PaperDollSpec) -> np.ndarray:
    """18 x (x, y, visible); eyes and ears are present but invisible."""
    j = skeleton_joints(spec.pose_params)
    kps = np.zeros((N_KEYPOINTS, 3), dtype=np.float32)
    for i, name in enumerate(KEYPOINT_NAMES):
        pos = j["nose"] if name == "nose" else j.get(name, j["neck"])
        kps[i, :2] = pos
        kps[i, 2] = 0.0 if name.endswith(("eye", "ear")) else 1.0
    return kps


def _grid():
    ys, xs = np.mgrid[0:CANVAS, 0:CANVAS]
    return xs.astype(np.float64), ys.astype(np.float64)


def part_geometry(spec: PaperDollSpec) -> dict[str, np.ndarray]:
    """Boolean coverage mask per body/garment part, before painter ordering."""
    j = skeleton_joints(spec.pose_params)
    px, py = _grid()
    tilt = 0.22 * spec.pose_params[0]
    right = np.array([np.cos(tilt), np.sin(tilt)])
    down = np.array([-np.sin(tilt), np.cos(tilt)])

    skin = geom.disk_mask(px, py, j["head"], 4.2)
    skin |= geom.capsule_mask(px, py, j["neck"], j["neck"] + 3.0 * down, 1.8)
    torso = geom.convex_quad_mask(px, py, [
        j["r_shoulder"] - 1.2 * right,
        j["l_shoulder"] + 1.2 * right,
        j["l_hip"] + np.array([2.2, 1.5]),
        j["r_hip"] + np.array([-2.2, 1.5]),
    ])
    skin |= torso
    for side in ("r", "l"):
        skin |= geom.capsule_mask(px, py, j[f"{side}_shoulder"], j[f"{side}_elbow"], 1.7)
        skin |= geom.capsule_mask(px, py, j[f"{side}_elbow"], j[f"{side}_wrist"], 1.7)
        skin |= geom.capsule_mask(px, py, j[f"{side}_hip"], j[f"{side}_knee"], 2.0)
        skin |= geom.capsule_mask(px, py, j[f"{side}_knee"], j[f"{side}_ankle"], 2.0)

    # Bottom garment: hip box plus partial leg sleeves.
    wb = 4.8 + 2.2 * spec.bottom.width
    cx, cy = j["pelvis"]
    bottom = (np.abs(px - cx) <= wb) & (py >= cy - 2.5) & (py <= cy + 2.5)
    leg_r = 2.6 + 1.2 * spec.bottom.width
    if spec.bottom.sleeve_or_leg_length > 0.0:
        for side in ("r", "l"):
            line = [j[f"{side}_hip"], j[f"{side}_knee"], j[f"{side}_ankle"]]
            dist, t = geom.polyline_distance_and_param(px, py, line)
            bottom |= (dist <= leg_r) & (t <= spec.bottom.sleeve_or_leg_length)

    # Top garment: widened torso quad plus partial arm sleeves.
    we = 2.5 * spec.top.width
    top = geom.convex_quad_mask(px, py, [
        j["r_shoulder"] - (1.2 + we) * right - 1.0 * down,
        j["l_shoulder"] + (1.2 + we) * right - 1.0 * down,
        j["l_hip"] + np.array([2.2 + we, 2.8]),
        j["r_hip"] + np.array([-2.2 - we, 2.8]),
    ])
    sleeve_r = 2.4 + 1.1 * spec.top.width
    if spec.top.sleeve_or_leg_length > 0.0:
        for side in ("r", "l"):
            line = [j[f"{side}_shoulder"], j[f"{side}_elbow"], j[f"{side}_wrist"]]
            dist, t = geom.polyline_distance_and_param(px, py, line)
            top |= (dist <= sleeve_r) & (t <= spec.top.sleeve_or_leg_length)

    hair = np.zeros_like(skin)
    if spec.hair_style != "none":
        head = j["head"]
        hair = geom.disk_mask(px, py, head, 5.3) & (py <= head[1] + 0.3)
        if spec.hair_style == "long":
            for sx in (-1.0, 1.0):
                start = head + np.array([sx * 4.0, 0.5])
                end = j["neck"] + np.array([sx * 5.0, 9.0])
                hair |= geom.capsule_mask(px, py, start, end, 1.9)

    return {"skin": skin, "bottom": bottom, "top": top, "hair": hair}


def compose_labels(parts: dict[str, np.ndarray]) -> np.ndarray:
    """Painter-order label map: skin, then bottom, top, hair on top."""
    seg = np.zeros((CANVAS, CANVAS), dtype=np.uint8)
    seg[parts["skin"]] = LABEL_SKIN
    seg[parts["bottom"]] = LABEL_BOTTOM
    seg[parts["top"]] = LABEL_TOP
    seg[parts["hair"]] = LABEL_HAIR
    return seg


def _pattern_shade(attrs: GarmentAttrs) -> np.ndarray:
    """Multiplicative shading map in [0,1] for a garment's pattern."""
    px, py = _grid()
    shade = np.ones((CANVAS, CANVAS), dtype=np.float64)
    if attrs.pattern == "stripes":
        shade[((py.astype(int) // 3) % 2) == 1] = 0.55
    elif attrs.pattern == "dots":
        dots = ((px % 5) - 2.0) ** 2 + ((py % 5) - 2.0) ** 2 <= 2.1
        shade[dots] = 0.45
    return shade


def paint_image(seg: np.ndarray, spec: PaperDollSpec) -> np.ndarray:
    """Colorize a label map according to the spec's attributes."""
    img = np.empty((CANVAS, CANVAS, 3), dtype=np.float64)
    img[:] = _BG_COLOR
    skin_color = _SKIN_LIGHT + spec.body_tone * (_SKIN_DARK - _SKIN_LIGHT)
    img[seg == LABEL_SKIN] = skin_color

    hair_rng = np.random.default_rng([spec.seed & 0x7FFFFFFF, 77])
    img[seg == LABEL_HAIR] = _HAIR_PALETTE[hair_rng.integers(0, len(_HAIR_PALETTE))]

    for label, attrs in ((LABEL_TOP, spec.top), (LABEL_BOTTOM, spec.bottom)):
        shade = _pattern_shade(attrs)
        region = seg == label
        img[region] = np.asarray(attrs.base_color) * shade[region, None]
    return np.clip(img.transpose(2, 0, 1), 0.0, 1.0).astype(np.float32)


def render_person(spec: PaperDollSpec) -> Sample:
    """Rasterize a doll. Deterministic: same spec, same bytes."""
    parts = part_geometry(spec)
    seg = compose_labels(parts)
    image = paint_image(seg, spec)
    keypoints = doll_keypoints(spec)
    return Sample(image=image, keypoints=keypoints, seg=seg, spec=spec)


def random_spec(rng: np.random.Generator, hair_style: str | None = None) -> PaperDollSpec:
    def garment() -> GarmentAttrs:
        return GarmentAttrs(
            sleeve_or_leg_length=float(rng.uniform(0.0, 1.0)),
            width=float(rng.uniform(0.0, 1.0)),
            base_color=tuple(float(c) for c in rng.uniform(0.10, 0.90, size=3)),
            pattern=str(rng.choice(PATTERNS)),
        )

    return PaperDollSpec(
        seed=int(rng.integers(0, 2**31 - 1)),
        pose_params=tuple(float(p) for p in rng.uniform(-1.0, 1.0, size=10)),
        body_tone=float(rng.uniform(0.0, 1.0)),
        hair_style=str(rng.choice(HAIR_STYLES)) if hair_style is None else hair_style,
        top=garment(),
        bottom=garment(),
    )


def pose_pair_from_spec(spec: PaperDollSpec, pair_seed: int) -> tuple[Sample, Sample]:
    """Render the spec plus a same-identity partner in a clearly different pose.

    Redraws the partner pose until at least 4 joints move by more than 2 px.
    """
    first = render_person(spec)
    rng = np.random.default_rng([int(pair_seed) & 0x7FFFFFFF, 13])
    for _ in range(64):
        pose2 = tuple(float(p) for p in rng.uniform(-1.0, 1.0, size=10))
        partner_spec = replace(spec, pose_params=pose2)
        partner = render_person(partner_spec)
        moved = np.hypot(*(partner.keypoints[:, :2] - first.keypoints[:, :2]).T)
        if int((moved > 2.0).sum()) >= 4:
            return first, partner
    raise RuntimeError("could not draw a sufficiently different pose")  # pragma: no cover


def sample_pose_pair(seed: int) -> tuple[Sample, Sample]:
    """Same identity and garments, different pose; deterministic per seed."""
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFF)
    spec = random_spec(rng)
    return pose_pair_from_spec(spec, pair_seed=spec.seed ^ (int(seed) & 0x7FFFFFFF))
