"""End-to-end glue: encode people and garments, run pose transfer.

The default dressing order for training and plain rendering is bottom, top,
hair; callers reorder freely, which is the whole point of the stack.
"""
from __future__ import annotations

import numpy as np
import torch

from tryonlab import dolls
from tryonlab.encoders import GarmentFeature, encode_segment
from tryonlab.errors import ValidationError
from tryonlab.generator import PersonRepresentation, compose_body_texture, try_on
from tryonlab.model import ModelBundle
from tryonlab.preprocess import extract_segment, make_heatmaps

TRAIN_GARMENT_ORDER = (dolls.LABEL_BOTTOM, dolls.LABEL_TOP, dolls.LABEL_HAIR)


def _as_image_tensor(image) -> torch.Tensor:
    return torch.as_tensor(np.asarray(image), dtype=torch.float32)


def encode_garment(
    model: ModelBundle,
    image,
    seg,
    label: int,
    keypoints,
    target_heatmaps: torch.Tensor,
) -> GarmentFeature:
    """Encode one garment segment, warped from its wearer's pose to the target."""
    segment = extract_segment(_as_image_tensor(image), seg, label)
    source_heat = make_heatmaps(np.asarray(keypoints))
    flow = model.flow_net(segment.masked_image, source_heat, target_heatmaps)
    return encode_segment(model.e_tex, model.shape_head, segment, flow)


def encode_person(
    model: ModelBundle,
    image,
    seg,
    keypoints,
    target_keypoints=None,
    garment_labels=TRAIN_GARMENT_ORDER,
) -> PersonRepresentation:
    """Build the (pose, body, garments) representation for a target pose.

    With no target keypoints the person keeps its own pose. The body texture
    is composed once from the skin/background segments and the union of all
    foreground masks present at encode time.
    """
    image_t = _as_image_tensor(image)
    keypoints = np.asarray(keypoints)
    tgt_kps = keypoints if target_keypoints is None else np.asarray(target_keypoints)
    src_heat = make_heatmaps(keypoints)
    tgt_heat = make_heatmaps(tgt_kps)

    def enc(label: int) -> GarmentFeature:
        segment = extract_segment(image_t, seg, label)
        flow = model.flow_net(segment.masked_image, src_heat, tgt_heat)
        return encode_segment(model.e_tex, model.shape_head, segment, flow)

    background = enc(dolls.LABEL_BACKGROUND)
    skin = enc(dolls.LABEL_SKIN)
    garments = [enc(label) for label in garment_labels]

    fg_masks = [skin.shape_mask] + [g.shape_mask for g in garments]
    body = compose_body_texture(skin, background, fg_masks, model.e_map)
    pose_map = model.e_pose(tgt_heat)
    return PersonRepresentation(pose=pose_map, body=body, garments=garments,
                                keypoints=tgt_kps)


def person_from_sample(
    model: ModelBundle,
    sample: dolls.Sample,
    target_keypoints=None,
    garment_labels=TRAIN_GARMENT_ORDER,
) -> PersonRepresentation:
    return encode_person(model, sample.image, sample.seg, sample.keypoints,
                         target_keypoints=target_keypoints, garment_labels=garment_labels)


def render_tryon(model: ModelBundle, person: PersonRepresentation) -> np.ndarray:
    """Deterministic eval-mode render to a (3, 64, 64) float32 array."""
    model.eval()
    with torch.no_grad():
        image = try_on(model, person)
    return image.detach().cpu().numpy().astype(np.float32)


def reorder_garments(person: PersonRepresentation, permutation) -> PersonRepresentation:
    permutation = list(permutation)
    if sorted(permutation) != list(range(len(person.garments))):
        raise ValidationError(
            f"permutation {permutation} is not a bijection on {len(person.garments)} garments")
    return person.with_garments([person.garments[i] for i in permutation])
