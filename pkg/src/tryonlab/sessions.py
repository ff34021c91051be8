"""Stateful try-on sessions: ordered garment stack, revisable tweak list,
render cache, and lossless persistence.

Mutations are atomic: they build the new state first and commit under the
session lock only on success, so a failing request leaves the session
untouched. Renders are a pure function of (model checkpoint, session state).
"""
from __future__ import annotations

import datetime as _dt
import io
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from tryonlab import dolls
from tryonlab.encoders import GarmentFeature
from tryonlab.errors import ValidationError
from tryonlab.generator import BodyTextureMap, PersonRepresentation
from tryonlab.model import ModelBundle
from tryonlab.pipeline import encode_garment, encode_person, reorder_garments
from tryonlab.preprocess import make_heatmaps
from tryonlab.tweaks import AttributeDirection, Tweak, apply_tweaks

BLOB_SCHEMA_VERSION = 1


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def image_to_png_bytes(image) -> bytes:
    arr = np.asarray(image)
    if isinstance(image, torch.Tensor):
        arr = image.detach().cpu().numpy()
    arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


@dataclass
class GarmentSource:
    """Raw inputs a garment was encoded from; kept for re-encoding fallbacks."""

    image: np.ndarray
    seg: np.ndarray
    keypoints: np.ndarray
    label: int


@dataclass
class SessionRecord:
    session_id: str
    person: PersonRepresentation
    person_source: GarmentSource          # the source person's raw arrays
    garment_sources: list[GarmentSource] = field(default_factory=list)
    tweaks: list[Tweak] = field(default_factory=list)
    created: str = field(default_factory=_now)
    updated: str = field(default_factory=_now)
    spec_json: dict | None = None          # set when created from a doll spec
    render_cache: bytes | None = None
    dirty: bool = True

    def summary(self, checkpoint_id: str) -> dict:
        return {
            "id": self.session_id,
            "created": self.created,
            "updated": self.updated,
            "garments": [{"index": i, "label": s.label}
                         for i, s in enumerate(self.garment_sources)],
            "tweaks": [t.to_json() for t in self.tweaks],
            "dirty": self.dirty,
            "checkpoint": checkpoint_id,
        }


class SessionStore:
    """All live sessions plus their persistence directory."""

    def __init__(self, model: ModelBundle, directory: str | Path,
                 directions: dict[str, AttributeDirection] | None = None):
        self.model = model.eval()
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.directions = directions or {}
        self._sessions: dict[str, SessionRecord] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._store_lock = threading.RLock()
        self._load_existing()

    # -- lookup ------------------------------------------------------------

    def ids(self) -> list[str]:
        with self._store_lock:
            return sorted(self._sessions)

    def get(self, session_id: str) -> SessionRecord:
        with self._store_lock:
            record = self._sessions.get(session_id)
        if record is None:
            raise KeyError(session_id)
        return record

    def _lock_for(self, session_id: str) -> threading.RLock:
        with self._store_lock:
            return self._locks.setdefault(session_id, threading.RLock())

    # -- creation ----------------------------------------------------------

    def create_from_spec(self, spec: dolls.PaperDollSpec) -> SessionRecord:
        sample = dolls.render_person(spec)
        record = self._create(sample.image, sample.seg, sample.keypoints,
                              spec_json=spec.to_json())
        return record

    def create_from_arrays(self, image, seg, keypoints) -> SessionRecord:
        return self._create(image, seg, keypoints, spec_json=None)

    def _create(self, image, seg, keypoints, spec_json) -> SessionRecord:
        with torch.no_grad():
            person = encode_person(self.model, image, seg, keypoints,
                                   garment_labels=())
        record = SessionRecord(
            session_id=uuid.uuid4().hex[:12],
            person=person,
            person_source=GarmentSource(
                image=np.asarray(image, dtype=np.float32),
                seg=np.asarray(seg, dtype=np.uint8),
                keypoints=np.asarray(keypoints, dtype=np.float32),
                label=-1,
            ),
            spec_json=spec_json,
        )
        with self._store_lock:
            self._sessions[record.session_id] = record
            self._locks[record.session_id] = threading.RLock()
        self.save(record)
        return record

    # -- mutations (atomic) --------------------------------------------------

    def add_garment(self, session_id: str, source: GarmentSource, position: int) -> SessionRecord:
        record = self.get(session_id)
        with self._lock_for(session_id):
            if not (0 <= position <= len(record.person.garments)):
                raise ValidationError(
                    f"position {position} out of range [0, {len(record.person.garments)}]")
            with torch.no_grad():
                target_heat = make_heatmaps(record.person.keypoints)
                feature = encode_garment(self.model, source.image, source.seg,
                                         source.label, source.keypoints, target_heat)
            garments = list(record.person.garments)
            garments.insert(position, feature)
            sources = list(record.garment_sources)
            sources.insert(position, source)
            record.person = record.person.with_garments(garments)
            record.garment_sources = sources
            self._touch(record)
        return record

    def reorder(self, session_id: str, permutation) -> SessionRecord:
        record = self.get(session_id)
        with self._lock_for(session_id):
            person = reorder_garments(record.person, permutation)  # validates
            record.person = person
            record.garment_sources = [record.garment_sources[i] for i in permutation]
            self._touch(record)
        return record

    def add_tweak(self, session_id: str, tweak: Tweak) -> SessionRecord:
        record = self.get(session_id)
        with self._lock_for(session_id):
            if not (0 <= tweak.target_garment < len(record.person.garments)):
                raise ValidationError(
                    f"garment index {tweak.target_garment} out of range "
                    f"(stack has {len(record.person.garments)})")
            if tweak.kind == "latent":
                name = tweak.payload.get("direction")
                if name not in self.directions:
                    raise ValidationError(f"unknown attribute direction {name!r}")
            record.tweaks = list(record.tweaks) + [tweak]
            self._touch(record)
        return record

    def pop_tweak(self, session_id: str) -> SessionRecord:
        record = self.get(session_id)
        with self._lock_for(session_id):
            if not record.tweaks:
                raise ValidationError("no tweaks to remove")
            record.tweaks = list(record.tweaks)[:-1]
            self._touch(record)
        return record

    def _touch(self, record: SessionRecord) -> None:
        record.dirty = True
        record.render_cache = None
        record.updated = _now()
        self.save(record)

    # -- rendering -----------------------------------------------------------

    def render(self, session_id: str) -> bytes:
        record = self.get(session_id)
        with self._lock_for(session_id):
            if record.render_cache is not None and not record.dirty:
                return record.render_cache
            image = apply_tweaks(record.person, record.tweaks, self.model,
                                 self.directions)
            record.render_cache = image_to_png_bytes(image)
            record.dirty = False
            self.save(record)
            return record.render_cache

    # -- persistence -----------------------------------------------------------

    def save(self, record: SessionRecord) -> None:
        import json

        blob = {
            "schema_version": BLOB_SCHEMA_VERSION,
            "person": {
                "pose": record.person.pose,
                "body_texture": record.person.body.texture,
                "body_fg": record.person.body.foreground_mask,
                "body_fallback": record.person.body.used_mean_fallback,
                "keypoints": record.person.keypoints,
            },
            "person_source": _source_blob(record.person_source),
            "garments": [
                {
                    "texture": g.texture, "shape_mask": g.shape_mask,
                    "shape_logits": g.shape_logits, "flow": g.flow,
                    "source_label": g.source_label,
                    "source": _source_blob(src),
                }
                for g, src in zip(record.person.garments, record.garment_sources)
            ],
        }
        torch.save(blob, self.directory / f"{record.session_id}.pt")
        meta = {
            "id": record.session_id,
            "created": record.created,
            "updated": record.updated,
            "spec": record.spec_json,
            "tweaks": [t.to_json() for t in record.tweaks],
            "checkpoint": self.model.checkpoint_id,
        }
        (self.directory / f"{record.session_id}.json").write_text(json.dumps(meta, indent=1))

    def _load_existing(self) -> None:
        for meta_path in sorted(self.directory.glob("*.json")):
            try:
                record = self._load_one(meta_path)
            except Exception:
                continue  # unreadable session files are skipped, not fatal
            self._sessions[record.session_id] = record
            self._locks[record.session_id] = threading.RLock()

    def _load_one(self, meta_path: Path) -> SessionRecord:
        import json

        meta = json.loads(meta_path.read_text())
        blob = torch.load(meta_path.with_suffix(".pt"), map_location="cpu",
                          weights_only=False)
        person_source = _source_from_blob(blob["person_source"])
        garment_sources = [_source_from_blob(g["source"]) for g in blob["garments"]]

        if blob.get("schema_version") == BLOB_SCHEMA_VERSION:
            p = blob["person"]
            person = PersonRepresentation(
                pose=p["pose"],
                body=BodyTextureMap(texture=p["body_texture"], foreground_mask=p["body_fg"],
                                    used_mean_fallback=p["body_fallback"]),
                garments=[GarmentFeature(texture=g["texture"], shape_mask=g["shape_mask"],
                                         shape_logits=g["shape_logits"], flow=g["flow"],
                                         source_label=g["source_label"])
                          for g in blob["garments"]],
                keypoints=p["keypoints"],
            )
        else:  # blob schema drifted: re-encode everything from stored sources
            with torch.no_grad():
                person = encode_person(self.model, person_source.image, person_source.seg,
                                       person_source.keypoints, garment_labels=())
                target_heat = make_heatmaps(person.keypoints)
                garments = [
                    encode_garment(self.model, s.image, s.seg, s.label, s.keypoints,
                                   target_heat)
                    for s in garment_sources
                ]
            person = person.with_garments(garments)

        return SessionRecord(
            session_id=meta["id"],
            person=person,
            person_source=person_source,
            garment_sources=garment_sources,
            tweaks=[Tweak.from_json(t) for t in meta.get("tweaks", [])],
            created=meta["created"],
            updated=meta["updated"],
            spec_json=meta.get("spec"),
        )


def _source_blob(source: GarmentSource) -> dict:
    return {"image": source.image, "seg": source.seg,
            "keypoints": source.keypoints, "label": source.label}


def _source_from_blob(d: dict) -> GarmentSource:
    return GarmentSource(image=d["image"], seg=d["seg"],
                         keypoints=d["keypoints"], label=d["label"])
