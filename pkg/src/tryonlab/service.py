"""JSON-over-HTTP session service: the backend the studio UI drives.

Endpoints:
    POST   /sessions                      create from a doll spec or raw arrays
    GET    /sessions/{id}                 session state
    POST   /sessions/{id}/garments        encode + insert a garment
    POST   /sessions/{id}/reorder         permute the garment stack
    POST   /sessions/{id}/tweaks          append a tweak
    DELETE /sessions/{id}/tweaks/last     undo the last tweak
    GET    /sessions/{id}/render          PNG render (X-Model-Checkpoint header)
    GET    /directions                    available latent attribute directions
    GET    /healthz

Errors use {"code", "message", "field"?}. Env: MODEL_PATH, SESSION_DIR, PORT.
"""
from __future__ import annotations

import base64
import io
import os
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from tryonlab import dolls
from tryonlab.errors import ValidationError
from tryonlab.model import ModelBundle
from tryonlab.sessions import GarmentSource, SessionStore
from tryonlab.tweaks import AttributeDirection, Tweak


class RawSourceBody(BaseModel):
    image_b64: str
    seg_b64: str
    keypoints: list[list[float]]


class CreateSessionBody(BaseModel):
    spec: dict | None = None
    source: RawSourceBody | None = None


class GarmentBody(BaseModel):
    position: int
    label: int
    spec: dict | None = None              # pull the garment from a rendered doll
    image_b64: str | None = None          # or provide raw arrays
    seg_b64: str | None = None
    keypoints: list[list[float]] | None = None


class ReorderBody(BaseModel):
    permutation: list[int]


class TweakBody(BaseModel):
    kind: str
    magnitude: float
    target_garment: int
    payload: dict | None = None


def _decode_image_b64(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    return (np.asarray(img, dtype=np.float32) / 255.0).transpose(2, 0, 1)


def _decode_seg_b64(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    return np.asarray(Image.open(io.BytesIO(raw)).convert("L"), dtype=np.uint8)


def _garment_source(body: GarmentBody) -> GarmentSource:
    if body.spec is not None:
        spec = dolls.PaperDollSpec.from_json(body.spec)
        sample = dolls.render_person(spec)
        return GarmentSource(image=sample.image, seg=sample.seg,
                            keypoints=sample.keypoints, label=body.label)
    if body.image_b64 is None or body.seg_b64 is None or body.keypoints is None:
        raise ValidationError("garment needs either a spec or image+seg+keypoints")
    return GarmentSource(
        image=_decode_image_b64(body.image_b64),
        seg=_decode_seg_b64(body.seg_b64),
        keypoints=np.asarray(body.keypoints, dtype=np.float32),
        label=body.label,
    )


def load_directions(directions_dir: str | Path | None) -> dict[str, AttributeDirection]:
    out: dict[str, AttributeDirection] = {}
    if directions_dir and Path(directions_dir).is_dir():
        for path in sorted(Path(directions_dir).glob("*.json")):
            try:
                out[path.stem] = AttributeDirection.load(path)
            except Exception:
                continue
    return out


def create_app(model_path: str | Path | None = None,
               session_dir: str | Path | None = None,
               directions_dir: str | Path | None = None) -> FastAPI:
    model_path = model_path or os.environ.get("MODEL_PATH")
    session_dir = session_dir or os.environ.get("SESSION_DIR", "sessions")
    directions_dir = directions_dir or os.environ.get("DIRECTIONS_DIR")

    app = FastAPI(title="tryonlab session service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    store: SessionStore | None = None
    if model_path and Path(model_path).exists():
        model = ModelBundle.load(model_path)
        store = SessionStore(model, session_dir, load_directions(directions_dir))
    app.state.store = store

    class ModelUnavailable(Exception):
        pass

    def need_store() -> SessionStore:
        if app.state.store is None:
            raise ModelUnavailable()
        return app.state.store

    @app.exception_handler(ModelUnavailable)
    async def _unavailable(request: Request, exc: ModelUnavailable):
        return JSONResponse(status_code=503, content={
            "code": "model_unavailable",
            "message": "no model checkpoint loaded (set MODEL_PATH)",
        })

    @app.exception_handler(ValidationError)
    async def _invalid(request: Request, exc: ValidationError):
        return JSONResponse(status_code=422, content={
            "code": "validation_error", "message": str(exc),
        })

    @app.exception_handler(KeyError)
    async def _missing(request: Request, exc: KeyError):
        return JSONResponse(status_code=404, content={
            "code": "not_found", "message": f"unknown session {exc.args[0]!r}",
        })

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        loc = [str(p) for p in first.get("loc", []) if p != "body"]
        return JSONResponse(status_code=422, content={
            "code": "validation_error",
            "message": first.get("msg", "invalid request"),
            "field": ".".join(loc) or None,
        })

    @app.exception_handler(Exception)
    async def _internal(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={
            "code": "internal_error", "message": str(exc),
        })

    @app.get("/healthz")
    def healthz():
        s = app.state.store
        return {"status": "ok" if s is not None else "no-model",
                "checkpoint": s.model.checkpoint_id if s is not None else None}

    @app.get("/directions")
    def directions():
        s = need_store()
        return {"directions": [
            {"id": name, "attribute": d.attribute, "fit_accuracy": d.fit_accuracy}
            for name, d in sorted(s.directions.items())
        ]}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        s = need_store()
        if body.spec is not None:
            record = s.create_from_spec(dolls.PaperDollSpec.from_json(body.spec))
        elif body.source is not None:
            record = s.create_from_arrays(
                _decode_image_b64(body.source.image_b64),
                _decode_seg_b64(body.source.seg_b64),
                np.asarray(body.source.keypoints, dtype=np.float32),
            )
        else:
            raise ValidationError("provide either 'spec' or 'source'")
        return record.summary(s.model.checkpoint_id)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        s = need_store()
        return s.get(session_id).summary(s.model.checkpoint_id)

    @app.post("/sessions/{session_id}/garments")
    def add_garment(session_id: str, body: GarmentBody):
        s = need_store()
        record = s.add_garment(session_id, _garment_source(body), body.position)
        return record.summary(s.model.checkpoint_id)

    @app.post("/sessions/{session_id}/reorder")
    def reorder(session_id: str, body: ReorderBody):
        s = need_store()
        record = s.reorder(session_id, body.permutation)
        return record.summary(s.model.checkpoint_id)

    @app.post("/sessions/{session_id}/tweaks")
    def add_tweak(session_id: str, body: TweakBody):
        s = need_store()
        tweak = Tweak(kind=body.kind, magnitude=body.magnitude,
                      target_garment=body.target_garment,
                      payload=dict(body.payload or {}))
        record = s.add_tweak(session_id, tweak)
        return record.summary(s.model.checkpoint_id)

    @app.delete("/sessions/{session_id}/tweaks/last")
    def pop_tweak(session_id: str):
        s = need_store()
        record = s.pop_tweak(session_id)
        return record.summary(s.model.checkpoint_id)

    @app.get("/sessions/{session_id}/render")
    def render(session_id: str):
        s = need_store()
        png = s.render(session_id)
        return Response(content=png, media_type="image/png",
                        headers={"X-Model-Checkpoint": s.model.checkpoint_id})

    return app


def run(model_path: str | Path | None = None, session_dir: str | Path | None = None,
        port: int | None = None, host: str = "127.0.0.1") -> None:
    import uvicorn

    port = port if port is not None else int(os.environ.get("PORT", "8321"))
    uvicorn.run(create_app(model_path, session_dir), host=host, port=port)
