"""JSON-over-HTTP inference and editing service over a frozen checkpoint.

The loaded model is immutable; all endpoints are idempotent and every
response carries the checkpoint hash. Images travel as base64 PNG, feature
vectors as JSON number arrays.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
import uuid
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import HTMLResponse, JSONResponse
from PIL import Image
from pydantic import BaseModel

from .editing import EditRequest, alpha_max, render_edit
from .model import FeaturePair
from . import persistence

logger = logging.getLogger(__name__)


class ApiError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail


def image_to_b64(img: np.ndarray) -> str:
    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr.transpose(1, 2, 0)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_image(b64: str, size: int) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception:
        raise ApiError(400, "payload is not a valid base64 PNG")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


class EncodeBody(BaseModel):
    image: str


class DecodeBody(BaseModel):
    f_t: list[float]
    f_p: list[float]


class EditSpec(BaseModel):
    attr: str
    alpha: float


class IdentitySpec(BaseModel):
    image_b: str
    beta: float


class EditBody(BaseModel):
    image: str
    edits: list[EditSpec] = []
    identity: Optional[IdentitySpec] = None


class InterpolateBody(BaseModel):
    image_a: str
    image_b: str
    beta: float


def build_app(ckpt_path, dataset=None) -> FastAPI:
    model, probes, meta = persistence.load(ckpt_path)
    ckpt_hash = hashlib.sha256(open(ckpt_path, "rb").read()).hexdigest()
    size = model.config.input_size
    gallery = []
    if dataset is not None:
        idx = dataset.split_indices("test")[:16]
        gallery = [image_to_b64(dataset.images[i]) for i in idx]

    app = FastAPI(title="d2ae")

    def ok(payload: dict) -> JSONResponse:
        payload["checkpoint"] = ckpt_hash
        return JSONResponse(payload)

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse({"detail": "malformed payload"}, status_code=400)

    @app.exception_handler(ApiError)
    async def api_error(request: Request, exc: ApiError):
        return JSONResponse({"detail": exc.detail}, status_code=exc.status)

    @app.exception_handler(Exception)
    async def internal(request: Request, exc: Exception):
        err_id = uuid.uuid4().hex[:12]
        logger.exception("internal error %s", err_id)
        return JSONResponse({"detail": f"internal error {err_id}"}, status_code=500)

    @app.get("/model/info")
    async def info():
        return ok({
            "dims": {"f_t": model.config.feat_dim_t, "f_p": model.config.feat_dim_p},
            "n_id": model.config.n_id,
            "input_size": size,
            "attributes": [
                {"name": p.attribute, "source": p.source,
                 "alpha_max": alpha_max(model, p), "probe_accuracy": p.accuracy}
                for p in probes.values()
            ],
        })

    @app.get("/gallery")
    async def get_gallery():
        return ok({"images": gallery})

    @app.post("/encode")
    async def encode(body: EncodeBody):
        fp = model.encode(b64_to_image(body.image, size))
        return ok({"f_t": fp.f_t.tolist(), "f_p": fp.f_p.tolist()})

    @app.post("/decode")
    async def decode(body: DecodeBody):
        if len(body.f_t) != model.config.feat_dim_t or \
                len(body.f_p) != model.config.feat_dim_p:
            raise ApiError(422, "feature vector length mismatch")
        img = model.decode(FeaturePair(np.asarray(body.f_t), np.asarray(body.f_p)))
        return ok({"image": image_to_b64(img)})

    @app.post("/edit")
    async def edit(body: EditBody):
        for e in body.edits:
            if e.attr not in probes:
                raise ApiError(422, f"unknown attribute {e.attr!r}")
        identity = None
        if body.identity is not None:
            if not 0.0 <= body.identity.beta <= 1.0:
                raise ApiError(422, "beta must be in [0, 1]")
            fp_b = model.encode(b64_to_image(body.identity.image_b, size))
            identity = (fp_b.f_t, body.identity.beta)
        req = EditRequest(
            attribute_edits=[(e.attr, e.alpha) for e in body.edits],
            identity_target=identity,
            source_image=b64_to_image(body.image, size),
        )
        img, provenance = render_edit(model, probes, req)
        return ok({"image": image_to_b64(img), "provenance": provenance})

    @app.post("/interpolate")
    async def interpolate(body: InterpolateBody):
        if not 0.0 <= body.beta <= 1.0:
            raise ApiError(422, "beta must be in [0, 1]")
        fp_a = model.encode(b64_to_image(body.image_a, size))
        fp_b = model.encode(b64_to_image(body.image_b, size))
        req = EditRequest(source_pair=fp_a, identity_target=(fp_b.f_t, body.beta))
        img, _ = render_edit(model, probes, req)
        return ok({"image": image_to_b64(img)})

    app.state.model = model
    app.state.probes = probes
    app.state.meta = meta
    return app
