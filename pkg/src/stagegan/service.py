"""HTTP generation service over a frozen stage-3 checkpoint.

Endpoints:
  GET  /model/meta  -- layer layout, label kind, checkpoint hash
  POST /generate    -- images for (label, seed, overrides) or a resubmitted
                       latent echo; base64 PNG by default, ?format=raw for
                       nested float arrays
  POST /traverse    -- ordered strip sweeping one (layer, dim) coordinate

Determinism: the latent for sample ``i`` of a request depends only on
(seed, i), so the first image of a count=4 request equals the image of a
count=1 request with the same seed, and traversal endpoints match plain
/generate calls with the corresponding override.
"""

from __future__ import annotations

import base64
import io
import secrets
from pathlib import Path
from typing import Optional, Union

import torch
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from stagegan.generator import LatentCode, generate, sample_latent, traverse
from stagegan.rng import make_generator
from stagegan.trainer import GanBundle, load_gan

OVERRIDE_CLAMP = 4.0
MAX_COUNT = 16


class LatentOverride(BaseModel):
    layer: int
    dim: int
    value: float


class LatentEcho(BaseModel):
    layer_codes: list[list[float]]
    base_noise: list[float]


class GenerateRequest(BaseModel):
    label: Union[int, list[float]] = 0
    seed: Optional[int] = None
    overrides: list[LatentOverride] = Field(default_factory=list)
    latent: Optional[list[LatentEcho]] = None
    count: int = 1


class TraverseRequest(BaseModel):
    label: Union[int, list[float]] = 0
    seed: Optional[int] = None
    layer: int = 0
    dim: int = 0
    min: float = -3.0
    max: float = 3.0
    steps: int = 7


def _bad_request(field: str, message: str) -> HTTPException:
    return HTTPException(status_code=400,
                         detail=[{"field": field, "message": message}])


def _validate_label(bundle: GanBundle, label) -> torch.Tensor:
    if bundle.label_kind == "categorical":
        if not isinstance(label, int):
            raise _bad_request("label", "categorical model expects a class index")
        if not 0 <= label < bundle.num_classes:
            raise _bad_request("label", f"class index out of range [0, {bundle.num_classes})")
        return torch.tensor([label], dtype=torch.int64)
    if isinstance(label, int):
        raise _bad_request("label", "multilabel model expects a 0/1 vector")
    if len(label) != bundle.num_classes:
        raise _bad_request("label", f"expected {bundle.num_classes} attribute values")
    if any(v < 0 or v > 1 for v in label):
        raise _bad_request("label", "attribute values must lie in [0, 1]")
    return torch.tensor([label], dtype=torch.float32)


def _validate_coord(bundle: GanBundle, layer: int, dim: int, where: str) -> None:
    dims = bundle.layout().layer_dims
    if not 0 <= layer < len(dims):
        raise _bad_request(f"{where}.layer", f"layer out of range [0, {len(dims)})")
    if not 0 <= dim < dims[layer]:
        raise _bad_request(f"{where}.dim", f"dim out of range [0, {dims[layer]})")


def _latent_for(bundle: GanBundle, seed: int, index: int) -> LatentCode:
    rng = make_generator(seed, index, 0x5E2)
    return sample_latent(bundle.layout(), 1, rng)


def _latent_from_echo(bundle: GanBundle, echo: LatentEcho, index: int) -> LatentCode:
    dims = bundle.layout().layer_dims
    if len(echo.layer_codes) != len(dims):
        raise _bad_request(f"latent[{index}].layer_codes",
                           f"expected {len(dims)} layers")
    for li, (codes, q) in enumerate(zip(echo.layer_codes, dims)):
        if len(codes) != q:
            raise _bad_request(f"latent[{index}].layer_codes[{li}]",
                               f"expected {q} values")
    if len(echo.base_noise) != bundle.layout().base_dim:
        raise _bad_request(f"latent[{index}].base_noise",
                           f"expected {bundle.layout().base_dim} values")
    return LatentCode.from_lists({"layer_codes": [[c] for c in echo.layer_codes],
                                  "base_noise": [echo.base_noise]})


def _apply_overrides(bundle: GanBundle, z: LatentCode,
                     overrides: list[LatentOverride]) -> LatentCode:
    z = z.clone()
    for i, ov in enumerate(overrides):
        _validate_coord(bundle, ov.layer, ov.dim, f"overrides[{i}]")
        value = max(-OVERRIDE_CLAMP, min(OVERRIDE_CLAMP, ov.value))
        z.layer_codes[ov.layer][:, ov.dim] = value
    return z


def _echo_of(z: LatentCode) -> dict:
    d = z.to_lists()
    return {"layer_codes": [layer[0] for layer in d["layer_codes"]],
            "base_noise": d["base_noise"][0]}


def _png_bytes(image: torch.Tensor) -> bytes:
    arr = ((image.clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    arr = arr.permute(1, 2, 0).numpy()
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _encode(images: list[torch.Tensor], fmt: str):
    if fmt == "raw":
        return [img.tolist() for img in images]
    return [base64.b64encode(_png_bytes(img)).decode("ascii") for img in images]


def create_app(checkpoint: str | Path | None = None, *,
               bundle: GanBundle | None = None, cors: bool = True) -> FastAPI:
    app = FastAPI(title="conditional generator service")
    if cors:
        app.add_middleware(CORSMiddleware, allow_origins=["*"],
                           allow_methods=["*"], allow_headers=["*"])
    if bundle is None and checkpoint is not None:
        bundle = load_gan(checkpoint)
    app.state.bundle = bundle

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request: Request, exc: RequestValidationError):
        detail = [{"field": ".".join(str(p) for p in err["loc"] if p != "body"),
                   "message": err["msg"]} for err in exc.errors()]
        return JSONResponse(status_code=400, content={"detail": detail})

    def model() -> GanBundle:
        if app.state.bundle is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return app.state.bundle

    @app.get("/model/meta")
    def model_meta():
        b = model()
        layout = b.layout()
        return {
            "L": layout.num_layers,
            "q": list(layout.layer_dims),
            "base_dim": layout.base_dim,
            "image_size": b.image_size,
            "label_kind": b.label_kind,
            "K": b.num_classes,
            "attribute_names": b.attribute_names,
            "checkpoint_hash": b.checkpoint_hash,
        }

    @app.post("/generate")
    def generate_endpoint(req: GenerateRequest,
                          format: str = Query("png", pattern="^(png|raw)$")):
        b = model()
        y = _validate_label(b, req.label)
        if req.latent is not None:
            codes = [_latent_from_echo(b, echo, i) for i, echo in enumerate(req.latent)]
            seed_used = req.seed
        else:
            if not 1 <= req.count <= MAX_COUNT:
                raise _bad_request("count", f"count must be in [1, {MAX_COUNT}]")
            seed_used = req.seed if req.seed is not None else secrets.randbelow(2 ** 31)
            codes = [_latent_for(b, seed_used, i) for i in range(req.count)]
        codes = [_apply_overrides(b, z, req.overrides) for z in codes]
        images, echoes = [], []
        for z in codes:
            images.append(generate(y, z, b.mapper, b.generator)[0])
            echoes.append(_echo_of(z))
        return {"images": _encode(images, format), "format": format,
                "latents": echoes, "seed": seed_used,
                "checkpoint_hash": b.checkpoint_hash}

    @app.post("/traverse")
    def traverse_endpoint(req: TraverseRequest,
                          format: str = Query("png", pattern="^(png|raw)$")):
        b = model()
        y = _validate_label(b, req.label)
        _validate_coord(b, req.layer, req.dim, "")
        if not 2 <= req.steps <= 16:
            raise _bad_request("steps", "steps must be in [2, 16]")
        if req.min > req.max:
            raise _bad_request("min", "min must be <= max")
        seed_used = req.seed if req.seed is not None else secrets.randbelow(2 ** 31)
        z = _latent_for(b, seed_used, 0)
        values = [req.min + (req.max - req.min) * i / (req.steps - 1)
                  for i in range(req.steps)]
        values = [max(-OVERRIDE_CLAMP, min(OVERRIDE_CLAMP, v)) for v in values]
        frames = traverse(y, z, req.layer, req.dim, values, b.mapper, b.generator)
        images = [f[0] for f in frames]
        return {"images": _encode(images, format), "format": format,
                "values": values, "seed": seed_used,
                "checkpoint_hash": b.checkpoint_hash}

    return app


def run_service(checkpoint: str | Path, host: str = "127.0.0.1", port: int = 8000,
                *, cors: bool = True) -> None:
    import uvicorn

    app = create_app(checkpoint, cors=cors)
    uvicorn.run(app, host=host, port=port)
