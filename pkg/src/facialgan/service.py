"""Inference service: wire codecs, the synthesize/segment operations, and the
HTTP/JSON API the editor UI talks to.

Wire conventions: images travel as base64 PNG (RGB); masks as base64 8-bit
indexed PNG whose pixel value is the working class index 0..4 (same indexed-PNG
machinery the dataset uses, so client and datapipe share decoders).
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import LoadedCheckpoint, load_checkpoint, restore_networks
from .config import ATTRIBUTES
from .data import (DatasetIndex, attribute_channel, build_index, decode_image,
                   decode_index_grid, encode_image, encode_index_grid,
                   grid_to_onehot, image_to_tensor, load_sample, onehot_to_grid,
                   resize_grid, tensor_to_image)
from .errors import (BadMask, DecodeError, FacialGANError, MissingReference,
                     ShapeMismatch)
from .networks import Networks

DOMAIN_NAMES = {"female": 0, "male": 1}


# ---------------------------------------------------------------------------
# wire codecs

def image_from_b64(data: str) -> torch.Tensor:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise DecodeError(f"invalid base64 image payload: {exc}") from exc
    return image_to_tensor(decode_image(raw))


def image_to_b64(x: torch.Tensor) -> str:
    return base64.b64encode(encode_image(tensor_to_image(x))).decode("ascii")


def grid_from_b64(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise BadMask(f"invalid base64 mask payload: {exc}") from exc
    try:
        grid = decode_index_grid(raw)
    except DecodeError as exc:
        raise BadMask(str(exc)) from exc
    return grid


def grid_to_b64(grid: np.ndarray) -> str:
    return base64.b64encode(encode_index_grid(grid)).decode("ascii")


# ---------------------------------------------------------------------------
# model-facing operations

@dataclass
class SynthesisRequest:
    source: str                      # base64 PNG
    mode: str = "latent"             # latent | reference
    reference: str | None = None     # base64 PNG, required in reference mode
    mask: str | None = None          # base64 indexed PNG (possibly edited)
    domain: int | str = 0
    seed: int | None = None
    masked_attributes: list | None = None  # attribute names to re-inpaint

    def domain_index(self) -> int:
        if isinstance(self.domain, str):
            if self.domain not in DOMAIN_NAMES:
                raise ValueError(f"domain must be female/male, got {self.domain!r}")
            return DOMAIN_NAMES[self.domain]
        if self.domain not in (0, 1):
            raise ValueError(f"domain must be 0 or 1, got {self.domain}")
        return int(self.domain)


@dataclass
class SynthesisResult:
    image: torch.Tensor
    predicted_mask: torch.Tensor  # one-hot C×H×W


class ModelService:
    """Loaded weights plus the pure request-level operations."""

    def __init__(self, ckpt: LoadedCheckpoint, nets: Networks | None = None):
        self.checkpoint = ckpt
        self.nets = (nets if nets is not None else restore_networks(ckpt)).eval_()
        for net in self.nets.as_dict().values():
            net.requires_grad_(False)
        self.image_size = self.nets.config.image_size

    @classmethod
    def from_path(cls, path) -> "ModelService":
        return cls(load_checkpoint(path))

    def segment(self, image: torch.Tensor) -> torch.Tensor:
        """One-hot parse of an image at the working resolution."""
        with torch.no_grad():
            probs = self.nets.segmenter(image[None])[0]
        return grid_to_onehot(probs.argmax(dim=0).numpy())

    def synthesize(self, req: SynthesisRequest) -> SynthesisResult:
        x = self._prepare_image(req.source)
        domain = torch.tensor([req.domain_index()])

        if req.mask is not None:
            grid = resize_grid(grid_from_b64(req.mask), self.image_size)
            m = grid_to_onehot(grid)
        else:
            m = self.segment(x)

        if req.mode == "reference":
            if req.reference is None:
                raise MissingReference("reference mode needs a reference image")
            ref = self._prepare_image(req.reference)
            with torch.no_grad():
                s = self.nets.style_encoder(ref[None], domain)
        elif req.mode == "latent":
            rng = np.random.default_rng(0 if req.seed is None else req.seed)
            z = torch.from_numpy(
                rng.standard_normal((1, self.nets.config.latent_dim), dtype=np.float32))
            with torch.no_grad():
                s = self.nets.mapping(z, domain)
        else:
            raise ValueError(f"mode must be latent or reference, got {req.mode!r}")

        parse = self.segment(x)
        if req.masked_attributes is None:
            to_mask = [c for c in ATTRIBUTES
                       if not torch.equal(m[attribute_channel(c)], parse[attribute_channel(c)])]
        else:
            to_mask = list(req.masked_attributes)

        # erase both where the attribute currently is and where it should go
        x_masked = x.clone()
        for c in to_mask:
            ch = attribute_channel(c)
            region = (m[ch] + parse[ch]) > 0.5
            x_masked[:, region] = 0.0

        with torch.no_grad():
            out = self.nets.generator(x_masked[None], m[None], s)[0]
            predicted = self.segment(out)
        return SynthesisResult(image=out, predicted_mask=predicted)

    def _prepare_image(self, b64: str) -> torch.Tensor:
        x = image_from_b64(b64)
        if x.shape[-1] != self.image_size:
            arr = tensor_to_image(x)
            x = image_to_tensor(arr, self.image_size)
        return x


def synthesize(ckpt: LoadedCheckpoint | ModelService, req: SynthesisRequest) -> SynthesisResult:
    service = ckpt if isinstance(ckpt, ModelService) else ModelService(ckpt)
    return service.synthesize(req)


def segment(ckpt: LoadedCheckpoint | ModelService, image: torch.Tensor) -> torch.Tensor:
    service = ckpt if isinstance(ckpt, ModelService) else ModelService(ckpt)
    return service.segment(image)


# ---------------------------------------------------------------------------
# HTTP layer

@dataclass
class SampleCatalog:
    """Demo sources/references exposed to the editor."""

    index: DatasetIndex
    image_size: int
    thumbnail_size: int = 64
    _cache: dict = field(default_factory=dict)

    def ids(self) -> list:
        return [rec.sample_id for rec in self.index.records]

    def listing(self) -> list:
        out = []
        for rec in self.index.records:
            x, _ = self._load(rec)
            thumb = image_to_tensor(tensor_to_image(x), self.thumbnail_size)
            out.append({"id": rec.sample_id, "thumbnail": image_to_b64(thumb)})
        return out

    def get(self, sample_id: str):
        for rec in self.index.records:
            if rec.sample_id == sample_id:
                x, m = self._load(rec)
                return {"id": sample_id, "image": image_to_b64(x),
                        "mask": grid_to_b64(onehot_to_grid(m)),
                        "gender": rec.gender}
        return None

    def _load(self, rec):
        if rec.sample_id not in self._cache:
            self._cache[rec.sample_id] = load_sample(rec, self.image_size)
        return self._cache[rec.sample_id]


ERROR_CODES = {
    DecodeError: ("bad_image", 400),
    BadMask: ("bad_mask", 400),
    MissingReference: ("missing_reference", 400),
    ShapeMismatch: ("shape_mismatch", 400),
    ValueError: ("invalid_request", 400),
}


def build_app(service: ModelService, samples: SampleCatalog | None = None,
              single_flight: bool = False, frontend_dir=None):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="facialgan")
    lock = threading.Lock() if single_flight else None

    def error_response(exc: Exception) -> JSONResponse:
        for klass, (code, status) in ERROR_CODES.items():
            if isinstance(exc, klass):
                return JSONResponse(status_code=status,
                                    content={"code": code, "message": str(exc)})
        return JSONResponse(status_code=500,
                            content={"code": "internal", "message": str(exc)})

    @app.exception_handler(FacialGANError)
    async def _domain_error(request: Request, exc: FacialGANError):
        return error_response(exc)

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return error_response(exc)

    def guarded(fn):
        if lock is None:
            return fn()
        with lock:
            return fn()

    @app.get("/api/health")
    def health():
        return {"status": "ok", "iteration": service.checkpoint.iteration}

    @app.get("/api/samples")
    def list_samples():
        return {"samples": samples.listing() if samples else []}

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str):
        found = samples.get(sample_id) if samples else None
        if found is None:
            return JSONResponse(status_code=404,
                                content={"code": "not_found",
                                         "message": f"no sample {sample_id!r}"})
        return found

    @app.post("/api/segment")
    def segment_endpoint(payload: dict):
        if "image" not in payload:
            return JSONResponse(status_code=400,
                                content={"code": "invalid_request",
                                         "message": "missing field: image"})
        mask = guarded(lambda: service.segment(
            service._prepare_image(payload["image"])))
        return {"mask": grid_to_b64(onehot_to_grid(mask))}

    @app.post("/api/synthesize")
    def synthesize_endpoint(payload: dict):
        known = {"source", "mode", "reference", "mask", "domain", "seed",
                 "masked_attributes"}
        unknown = set(payload) - known
        if unknown or "source" not in payload:
            return JSONResponse(status_code=400,
                                content={"code": "invalid_request",
                                         "message": f"bad fields: {sorted(unknown) or 'missing source'}"})
        req = SynthesisRequest(**payload)
        started = time.perf_counter()
        result = guarded(lambda: service.synthesize(req))
        return {
            "image": image_to_b64(result.image),
            "predicted_mask": grid_to_b64(onehot_to_grid(result.predicted_mask)),
            "timing_ms": round((time.perf_counter() - started) * 1000.0, 3),
        }

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")
    return app


def serve(ckpt_path, port: int = 8080, data_root=None, single_flight: bool = False,
          frontend_dir=None, host: str = "127.0.0.1"):
    """Load a checkpoint and serve the HTTP API (blocking)."""
    import uvicorn

    service = ModelService.from_path(ckpt_path)
    samples = None
    if data_root is not None:
        index = build_index(data_root, "test")
        if not index.records:
            index = build_index(data_root, "all")
        samples = SampleCatalog(index=index, image_size=service.image_size)
    app = build_app(service, samples=samples, single_flight=single_flight,
                    frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
