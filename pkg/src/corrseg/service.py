"""HTTP facade for interactive annotation.

Sessions hold one template with editable prompts and a list of targets.
Feature maps are cached for the session lifetime (they do not depend on
prompts); correspondence, masks and heatmaps are cached per revision and
recomputed after any prompt edit. Within a session, edits are serialized;
reads run against the last committed revision.
"""

from __future__ import annotations

import base64
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backends import ExternalFeatureProvider, FeatureProvider, FileFeatureProvider, registry_lookup
from .core import Image2D, PixelFeatureMap, PromptSet
from .correspondence import correspond, heatmap_to_codes, similarity_heatmap
from .descriptors import LogBinParams
from .fileio import gray_png_bytes, load_image, load_label_image, mask_png_bytes
from .pipeline import pixel_feature_map
from .segmentation import ExternalMaskPredictor, MaskPredictor, OraclePredictor, segment_with_prompts


class ApiError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail


@dataclass
class ServiceConfig:
    image_root: Path
    provider_root: Optional[Path] = None
    feature_endpoint: Optional[str] = None
    labels_root: Optional[Path] = None
    predictor_endpoint: Optional[str] = None
    cors_origins: List[str] = field(default_factory=lambda: ["*"])

    def build_provider(self) -> FeatureProvider:
        if self.provider_root is not None:
            return FileFeatureProvider(self.provider_root)
        if self.feature_endpoint:
            return ExternalFeatureProvider(self.feature_endpoint, image_root=self.image_root)
        raise ValueError("service needs --provider-root or --feature-endpoint")


@dataclass
class PromptEntry:
    polarity: str
    row: int
    col: int
    label: Optional[str] = None

    def to_json(self, index: int) -> dict:
        doc = {"index": index, "polarity": self.polarity, "row": self.row, "col": self.col}
        if self.label is not None:
            doc["label"] = self.label
        return doc


class Session:
    def __init__(self, sid, model, template, target_ids, enrichment):
        self.id = sid
        self.model = model
        self.template: Image2D = template
        self.target_ids: List[str] = target_ids
        self.enrichment: Optional[LogBinParams] = enrichment
        self.prompts: List[PromptEntry] = []
        self.revision = 0
        self.lock = threading.Lock()  # single-writer edits
        self.images: Dict[str, Image2D] = {}
        self.feature_maps: Dict[str, PixelFeatureMap] = {}
        self.match_cache: Dict[str, Tuple[int, dict]] = {}
        self.mask_cache: Dict[str, Tuple[int, dict]] = {}
        self.heatmap_cache: Dict[Tuple[str, int], Tuple[int, bytes]] = {}

    def snapshot(self) -> Tuple[int, List[PromptEntry]]:
        with self.lock:
            return self.revision, list(self.prompts)

    def bump(self) -> int:
        # caller holds self.lock
        self.revision += 1
        return self.revision

    def prompt_set(self, entries: List[PromptEntry]) -> Tuple[PromptSet, List[int]]:
        """Build a PromptSet (positives first) plus entry indices in that order."""
        pos = [(i, e) for i, e in enumerate(entries) if e.polarity == "positive"]
        neg = [(i, e) for i, e in enumerate(entries) if e.polarity == "negative"]
        labels = None
        if any(e.label for _, e in pos):
            labels = [e.label or "" for _, e in pos]
        prompt_set = PromptSet(
            positive=[(e.row, e.col) for _, e in pos],
            negative=[(e.row, e.col) for _, e in neg],
            labels=labels,
        )
        return prompt_set, [i for i, _ in pos] + [i for i, _ in neg]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "model": self.model.id,
            "template": self.template.id,
            "targets": list(self.target_ids),
            "revision": self.revision,
            "prompts": [e.to_json(i) for i, e in enumerate(self.prompts)],
            "enrichment": self.enrichment.to_json() if self.enrichment else None,
        }


class CreateSessionBody(BaseModel):
    model: str
    template: str
    targets: List[str]
    prompts: Optional[dict] = None
    enrichment: Optional[dict] = None


class AddPromptBody(BaseModel):
    row: int
    col: int
    polarity: str
    label: Optional[str] = None


class Engine:
    """Session store plus the compute paths behind the endpoints."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.provider = config.build_provider()
        self.sessions: Dict[str, Session] = {}
        self._sessions_lock = threading.Lock()

    # -- session management ------------------------------------------------

    def _load_image(self, image_id: str) -> Image2D:
        path = self.config.image_root / f"{image_id}.png"
        try:
            return load_image(path)
        except (FileNotFoundError, ValueError) as exc:
            raise ApiError(422, "unreadable_image", f"cannot load image {image_id!r}: {exc}")

    def create_session(self, body: CreateSessionBody) -> Session:
        try:
            model = registry_lookup(body.model)
        except KeyError as exc:
            raise ApiError(422, "unknown_model", str(exc))
        template = self._load_image(body.template)
        if not body.targets:
            raise ApiError(422, "no_targets", "session needs at least one target image")
        enrichment = LogBinParams.from_json(body.enrichment) if body.enrichment else None

        session = Session(uuid.uuid4().hex, model, template, list(body.targets), enrichment)
        for tid in body.targets:
            session.images[tid] = self._load_image(tid)

        if body.prompts:
            try:
                initial = PromptSet(
                    positive=[tuple(p) for p in body.prompts.get("positive", [])],
                    negative=[tuple(p) for p in body.prompts.get("negative", [])],
                    labels=body.prompts.get("labels"),
                )
                initial.validate_bounds(template.dims)
            except ValueError as exc:
                raise ApiError(422, "invalid_prompts", str(exc))
            labels = initial.labels or [None] * initial.n
            for (r, c), label in zip(initial.positive, labels):
                session.prompts.append(PromptEntry("positive", r, c, label))
            for r, c in initial.negative:
                session.prompts.append(PromptEntry("negative", r, c))

        with self._sessions_lock:
            self.sessions[session.id] = session
        return session

    def session(self, sid: str) -> Session:
        with self._sessions_lock:
            session = self.sessions.get(sid)
        if session is None:
            raise ApiError(404, "session_not_found", f"no session {sid!r}")
        return session

    def target_image(self, session: Session, tid: str) -> Image2D:
        if tid == session.template.id:
            return session.template
        if tid not in session.target_ids:
            raise ApiError(404, "target_not_found", f"no target {tid!r} in session")
        return session.images[tid]

    # -- prompt edits --------------------------------------------------------

    def add_prompt(self, session: Session, body: AddPromptBody) -> dict:
        if body.polarity not in ("positive", "negative"):
            raise ApiError(422, "invalid_polarity", f"polarity must be positive|negative")
        p, q = session.template.dims
        if not (0 <= body.row < p and 0 <= body.col < q):
            raise ApiError(
                422, "prompt_out_of_bounds",
                f"({body.row}, {body.col}) outside template bounds {p}x{q}",
            )
        with session.lock:
            for e in session.prompts:
                if (e.polarity, e.row, e.col) == (body.polarity, body.row, body.col):
                    raise ApiError(422, "duplicate_prompt", "prompt already present")
            entry = PromptEntry(body.polarity, body.row, body.col, body.label)
            session.prompts.append(entry)
            revision = session.bump()
            index = len(session.prompts) - 1
        return {"index": index, "revision": revision}

    def remove_prompt(self, session: Session, index: int) -> dict:
        with session.lock:
            if not (0 <= index < len(session.prompts)):
                raise ApiError(404, "prompt_not_found", f"no prompt at index {index}")
            session.prompts.pop(index)
            revision = session.bump()
        return {"revision": revision}

    # -- artifacts -----------------------------------------------------------

    def feature_map(self, session: Session, image: Image2D) -> PixelFeatureMap:
        cached = session.feature_maps.get(image.id)
        if cached is not None:
            return cached
        grid = self.provider.features_for(image.id, session.model)
        if grid.source_dims != image.dims:
            raise ApiError(
                500, "feature_geometry_mismatch",
                f"features for {image.id!r} cover {grid.source_dims}, image is {image.dims}",
            )
        fmap = pixel_feature_map(grid, session.enrichment)
        with session.lock:
            return session.feature_maps.setdefault(image.id, fmap)

    def correspondence(self, session: Session, tid: str) -> dict:
        image = self.target_image(session, tid)
        revision, entries = session.snapshot()
        cached = session.match_cache.get(tid)
        if cached is not None and cached[0] == revision:
            return cached[1]

        prompt_set, order = session.prompt_set(entries)
        template_map = self.feature_map(session, session.template)
        target_map = self.feature_map(session, image)
        matches = correspond(template_map, prompt_set, target_map)
        docs = []
        for entry_index, match in zip(order, matches):
            doc = match.to_json()
            doc["prompt_index"] = entry_index
            docs.append(doc)
        payload = {"revision": revision, "matches": docs}
        with session.lock:
            if session.revision == revision:
                session.match_cache[tid] = (revision, payload)
        return payload

    def _predictor_for(self, tid: str) -> MaskPredictor:
        if self.config.labels_root is not None:
            path = self.config.labels_root / f"{tid}.png"
            try:
                return OraclePredictor(load_label_image(path))
            except (FileNotFoundError, ValueError) as exc:
                raise ApiError(409, "no_predictor", f"no oracle labels for {tid!r}: {exc}")
        if self.config.predictor_endpoint:
            return ExternalMaskPredictor(self.config.predictor_endpoint)
        raise ApiError(409, "no_predictor", "service has no mask predictor configured")

    def mask(self, session: Session, tid: str) -> dict:
        image = self.target_image(session, tid)
        revision, entries = session.snapshot()
        cached = session.mask_cache.get(tid)
        if cached is not None and cached[0] == revision:
            return cached[1]

        prompt_set, order = session.prompt_set(entries)
        if prompt_set.n == 0:
            raise ApiError(409, "no_positive_prompts", "add a positive prompt before requesting a mask")
        template_map = self.feature_map(session, session.template)
        target_map = self.feature_map(session, image)
        matches = correspond(template_map, prompt_set, target_map)
        predictor = self._predictor_for(tid)
        try:
            outcome = segment_with_prompts(image, matches, predictor)
        except RuntimeError as exc:
            raise ApiError(502, "predictor_failed", str(exc))

        payload = outcome.to_json()
        for entry_index, doc in zip(order, payload["prompts"]):
            doc["prompt_index"] = entry_index
        payload["revision"] = revision
        payload["mask_png_base64"] = base64.b64encode(mask_png_bytes(outcome.mask)).decode("ascii")
        with session.lock:
            if session.revision == revision:
                session.mask_cache[tid] = (revision, payload)
        return payload

    def heatmap_png(self, session: Session, tid: str, prompt_index: int) -> Tuple[int, bytes]:
        image = self.target_image(session, tid)
        revision, entries = session.snapshot()
        if not (0 <= prompt_index < len(entries)):
            raise ApiError(404, "prompt_not_found", f"no prompt at index {prompt_index}")
        key = (tid, prompt_index)
        cached = session.heatmap_cache.get(key)
        if cached is not None and cached[0] == revision:
            return cached

        entry = entries[prompt_index]
        template_map = self.feature_map(session, session.template)
        target_map = self.feature_map(session, image)
        hm = similarity_heatmap(template_map, (entry.row, entry.col), target_map)
        png = gray_png_bytes(heatmap_to_codes(hm))
        with session.lock:
            if session.revision == revision:
                session.heatmap_cache[key] = (revision, png)
        return revision, png


def create_app(config: ServiceConfig) -> FastAPI:
    engine = Engine(config)
    app = FastAPI(title="corrseg annotation service")
    app.state.engine = engine
    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.code, "detail": exc.detail})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        # raw raster for the UI canvases
        path = config.image_root / f"{image_id}.png"
        if not path.is_file():
            raise ApiError(404, "image_not_found", f"no image {image_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        return engine.create_session(body).to_json()

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return engine.session(sid).to_json()

    @app.post("/sessions/{sid}/prompts")
    def add_prompt(sid: str, body: AddPromptBody):
        return engine.add_prompt(engine.session(sid), body)

    @app.delete("/sessions/{sid}/prompts/{index}")
    def remove_prompt(sid: str, index: int):
        return engine.remove_prompt(engine.session(sid), index)

    @app.get("/sessions/{sid}/targets")
    def list_targets(sid: str):
        session = engine.session(sid)
        return {"targets": list(session.target_ids), "revision": session.revision}

    @app.get("/sessions/{sid}/targets/{tid}/correspondence")
    def get_correspondence(sid: str, tid: str):
        return engine.correspondence(engine.session(sid), tid)

    @app.get("/sessions/{sid}/targets/{tid}/mask")
    def get_mask(sid: str, tid: str):
        return engine.mask(engine.session(sid), tid)

    @app.get("/sessions/{sid}/targets/{tid}/heatmap")
    def get_heatmap(sid: str, tid: str, prompt: int):
        revision, png = engine.heatmap_png(engine.session(sid), tid, prompt)
        return Response(
            content=png,
            media_type="image/png",
            headers={"X-Revision": str(revision)},
        )

    return app
