"""HTTP surface binding model, store, registry, retraining, swarm, and worklist.

Wire shapes are fixed: every response is `{"data": [...], "status": "..."}`,
the model listing spells its version field `version` while the model-update
response spells it `modelVersion` (existing clients depend on both spellings,
asymmetric as they are), and body keys are emitted in the documented order. `width`/`height` on image-carrying requests and `disposition` /
`study_id` on model-update are documented extensions; in strict mode any
other unknown field is a 400 naming the field.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import AppConfig
from .errors import (
    ConflictError,
    InvalidInputError,
    NotFoundError,
    RadAssistError,
    UndefinedMetricError,
)
from .model import BoundingBox, ImagePayload, ModelConfig, infer
from .registry import BASE_OWNER, ModelRegistry
from .retraining import BatchTriggerPolicy, RetrainingEngine
from .store import AnnotationStore, CorrectionRecord, SrLiteAnnotation, image_to_json
from .swarm import MergeSpec, SwarmNode, run_swarm_round
from .worklist import ScorePolicy, Worklist, score

INFERENCE_FIELDS = {"image", "model", "modelVersion", "width", "height"}
MODEL_UPDATE_FIELDS = {
    "annotationText", "image", "model", "modelVersion",
    "x1", "x2", "x3", "x4", "y1", "y2", "y3", "y4",
}
MODEL_UPDATE_EXTENSIONS = {"width", "height", "disposition", "study_id"}


class AuthError(RadAssistError):
    pass


@dataclass
class ServiceContext:
    config: AppConfig
    cfg: ModelConfig
    store: AnnotationStore
    registry: ModelRegistry
    worklist: Worklist
    engine: RetrainingEngine
    policy: BatchTriggerPolicy
    retrain_locks: dict[tuple[str, str], threading.Lock] = field(default_factory=dict)
    _locks_guard: threading.Lock = field(default_factory=threading.Lock)

    def lineage_lock(self, model: str, owner: str) -> threading.Lock:
        with self._locks_guard:
            return self.retrain_locks.setdefault((model, owner), threading.Lock())

    def studies_dir(self) -> Path:
        return Path(self.config.data_dir) / "studies"


def build_context(config: AppConfig, seed: bool = True) -> ServiceContext:
    cfg = config.model_config()
    data_dir = Path(config.data_dir)
    registry = ModelRegistry(data_dir, cfg)
    store = AnnotationStore(data_dir)
    worklist = Worklist(data_dir)
    engine = RetrainingEngine(registry, store, cfg, report_dir=data_dir / "reports")
    if seed and not registry.has_lineage(config.model_name, BASE_OWNER):
        registry.seed_base(config.model_name)
    return ServiceContext(
        config=config,
        cfg=cfg,
        store=store,
        registry=registry,
        worklist=worklist,
        engine=engine,
        policy=BatchTriggerPolicy(n_batch=config.n_batch, t_max=config.effective_t_max()),
    )


def envelope(data: list, status: str) -> JSONResponse:
    return JSONResponse(content={"data": data, "status": status})


def _error(status_code: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"error": message})


def _check_fields(body: dict, allowed: set[str], required: set[str], strict: bool) -> None:
    for name in required:
        if name not in body:
            raise InvalidInputError(f"missing required field '{name}'")
    if strict:
        for name in body:
            if name not in allowed:
                raise InvalidInputError(f"unknown field '{name}'")


def _decode_image(ctx: ServiceContext, body: dict) -> ImagePayload:
    if "width" in body or "height" in body:
        if "width" not in body or "height" not in body:
            raise InvalidInputError("width and height must be supplied together")
        width, height = int(body["width"]), int(body["height"])
    elif ctx.config.strict_wire:
        raise InvalidInputError("missing required field 'width'")
    else:
        # paper-literal payload: fall back to the configured raster size
        width, height = ctx.cfg.width, ctx.cfg.height
    return ImagePayload.from_base64(str(body["image"]), width, height)


def _user_id(request: Request) -> str | None:
    return request.headers.get("X-User-Id")


def _aggregate_status(statuses: list[str]) -> str:
    if not statuses:
        return "ready"
    if "retraining" in statuses:
        return "retraining"
    if "swarm-learned" in statuses:
        return "swarm-learned"
    return "ready"


def create_app(config: AppConfig | None = None, seed: bool = True) -> FastAPI:
    ctx = build_context(config or AppConfig(), seed=seed)
    app = FastAPI(title="radassist", docs_url=None, redoc_url=None)
    app.state.ctx = ctx

    @app.exception_handler(InvalidInputError)
    async def _invalid(request: Request, exc: InvalidInputError):
        return _error(400, str(exc))

    @app.exception_handler(UndefinedMetricError)
    async def _undefined(request: Request, exc: UndefinedMetricError):
        return _error(400, str(exc))

    @app.exception_handler(NotFoundError)
    async def _missing(request: Request, exc: NotFoundError):
        return _error(404, str(exc))

    @app.exception_handler(ConflictError)
    async def _conflict(request: Request, exc: ConflictError):
        return _error(409, str(exc))

    @app.exception_handler(AuthError)
    async def _auth(request: Request, exc: AuthError):
        return _error(401, str(exc))

    @app.get("/health")
    async def health():
        return JSONResponse(content={"status": "ok"})

    # -- model listing and inference ------------------------------------------

    @app.get("/bounding-box")
    async def bounding_box_get(request: Request):
        raw = await request.body()
        if raw:
            return _run_inference(ctx, request, raw)
        return _list_models(ctx, request)

    @app.post("/bounding-box")
    async def bounding_box_post(request: Request):
        raw = await request.body()
        if not raw:
            raise InvalidInputError("inference requires a JSON body with image and model")
        return _run_inference(ctx, request, raw)

    # -- corrections ------------------------------------------------------------

    @app.post("/model-update")
    async def model_update(request: Request):
        user = _user_id(request)
        if not user:
            raise AuthError("X-User-Id header required")
        body = _parse_json(await request.body())
        _check_fields(
            body,
            allowed=MODEL_UPDATE_FIELDS | MODEL_UPDATE_EXTENSIONS,
            required=MODEL_UPDATE_FIELDS if ctx.config.strict_wire
            else MODEL_UPDATE_FIELDS - {"x1", "x2", "x3", "x4", "y1", "y2", "y3", "y4"},
            strict=ctx.config.strict_wire,
        )
        return _apply_model_update(ctx, user, body)

    # -- worklist ----------------------------------------------------------------

    @app.get("/worklist")
    async def worklist_get():
        entries = [e.to_json() for e in ctx.worklist.prioritized()]
        return envelope(entries, "ready")

    @app.post("/worklist")
    async def worklist_post(request: Request):
        body = _parse_json(await request.body())
        user = _user_id(request)
        return _register_study(ctx, body, user)

    @app.post("/worklist/assign")
    async def worklist_assign(request: Request):
        raw = await request.body()
        body = _parse_json(raw) if raw else {}
        users = tuple(body.get("users", ())) or ctx.config.users
        if not users:
            raise InvalidInputError("no users configured for assignment")
        loads = {u: 0 for u in users}
        for entry in ctx.worklist.entries():
            if entry.assigned_to in loads and entry.state == "assigned":
                loads[entry.assigned_to] += 1
        assignments = ctx.worklist.assign_all(loads)
        data = [{"study_id": s, "assigned_to": u} for s, u in assignments.items()]
        return envelope(data, "ready")

    @app.post("/worklist/{study_id}/read")
    async def worklist_read(study_id: str, request: Request):
        user = _user_id(request)
        if not user:
            raise AuthError("X-User-Id header required")
        return _mark_read(ctx, study_id, user)

    @app.get("/studies/{study_id}")
    async def study_get(study_id: str):
        path = ctx.studies_dir() / f"{study_id}.json"
        if not path.exists():
            raise NotFoundError(f"study {study_id!r} is not registered")
        payload = json.loads(path.read_text(encoding="utf-8"))
        payload["annotations"] = [a.to_json() for a in ctx.store.annotations_for(study_id)]
        return envelope([payload], "ready")

    @app.get("/annotations/{study_id}")
    async def annotations_get(study_id: str):
        return envelope([a.to_json() for a in ctx.store.annotations_for(study_id)], "ready")

    # -- swarm and registry -------------------------------------------------------

    @app.post("/swarm/merge")
    async def swarm_merge(request: Request):
        body = _parse_json(await request.body())
        return _merge_round(ctx, body)

    if ctx.config.frontend_dir and Path(ctx.config.frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=ctx.config.frontend_dir, html=True), name="app")

    @app.get("/models/{model}/versions")
    async def model_versions(model: str):
        owners = ctx.registry.owners(model)
        if not owners:
            raise NotFoundError(f"unknown model {model!r}")
        data = []
        for owner in owners:
            for rec in ctx.registry.lineage(model, owner):
                data.append(rec.to_json())
        return envelope(data, _aggregate_status(
            [ctx.registry.status(model, owner) for owner in owners]
        ))

    return app


def _parse_json(raw: bytes) -> dict:
    try:
        body = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"request body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise InvalidInputError("request body must be a JSON object")
    return body


def _list_models(ctx: ServiceContext, request: Request) -> JSONResponse:
    owner = _user_id(request) or BASE_OWNER
    data = []
    statuses = []
    for model in ctx.registry.models():
        rec, _ = ctx.registry.resolve(model, owner)
        data.append({"model": model, "version": str(rec.version)})
        statuses.append(ctx.registry.status(model, owner))
    return envelope(data, _aggregate_status(statuses))


def _run_inference(ctx: ServiceContext, request: Request, raw: bytes) -> JSONResponse:
    body = _parse_json(raw)
    _check_fields(
        body,
        allowed=INFERENCE_FIELDS,
        required={"image", "model"},
        strict=ctx.config.strict_wire,
    )
    owner = _user_id(request) or BASE_OWNER
    model = str(body["model"])
    version = int(body["modelVersion"]) if "modelVersion" in body else None
    image = _decode_image(ctx, body)
    rec, weights = ctx.registry.resolve(model, owner, version)
    status = ctx.registry.status(model, owner)
    result = infer(
        weights, image, ctx.cfg, model=model, model_version=rec.version, status=status
    )
    return envelope([_finding_json(f, model, rec.version, status) for f in result.findings], status)


def _finding_json(finding, model: str, version: int, status: str) -> dict:
    data: dict[str, Any] = {
        "annotationText": finding.label,
        "probability": finding.probability,
    }
    if finding.box is not None:
        box = finding.box
        data.update({
            "x1": box.x1, "x2": box.x2, "x3": box.x3, "x4": box.x4,
            "y1": box.y1, "y2": box.y2, "y3": box.y3, "y4": box.y4,
        })
    data.update({"model": model, "modelVersion": str(version), "status": status})
    return data


def _apply_model_update(ctx: ServiceContext, user: str, body: dict) -> JSONResponse:
    model = str(body["model"])
    requested_version = int(body["modelVersion"])
    image = _decode_image(ctx, body)
    label = str(body["annotationText"])
    if label not in ctx.cfg.labels:
        raise InvalidInputError(f"annotationText {label!r} is not a configured label")
    disposition = str(body.get("disposition", "box-adjusted"))

    corrected_box = None
    if disposition != "disabled" and all(
        k in body for k in ("x1", "x2", "x3", "x4", "y1", "y2", "y3", "y4")
    ):
        corrected_box = BoundingBox(
            x1=int(body["x1"]), y1=int(body["y1"]),
            x2=int(body["x2"]), y2=int(body["y2"]),
            x3=int(body["x3"]), y3=int(body["y3"]),
            x4=int(body["x4"]), y4=int(body["y4"]),
        )
        if not corrected_box.within_bounds(image.width, image.height):
            raise InvalidInputError("box exceeds image bounds")

    rec_version, weights = ctx.registry.resolve(model, user, requested_version)
    original = infer(weights, image, ctx.cfg).finding(label) if label in ctx.cfg.labels else None

    record = CorrectionRecord(
        correction_id=uuid.uuid4().hex,
        user_id=user,
        model=model,
        model_version=requested_version,
        study_id=str(body.get("study_id", "")),
        label=label,
        disposition=disposition,
        image=image,
        corrected_box=corrected_box,
        original_finding=original,
        received_at=ctx.store.clock(),
    )
    ctx.store.append_correction(record)
    if corrected_box is not None:
        ctx.store.add_annotation(SrLiteAnnotation(
            annotation_id=f"corr-{record.correction_id}",
            study_id=record.study_id or f"adhoc-{record.correction_id}",
            author=f"user:{user}",
            label=label,
            box=corrected_box,
            annotation_text=label,
            created_at=record.received_at,
        ))

    pending = ctx.store.pending_corrections(user, model)
    fired = ctx.policy.decide(len(pending), ctx.store.oldest_pending_age(user, model))
    served_version = ctx.registry.resolve(model, user)[0].version
    status = ctx.registry.status(model, user)

    if fired:
        status = "retraining"
        lock = ctx.lineage_lock(model, user)
        if ctx.config.sim_mode:
            with lock:
                report = ctx.engine.retrain_batch(model, user)
            if report is not None and report.new_version is not None:
                served_version = report.new_version
        else:
            ctx.registry.set_status(model, user, "retraining")

            def _job():
                with lock:
                    try:
                        ctx.engine.retrain_batch(model, user)
                    finally:
                        if ctx.registry.status(model, user) == "retraining":
                            ctx.registry.set_status(model, user, "ready")

            threading.Thread(target=_job, daemon=True).start()

    return JSONResponse(content={
        "data": [{"model": model, "modelVersion": str(served_version)}],
        "status": status,
    })


def _merge_round(ctx: ServiceContext, body: dict) -> JSONResponse:
    model = str(body.get("model", ctx.config.model_name))
    node_ids = list(body.get("nodes", ()))
    if not node_ids:
        raise InvalidInputError("merge requires a non-empty node list")
    spec = MergeSpec(
        method=str(body.get("method", "additive")),
        coefficients=tuple(body["coefficients"]) if body.get("coefficients") else None,
        layer_selector=tuple(body["layer_selector"]) if body.get("layer_selector") else None,
        include_bias=bool(body.get("include_bias", True)),
    )
    nodes = []
    for node_id in node_ids:
        rec, _ = ctx.registry.resolve(model, node_id)
        nodes.append(SwarmNode(node_id=node_id, model=model, local_version=rec.version))
    published = run_swarm_round(
        ctx.registry, nodes, spec, report_dir=Path(ctx.config.data_dir) / "reports"
    )
    return envelope([rec.to_json() for rec in published], "swarm-learned")


def _register_study(ctx: ServiceContext, body: dict, user: str | None) -> JSONResponse:
    if "study_id" not in body or "image" not in body:
        raise InvalidInputError("missing required field 'study_id' or 'image'")
    study_id = str(body["study_id"])
    image = _decode_image(ctx, body)
    model = str(body.get("model", ctx.config.model_name))
    owner = user or BASE_OWNER

    rec, weights = ctx.registry.resolve(model, owner)
    status = ctx.registry.status(model, owner)
    result = infer(weights, image, ctx.cfg, model=model, model_version=rec.version, status=status)

    entry = ctx.worklist.register(study_id, modality=str(body.get("modality", "CR")))
    entry = ctx.worklist.set_priority(study_id, score(result, ScorePolicy()))

    studies = ctx.studies_dir()
    studies.mkdir(parents=True, exist_ok=True)
    (studies / f"{study_id}.json").write_text(
        json.dumps({"study_id": study_id, **image_to_json(image), "model": model}),
        encoding="utf-8",
    )
    for finding in result.findings:
        if finding.box is not None:
            ctx.store.add_annotation(SrLiteAnnotation(
                annotation_id=f"{study_id}-{finding.label}-v{rec.version}",
                study_id=study_id,
                author=f"model:{model}@{rec.version}",
                label=finding.label,
                box=finding.box,
                annotation_text=finding.label,
                created_at=ctx.store.clock(),
            ))
    return envelope([entry.to_json()], status)


def _mark_read(ctx: ServiceContext, study_id: str, user: str) -> JSONResponse:
    path = ctx.studies_dir() / f"{study_id}.json"
    if not path.exists():
        raise NotFoundError(f"study {study_id!r} is not registered")
    payload = json.loads(path.read_text(encoding="utf-8"))
    image = ImagePayload.from_base64(payload["image"], payload["width"], payload["height"])
    model = payload.get("model", ctx.config.model_name)

    rec, weights = ctx.registry.resolve(model, user)
    result = infer(weights, image, ctx.cfg, model=model, model_version=rec.version)
    corrected = {
        r.label for r in ctx.store.corrections_for_study(user, study_id)
    }
    admitted = ctx.store.admit_untouched(user, result, image, corrected)
    if ctx.worklist.get(study_id).state == "unread":
        ctx.worklist.advance_state(study_id, "assigned", assigned_to=user)
    entry = ctx.worklist.advance_state(study_id, "read", assigned_to=user)
    return envelope([{**entry.to_json(), "pool_admitted": admitted}], "ready")
