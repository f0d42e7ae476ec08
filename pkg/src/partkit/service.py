"""HTTP facade: part catalog, generation jobs, image serving.

Jobs are persisted as JSON files under the state directory, so a restart
loses nothing: queued jobs resume, finished jobs stay resolvable. One
worker drains the queue FIFO; reads are idempotent.
"""

from __future__ import annotations

import io
import itertools
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from PIL import Image

from .dictionary import PartDictionary, load_dictionary
from .errors import InputError, StateError
from .generation import DEFAULT_GUIDANCE, DEFAULT_STEPS, GenerationRequest, generate
from .parts import PartComposition
from .sprites import render_for_composition
from .training import load_state

JOB_STATUSES = ("queued", "running", "done", "failed")


@dataclass
class Job:
    id: str
    request: dict
    status: str = "queued"
    result_ref: str | None = None
    error: str | None = None
    created_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    seq: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id, "request": self.request, "status": self.status,
            "result_ref": self.result_ref, "error": self.error,
            "created_at": self.created_at, "started_at": self.started_at,
            "finished_at": self.finished_at, "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Job":
        return cls(**d)


class JobStore:
    """File-backed FIFO job queue; every mutation is flushed to disk."""

    def __init__(self, state_dir):
        self.root = Path(state_dir)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        (self.root / "images").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._jobs: dict[str, Job] = {}
        for path in sorted((self.root / "jobs").glob("*.json")):
            job = Job.from_dict(json.loads(path.read_text()))
            if job.status == "running":
                job.status = "queued"  # interrupted by a restart; re-run
            self._jobs[job.id] = job
        self._seq = itertools.count(
            max((j.seq for j in self._jobs.values()), default=0) + 1
        )

    def _flush(self, job: Job) -> None:
        (self.root / "jobs" / f"{job.id}.json").write_text(json.dumps(job.to_dict()))

    def submit(self, request: dict) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], request=request,
                  created_at=time.time(), seq=next(self._seq))
        with self._lock:
            self._jobs[job.id] = job
            self._flush(job)
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def next_queued(self) -> Job | None:
        with self._lock:
            queued = [j for j in self._jobs.values() if j.status == "queued"]
            if not queued:
                return None
            job = min(queued, key=lambda j: j.seq)
            job.status = "running"
            job.started_at = time.time()
            self._flush(job)
            return job

    def finish(self, job: Job, *, result_ref: str | None = None,
               error: str | None = None) -> None:
        with self._lock:
            job.status = "failed" if error else "done"
            job.result_ref = result_ref
            job.error = error
            job.finished_at = time.time()
            self._flush(job)

    def image_path(self, image_id: str) -> Path:
        return self.root / "images" / f"{image_id}.png"


@dataclass
class ServiceSettings:
    dictionary_path: str | None = None
    checkpoint_path: str | None = None
    images_dir: str | None = None
    state_dir: str = "service_state"
    stub: bool = False  # deterministic sprite renderer instead of a model
    worker: bool = True
    page_size: int = 50
    ui_dir: str | None = None  # built frontend to serve under /ui


@dataclass
class ServiceContext:
    settings: ServiceSettings
    store: JobStore
    dictionary: PartDictionary | None = None
    state: object | None = None
    provenance: dict[str, dict] = field(default_factory=dict)
    _worker: threading.Thread | None = None
    _stop: threading.Event = field(default_factory=threading.Event)

    def load(self) -> None:
        if self.settings.dictionary_path:
            self.dictionary = load_dictionary(self.settings.dictionary_path)
        if self.settings.checkpoint_path:
            self.state = load_state(self.settings.checkpoint_path)
        prov_file = self.store.root / "provenance.json"
        if prov_file.exists():
            self.provenance = json.loads(prov_file.read_text())

    def _save_provenance(self) -> None:
        (self.store.root / "provenance.json").write_text(
            json.dumps(self.provenance, indent=2))

    def bounds(self) -> tuple[int, int]:
        if self.dictionary is not None:
            return self.dictionary.M, self.dictionary.K
        if self.state is not None:
            return self.state.M, self.state.K
        raise StateError("no dictionary or checkpoint loaded")

    def run_job(self, job: Job) -> None:
        try:
            M, K = self.bounds()
            comp = PartComposition.from_spec_string(job.request["composition"])
            comp.validate(M, K)
            seed = int(job.request.get("seed", 0))
            image_id = f"img-{job.id}"
            if self.settings.stub or self.state is None:
                image = render_for_composition(comp, seed)
                prov = {
                    "composition": comp.to_spec_string(),
                    "style_suffix": job.request.get("style_suffix"),
                    "seed": seed, "steps": 0, "guidance": 0.0,
                    "checkpoint_id": "stub-renderer",
                    "template": "stub",
                }
            else:
                request = GenerationRequest(
                    comp,
                    style_suffix=job.request.get("style_suffix"),
                    seed=seed,
                    steps=int(job.request.get("steps", DEFAULT_STEPS)),
                    guidance=float(job.request.get("guidance", DEFAULT_GUIDANCE)),
                )
                image, provenance = generate(request, self.state)
                prov = provenance.to_dict()
            Image.fromarray((np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)
                            ).save(self.store.image_path(image_id))
            self.provenance[image_id] = prov
            self._save_provenance()
            self.store.finish(job, result_ref=image_id)
        except Exception as exc:  # job errors must not kill the worker
            self.store.finish(job, error=str(exc))

    def process_next(self) -> bool:
        job = self.store.next_queued()
        if job is None:
            return False
        self.run_job(job)
        return True

    def start_worker(self) -> None:
        def loop():
            while not self._stop.is_set():
                if not self.process_next():
                    self._stop.wait(0.05)

        self._worker = threading.Thread(target=loop, daemon=True)
        self._worker.start()

    def stop_worker(self) -> None:
        self._stop.set()
        if self._worker is not None:
            self._worker.join(timeout=5)


def _thumbnail(context: ServiceContext, image_id: str) -> bytes | None:
    """Exemplar thumbnails: the part's mask bounding box upscaled to 128px."""
    parts = image_id.split("-")
    if len(parts) < 4 or parts[0] != "part":
        return None
    slot, variant = int(parts[1]), int(parts[2])
    source_id = "-".join(parts[3:])
    d = context.dictionary
    if d is None or source_id not in d.tags or context.settings.images_dir is None:
        return None
    src = Path(context.settings.images_dir) / f"{source_id}.png"
    if not src.exists():
        return None
    tag = d.tags[source_id]
    with Image.open(src) as im:
        im = im.convert("RGB")
        masks = tag.masks
        if masks is not None and masks.present[slot]:
            ys, xs = np.nonzero(masks.masks[slot])
            h_g, w_g = masks.grid_resolution
            x0 = int(xs.min() / w_g * im.width)
            x1 = int((xs.max() + 1) / w_g * im.width)
            y0 = int(ys.min() / h_g * im.height)
            y1 = int((ys.max() + 1) / h_g * im.height)
            im = im.crop((x0, y0, x1, y1))
        im = im.resize((128, 128), Image.NEAREST)
        buf = io.BytesIO()
        im.save(buf, format="PNG")
        return buf.getvalue()


def create_app(settings: ServiceSettings) -> FastAPI:
    store = JobStore(settings.state_dir)
    context = ServiceContext(settings, store)
    context.load()
    app = FastAPI(title="partkit service")
    app.state.context = context

    if settings.worker:
        @app.on_event("startup")
        def _start():
            context.start_worker()

        @app.on_event("shutdown")
        def _shutdown():
            context.stop_worker()

    @app.get("/api/health")
    def health():
        return {"status": "ok", "stub": settings.stub,
                "dictionary": settings.dictionary_path is not None}

    @app.get("/api/parts")
    def list_parts(slot: int | None = Query(default=None),
                   page: int = Query(default=0, ge=0),
                   page_size: int | None = Query(default=None, ge=1, le=500)):
        if context.dictionary is None:
            raise HTTPException(status_code=409, detail="no part dictionary loaded")
        d = context.dictionary
        page_size = page_size or settings.page_size
        slots = [slot] if slot is not None else list(range(d.M + 1))
        for s in slots:
            if not 0 <= s <= d.M:
                raise HTTPException(status_code=422,
                                    detail=f"slot {s} outside [0, {d.M}]")
        entries = []
        for s in slots:
            for variant in range(1, d.K + 1):
                exemplar_ids = d.exemplars(s, variant)
                entries.append({
                    "code": {"slot": s, "variant": variant},
                    "exemplar_image_ids": [f"part-{s}-{variant}-{i}"
                                           for i in exemplar_ids],
                    "label_hint": d.label_hints.get(f"{s}:{variant}"),
                })
        total = len(entries)
        start = page * page_size
        return {
            "schema_version": 1,
            "entries": entries[start:start + page_size],
            "page": page,
            "page_size": page_size,
            "total": total,
        }

    @app.post("/api/jobs", status_code=201)
    def submit_job(body: dict):
        if "composition" not in body:
            raise HTTPException(status_code=422, detail="composition is required")
        try:
            M, K = context.bounds()
        except StateError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        try:
            comp = PartComposition.from_spec_string(str(body["composition"]))
        except InputError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        offending = [str(c) for c in comp.codes
                     if c.slot > M or c.variant > K or c.variant < 0]
        if len(comp.codes) != M + 1 or offending:
            raise HTTPException(
                status_code=422,
                detail=f"invalid composition for M={M}, K={K}; "
                       f"offending codes: {offending or 'slot count'}")
        job = store.submit({
            "composition": comp.to_spec_string(),
            "style_suffix": body.get("style_suffix"),
            "seed": int(body.get("seed", 0)),
            "steps": int(body.get("steps", DEFAULT_STEPS)),
            "guidance": float(body.get("guidance", DEFAULT_GUIDANCE)),
        })
        return job.to_dict()

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        payload = job.to_dict()
        if job.result_ref:
            payload["provenance"] = context.provenance.get(job.result_ref)
        return payload

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        path = store.image_path(image_id)
        if path.exists():
            return Response(path.read_bytes(), media_type="image/png",
                            headers={"Cache-Control": "public, max-age=31536000, immutable"})
        thumb = _thumbnail(context, image_id)
        if thumb is not None:
            return Response(thumb, media_type="image/png",
                            headers={"Cache-Control": "public, max-age=31536000, immutable"})
        raise HTTPException(status_code=404, detail=f"unknown image {image_id}")

    if settings.ui_dir and Path(settings.ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=settings.ui_dir, html=True),
                  name="ui")

    return app
