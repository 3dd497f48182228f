"""Local HTTP service hosting annotation sessions for the browser UI.

JSON over HTTP, images as PNG bytes. Each session's mutations are serialized
behind a per-session lock; sessions persist to disk on clean shutdown (mask
ids plus a JSON sidecar; the in-memory undo stack is an editing affordance
and is deliberately dropped).
"""

from __future__ import annotations

import io
import json
import threading
import uuid
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field
from PIL import Image

from .annotate import (
    AnnotationSession,
    InstanceMask,
    Stroke,
    boxes_to_jsonl,
    extract_boxes,
    load_mask_ids,
    save_mask_ids,
)
from .config import PipelineConfig
from .core import (
    ConflictError,
    CoordinateError,
    HsvColor,
    NotFoundError,
    RasterImage,
    StateError,
    ToolkitError,
    encode_png16,
    read_image,
)


class SessionEntry:
    def __init__(self, session: AnnotationSession, image_name: str):
        self.session = session
        self.image_name = image_name
        self.lock = threading.Lock()


class SessionStore:
    """Session registry with per-session mutual exclusion and disk persistence."""

    def __init__(self, image_root: Path, state_dir: Path, config: PipelineConfig):
        self.image_root = image_root
        self.state_dir = state_dir
        self.config = config
        self._sessions: dict[str, SessionEntry] = {}
        self._registry_lock = threading.Lock()

    def _image_path(self, name: str) -> Path:
        candidate = (self.image_root / name).resolve()
        if self.image_root.resolve() not in candidate.parents and candidate != self.image_root.resolve():
            raise NotFoundError(f"image {name!r} is outside the image root")
        if not candidate.is_file():
            raise NotFoundError(f"no image named {name!r}")
        return candidate

    def list_images(self) -> list[str]:
        return sorted(p.name for p in self.image_root.glob("*.png"))

    def create(self, image_name: str) -> tuple[str, SessionEntry]:
        image = read_image(self._image_path(image_name))
        session = AnnotationSession(
            image,
            fill_tolerance=self.config.fill_tolerance,
            road_margin=self.config.road_margin,
        )
        session_id = uuid.uuid4().hex
        entry = SessionEntry(session, image_name)
        with self._registry_lock:
            self._sessions[session_id] = entry
        return session_id, entry

    def get(self, session_id: str) -> SessionEntry:
        with self._registry_lock:
            entry = self._sessions.get(session_id)
        if entry is None:
            raise NotFoundError(f"no session {session_id!r}")
        return entry

    def items(self) -> list[tuple[str, SessionEntry]]:
        with self._registry_lock:
            return list(self._sessions.items())

    # -- persistence ---------------------------------------------------------

    def save_all(self) -> None:
        self.state_dir.mkdir(parents=True, exist_ok=True)
        for session_id, entry in self.items():
            with entry.lock:
                session = entry.session
                save_mask_ids(session.mask, self.state_dir / f"{session_id}.png")
                sidecar = {
                    "image": entry.image_name,
                    "next_id": session.mask.next_id,
                    "fill_tolerance": session.fill_tolerance,
                    "road_margin": session.road_margin,
                    "road_color": (
                        None
                        if session.road_color is None
                        else {
                            "h": session.road_color.h,
                            "s": session.road_color.s,
                            "v": session.road_color.v,
                        }
                    ),
                }
                (self.state_dir / f"{session_id}.json").write_text(
                    json.dumps(sidecar, indent=2) + "\n"
                )

    def load_all(self) -> int:
        if not self.state_dir.is_dir():
            return 0
        restored = 0
        for sidecar_path in sorted(self.state_dir.glob("*.json")):
            session_id = sidecar_path.stem
            mask_path = self.state_dir / f"{session_id}.png"
            if not mask_path.is_file():
                continue
            sidecar = json.loads(sidecar_path.read_text())
            image = read_image(self._image_path(sidecar["image"]))
            mask = load_mask_ids(mask_path)
            mask.next_id = int(sidecar["next_id"])
            road = sidecar.get("road_color")
            session = AnnotationSession(
                image,
                mask=mask,
                fill_tolerance=float(sidecar["fill_tolerance"]),
                road_margin=float(sidecar["road_margin"]),
                road_color=None if road is None else HsvColor(road["h"], road["s"], road["v"]),
            )
            with self._registry_lock:
                self._sessions[session_id] = SessionEntry(session, sidecar["image"])
            restored += 1
        return restored


class CreateSessionBody(BaseModel):
    image: str


class PointBody(BaseModel):
    x: int
    y: int


class StrokeBody(BaseModel):
    kind: str
    points: list[tuple[int, int]] = Field(min_length=1)
    radius: int = 0


class SessionConfigBody(BaseModel):
    fill_tolerance: Optional[float] = None
    road_margin: Optional[float] = None


def _png_bytes(image: RasterImage) -> bytes:
    buf = io.BytesIO()
    arr = image.data
    if image.channels == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(buf, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB" if image.channels == 3 else "RGBA").save(buf, format="PNG")
    return buf.getvalue()


def _ids_png_bytes(mask: InstanceMask) -> bytes:
    return encode_png16(mask.to_id_array())


def create_app(
    image_root: str | Path,
    config: PipelineConfig | None = None,
    state_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    image_root = Path(image_root)
    if not image_root.is_dir():
        raise ToolkitError(f"image root {image_root} is not a readable directory")
    config = config or PipelineConfig()
    state_dir = Path(state_dir) if state_dir is not None else image_root / ".sessions"
    store = SessionStore(image_root, state_dir, config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        store.load_all()
        yield
        store.save_all()

    app = FastAPI(title="satcount annotation service", lifespan=lifespan)
    app.state.store = store

    @app.exception_handler(ToolkitError)
    async def _domain_error(request: Request, exc: ToolkitError):
        status = 400
        if isinstance(exc, NotFoundError):
            status = 404
        elif isinstance(exc, (StateError, ConflictError)):
            status = 409
        elif isinstance(exc, CoordinateError):
            status = 400
        return JSONResponse({"error": str(exc)}, status_code=status)

    @app.exception_handler(ValueError)
    async def _argument_error(request: Request, exc: ValueError):
        return JSONResponse({"error": str(exc)}, status_code=400)

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz():
        return "ok"

    @app.get("/images")
    def list_images():
        return {"images": store.list_images()}

    @app.get("/sessions")
    def list_sessions():
        return {
            "sessions": [
                {
                    "session_id": sid,
                    "image": entry.image_name,
                    "width": entry.session.image.width,
                    "height": entry.session.image.height,
                }
                for sid, entry in store.items()
            ]
        }

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        session_id, entry = store.create(body.image)
        return {
            "session_id": session_id,
            "width": entry.session.image.width,
            "height": entry.session.image.height,
        }

    @app.get("/sessions/{session_id}/image")
    def get_image(session_id: str):
        entry = store.get(session_id)
        return Response(_png_bytes(entry.session.image), media_type="image/png")

    @app.get("/sessions/{session_id}/mask")
    def get_mask(session_id: str, format: str = "palette"):
        entry = store.get(session_id)
        with entry.lock:
            if format == "ids":
                payload = _ids_png_bytes(entry.session.mask)
            elif format == "palette":
                payload = _png_bytes(entry.session.mask.to_palette_image())
            else:
                raise ValueError(f"unknown mask format {format!r}")
        return Response(payload, media_type="image/png")

    @app.post("/sessions/{session_id}/road-color")
    def set_road_color(session_id: str, body: PointBody):
        entry = store.get(session_id)
        with entry.lock:
            color = entry.session.set_road_color(body.x, body.y)
        return {"h": color.h, "s": color.s, "v": color.v}

    @app.post("/sessions/{session_id}/floodfill")
    def floodfill(session_id: str, body: PointBody):
        entry = store.get(session_id)
        with entry.lock:
            region = entry.session.flood_fill(body.x, body.y)
        bounds = region.bounds
        return {
            "instance_id": region.instance_id,
            "pixel_count": region.pixel_count,
            "bounds": [bounds.x_min, bounds.y_min, bounds.x_max, bounds.y_max],
        }

    @app.post("/sessions/{session_id}/stroke")
    def stroke(session_id: str, body: StrokeBody):
        entry = store.get(session_id)
        with entry.lock:
            region = entry.session.apply_stroke(
                Stroke(kind=body.kind, points=tuple(body.points), brush_radius=body.radius)
            )
        return {"instance_id": region.instance_id, "pixel_count": region.pixel_count}

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        entry = store.get(session_id)
        with entry.lock:
            return {"reverted": entry.session.undo()}

    @app.delete("/sessions/{session_id}/instances/{instance_id}")
    def erase(session_id: str, instance_id: int):
        entry = store.get(session_id)
        with entry.lock:
            return {"cleared": entry.session.erase_instance(instance_id)}

    @app.get("/sessions/{session_id}/boxes", response_class=PlainTextResponse)
    def boxes(session_id: str):
        entry = store.get(session_id)
        with entry.lock:
            text = boxes_to_jsonl(extract_boxes(entry.session.mask))
        return PlainTextResponse(text, media_type="application/x-ndjson")

    @app.post("/sessions/{session_id}/config")
    def set_config(session_id: str, body: SessionConfigBody):
        entry = store.get(session_id)
        with entry.lock:
            entry.session.set_tolerances(body.fill_tolerance, body.road_margin)
            return {
                "fill_tolerance": entry.session.fill_tolerance,
                "road_margin": entry.session.road_margin,
            }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
