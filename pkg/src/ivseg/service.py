"""HTTP service exposing interactive sessions to the browser UI and scripts.

One model checkpoint is shared read-only across sessions; every completed
round is persisted as a snapshot directory so responses survive restarts
byte-identically.
"""
from __future__ import annotations

import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, File, Form, HTTPException, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from .masks import Frame, frame_from_png
from .nets import IPNModel, load_checkpoint
from .scribbles import ScribbleSet
from .session import Session, load_snapshot, plan_propagation, run_round, save_snapshot, start_session

IDLE = "idle"
RUNNING = "running_round"
ERROR = "error"


class SessionRecord:
    def __init__(self, session_id: str, directory: Path, session: Session | None = None):
        self.session_id = session_id
        self.directory = directory
        self._session = session
        self.state = IDLE
        self.error: str | None = None
        self.lock = threading.Lock()

    @property
    def session(self) -> Session:
        if self._session is None:
            self._session = load_snapshot(self.directory)
        return self._session


class SessionStore:
    """Disk-backed registry of sessions; snapshots are the source of truth."""

    def __init__(self, data_dir: Path):
        self.data_dir = data_dir
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._records: dict[str, SessionRecord] = {}
        self._registry_lock = threading.Lock()
        for child in sorted(self.data_dir.iterdir()):
            if (child / "session.json").exists():
                self._records[child.name] = SessionRecord(child.name, child)

    def create(self, frames: list[Frame], num_objects: int) -> SessionRecord:
        session = start_session(frames, num_objects)
        session_id = uuid.uuid4().hex[:12]
        directory = self.data_dir / session_id
        save_snapshot(session, directory)
        record = SessionRecord(session_id, directory, session)
        with self._registry_lock:
            self._records[session_id] = record
        return record

    def get(self, session_id: str) -> SessionRecord:
        record = self._records.get(session_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return record


def _read_frames_dir(path: Path) -> list[Frame]:
    frames_dir = path / "frames" if (path / "frames").is_dir() else path
    files = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise HTTPException(status_code=404, detail=f"no PNG frames under {path}")
    return [frame_from_png(p.read_bytes(), i) for i, p in enumerate(files)]


def create_app(
    model: IPNModel,
    data_dir: str | Path,
    checkpoint_id: str = "in-memory",
    async_rounds: bool = False,
    brush_radius_px: int = 2,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="ivseg service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    store = SessionStore(Path(data_dir))
    app.state.store = store
    app.state.model = model
    app.state.checkpoint_id = checkpoint_id

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "checkpoint": checkpoint_id}

    @app.post("/sessions")
    async def create_session(
        request: Request,
        frames: list[UploadFile] = File(default=[]),
        num_objects: int = Form(default=1),
    ):
        if request.headers.get("content-type", "").startswith("application/json"):
            body = await request.json()
            num_objects = int(body.get("num_objects", 1))
            dataset_path = body.get("dataset_path")
            if not dataset_path:
                raise HTTPException(status_code=400, detail="dataset_path required in JSON mode")
            path = Path(dataset_path)
            if not path.exists():
                raise HTTPException(status_code=404, detail=f"dataset path {dataset_path} not found")
            frame_list = _read_frames_dir(path)
        else:
            if not frames:
                raise HTTPException(status_code=400, detail="no frames uploaded")
            frame_list = []
            for i, upload in enumerate(frames):
                data = await upload.read()
                try:
                    frame_list.append(frame_from_png(data, i))
                except Exception as exc:
                    raise HTTPException(status_code=422, detail=f"frame {i}: {exc}") from exc
        if num_objects < 1:
            raise HTTPException(status_code=422, detail="num_objects must be >= 1")
        shape = frame_list[0].shape
        for f in frame_list:
            if f.shape != shape:
                raise HTTPException(
                    status_code=422,
                    detail=f"inconsistent frame sizes: {shape} vs {f.shape} at index {f.index}",
                )
        record = store.create(frame_list, num_objects)
        return JSONResponse(
            status_code=201,
            content={
                "session_id": record.session_id,
                "state": record.state,
                "num_frames": len(frame_list),
                "num_objects": num_objects,
            },
        )

    @app.get("/sessions/{session_id}")
    def get_status(session_id: str):
        record = store.get(session_id)
        session = record.session
        return {
            "state": record.state,
            "round": session.round,
            "T": session.num_frames,
            "M": session.num_objects,
            "annotation_history": [[r, t] for (r, t, _) in session.annotation_history],
            "error": record.error,
        }

    def _execute_round(record: SessionRecord, scribbles: ScribbleSet):
        try:
            run_round(record.session, scribbles, model, brush_radius_px=brush_radius_px)
            save_snapshot(record.session, record.directory)
            record.state = IDLE
        except Exception as exc:  # surfaced via get_status
            record.error = str(exc)
            record.state = ERROR

    @app.post("/sessions/{session_id}/scribbles")
    async def submit_scribbles(session_id: str, request: Request):
        record = store.get(session_id)
        try:
            scribbles = ScribbleSet.from_json(await request.body())
        except Exception as exc:
            raise HTTPException(status_code=422, detail=f"bad scribble payload: {exc}") from exc
        with record.lock:
            if record.state == RUNNING:
                raise HTTPException(status_code=409, detail="a round is already running")
            session = record.session
            if not 0 <= scribbles.frame_index < session.num_frames:
                raise HTTPException(
                    status_code=422,
                    detail=f"frame {scribbles.frame_index} outside [0, {session.num_frames})",
                )
            for oid in scribbles.object_ids():
                if not 1 <= oid <= session.num_objects:
                    raise HTTPException(
                        status_code=422,
                        detail=f"object {oid} outside 1..{session.num_objects}",
                    )
            if len(scribbles) == 0:
                raise HTTPException(status_code=422, detail="scribble set is empty")
            record.state = RUNNING
            record.error = None
        plan = plan_propagation(
            scribbles.frame_index, session.history_frames(), session.num_frames
        )
        changed = sorted([scribbles.frame_index, *plan.forward_range, *plan.backward_range])
        if async_rounds:
            threading.Thread(target=_execute_round, args=(record, scribbles), daemon=True).start()
            return {"round": session.round + 1, "changed_frames": changed, "state": RUNNING}
        _execute_round(record, scribbles)
        if record.state == ERROR:
            raise HTTPException(status_code=500, detail=record.error)
        return {
            "round": record.session.round,
            "changed_frames": changed,
            "per_frame_available": True,
            "state": record.state,
        }

    @app.get("/sessions/{session_id}/rounds/{round_index}/frames/{frame_index}/mask.png")
    def get_mask(session_id: str, round_index: int, frame_index: int):
        record = store.get(session_id)
        session = record.session
        if not 0 <= round_index <= session.round:
            raise HTTPException(status_code=404, detail=f"round {round_index} not completed")
        if not 0 <= frame_index < session.num_frames:
            raise HTTPException(status_code=404, detail=f"frame {frame_index} out of range")
        path = record.directory / "masks" / f"round_{round_index:03d}" / f"frame_{frame_index:05d}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail="mask not found on disk")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/sessions/{session_id}/rounds/{round_index}/frames/{frame_index}/prob_{object_id}.png")
    def get_prob(session_id: str, round_index: int, frame_index: int, object_id: int):
        record = store.get(session_id)
        session = record.session
        if not 0 <= round_index <= session.round:
            raise HTTPException(status_code=404, detail=f"round {round_index} not completed")
        if not (0 <= frame_index < session.num_frames and 1 <= object_id <= session.num_objects):
            raise HTTPException(status_code=404, detail="frame or object out of range")
        path = (
            record.directory / "probs" / f"round_{round_index:03d}"
            / f"obj_{object_id:02d}_frame_{frame_index:05d}.png"
        )
        if not path.exists():
            raise HTTPException(status_code=404, detail="probability mask not found")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/sessions/{session_id}/frames/{frame_index}.png")
    def get_frame(session_id: str, frame_index: int):
        record = store.get(session_id)
        if not 0 <= frame_index < record.session.num_frames:
            raise HTTPException(status_code=404, detail=f"frame {frame_index} out of range")
        path = record.directory / "frames" / f"frame_{frame_index:05d}.png"
        return Response(content=path.read_bytes(), media_type="image/png")

    return app


def app_from_checkpoint(ckpt_path: str | Path, data_dir: str | Path, **kw) -> FastAPI:
    model, _ = load_checkpoint(ckpt_path)
    return create_app(model, data_dir, checkpoint_id=str(ckpt_path), **kw)
