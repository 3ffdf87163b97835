"""HTTP service: live frame streaming plus calibration-session commands.

Endpoints (all under /v1, newline-delimited JSON for the stream):

  GET  /v1/layout              active layout document
  GET  /v1/frames              NDJSON stream of published frames
                               (?limit=N to stop after N, ?timeout_s=T
                               to give up waiting between frames)
  POST /v1/session             {"session_id", "cmd", "args"} -> state
  GET  /v1/session/{id}        session state
  POST /v1/transfer/apply      {"map": doc} remaps viewer frames
                               ({"clear": true} to stop); 409 on gaps
  GET  /v1/report/{id}         fit-quality report for a session

Streamed frames are latest-wins (a slow client drops the oldest queued
frames), while the hub's recorder keeps everything.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse, StreamingResponse

from .calibrate import TransferMap
from .core import TaxelLayout
from .errors import CoverageGapError, IllegalTransitionError
from .hub import FrameHub
from .session import SessionManager


def create_app(
    hub: FrameHub,
    layout: TaxelLayout,
    sessions: SessionManager,
    dashboard_html: str | None = None,
) -> FastAPI:
    app = FastAPI(title="capskin service", version="1")

    @app.get("/v1/layout")
    def get_layout():
        return layout.to_doc()

    @app.get("/v1/frames")
    def stream_frames(limit: int | None = None, timeout_s: float = 2.0):
        viewer = hub.open_viewer()

        def generate():
            sent = 0
            try:
                while limit is None or sent < limit:
                    frame = viewer.next_frame(timeout=timeout_s)
                    if frame is None:
                        break
                    yield json.dumps(frame.to_doc()) + "\n"
                    sent += 1
            finally:
                hub.close_viewer(viewer)

        return StreamingResponse(generate(), media_type="application/x-ndjson")

    @app.post("/v1/session")
    def session_command(body: dict):
        session_id = body.get("session_id")
        cmd = body.get("cmd")
        if not session_id or not cmd:
            raise HTTPException(status_code=422, detail="session_id and cmd required")
        session = sessions.get_or_create(session_id)
        try:
            state = session.command(cmd, body.get("args") or {})
        except IllegalTransitionError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return state.to_doc()

    @app.get("/v1/session/{session_id}")
    def session_state(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return session.state.to_doc()

    @app.post("/v1/transfer/apply")
    def transfer_apply(body: dict):
        if body.get("clear"):
            hub.clear_transfer()
            return {"applied": False}
        if "map" not in body:
            raise HTTPException(status_code=422, detail="map document required")
        transfer = TransferMap.from_doc(body["map"])
        try:
            hub.apply_transfer(transfer, taxel_count=layout.taxel_count)
        except CoverageGapError as exc:
            raise HTTPException(
                status_code=409, detail={"missing_taxels": exc.missing}
            ) from exc
        return {"applied": True}

    @app.get("/v1/report/{session_id}")
    def report(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return session.report_doc()

    if dashboard_html is not None:

        @app.get("/", response_class=HTMLResponse)
        def index():
            return dashboard_html

    return app
