"""Operator-facing HTTP and WebSocket API.

All routes except register/login require a bearer token. Stream sockets push
binary frame messages straight from the fan-out hub; the notifications
socket pushes JSON event records and command results.
"""

from __future__ import annotations

import asyncio
import logging
import uuid

from fastapi import Depends, FastAPI, HTTPException, Query, Request, Response, WebSocket
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.websockets import WebSocketDisconnect

from sentinel import wire
from sentinel.server.registry import Registry
from sentinel.server.robotlink import RobotLink
from sentinel.server.stores import (
    BadCredentials,
    ClipStore,
    DuplicateUser,
    EventStore,
    TokenStore,
    UserStore,
    WeakPassword,
)

log = logging.getLogger(__name__)


def build_api(
    registry: Registry,
    users: UserStore,
    tokens: TokenStore,
    events: EventStore,
    clips: ClipStore,
    link: RobotLink,
    static_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="sentinel control server", docs_url=None, redoc_url=None)

    def _username_for(request: Request) -> str:
        auth = request.headers.get("authorization", "")
        token = auth[7:] if auth.lower().startswith("bearer ") else None
        username = tokens.check(token)
        if username is None:
            raise HTTPException(status_code=401, detail="missing or invalid token")
        return username

    async def _ws_username(ws: WebSocket) -> str | None:
        auth = ws.headers.get("authorization", "")
        token = auth[7:] if auth.lower().startswith("bearer ") else None
        if token is None:
            token = ws.query_params.get("token")
        return tokens.check(token)

    @app.post("/api/register", status_code=201)
    async def register(body: dict):
        username = body.get("username")
        password = body.get("password")
        if not isinstance(username, str) or not isinstance(password, str):
            raise HTTPException(status_code=400, detail="username and password required")
        try:
            return users.register(username, password)
        except DuplicateUser as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (WeakPassword, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/api/login")
    async def login(body: dict):
        username = body.get("username")
        password = body.get("password")
        if not isinstance(username, str) or not isinstance(password, str):
            raise HTTPException(status_code=400, detail="username and password required")
        if not users.verify(username, password):
            raise HTTPException(status_code=401, detail="bad credentials")
        token, expires = tokens.issue(username)
        return {"token": token, "expires_at": expires}

    @app.get("/api/robots")
    async def list_robots(username: str = Depends(_username_for)):
        return {"robots": [entry.snapshot() for entry in registry.robots.values()]}

    @app.post("/api/robots/{robot_id}/commands", status_code=202)
    async def send_command(robot_id: str, body: dict, username: str = Depends(_username_for)):
        entry = registry.get(robot_id)
        if entry is None:
            raise HTTPException(status_code=404, detail="unknown robot")
        if not entry.connected:
            # Steering a robot that is not there is refused outright: queueing
            # stale motion commands for later execution would be dangerous.
            raise HTTPException(status_code=409, detail="robot offline")
        doc = dict(body)
        doc.setdefault("command_id", uuid.uuid4().hex)
        try:
            cmd = wire.command_from_dict(doc)
        except wire.WireError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        link.register_command(cmd.command_id, username)
        if not link.send_command(robot_id, wire.encode_command(cmd)):
            raise HTTPException(status_code=409, detail="robot offline")
        return {"command_id": cmd.command_id, "robot_id": robot_id}

    @app.get("/api/events")
    async def get_events(
        kind: str | None = Query(default=None),
        robot: str | None = Query(default=None),
        page: int = Query(default=0, ge=0),
        page_size: int = Query(default=50, ge=1, le=500),
        username: str = Depends(_username_for),
    ):
        if kind is not None and kind not in ("Motion", "Fire"):
            raise HTTPException(status_code=400, detail="kind must be Motion or Fire")
        records, total = events.query(kind=kind, robot_id=robot, page=page, page_size=page_size)
        return {
            "events": [r.to_json() for r in records],
            "page": page,
            "page_size": page_size,
            "total": total,
        }

    @app.get("/api/clips/{clip_id}")
    async def get_clip(clip_id: str, username: str = Depends(_username_for)):
        data = clips.get(clip_id)
        if data is None:
            raise HTTPException(status_code=404, detail="unknown clip")
        return Response(content=data, media_type="application/octet-stream")

    @app.websocket("/api/robots/{robot_id}/stream")
    async def stream(ws: WebSocket, robot_id: str):
        username = await _ws_username(ws)
        if username is None:
            await ws.close(code=4401)
            return
        if registry.get(robot_id) is None:
            await ws.close(code=4404)
            return
        await ws.accept()
        hub = registry.stream_hub(robot_id)
        queue = hub.subscribe()
        try:
            while True:
                payload: bytes = await queue.get()
                await ws.send_bytes(payload)
        except (WebSocketDisconnect, ConnectionError, RuntimeError):
            pass
        finally:
            hub.unsubscribe(queue)

    @app.websocket("/api/notifications")
    async def notifications(ws: WebSocket):
        username = await _ws_username(ws)
        if username is None:
            await ws.close(code=4401)
            return
        await ws.accept()
        queue = registry.subscribe_notifications(username)
        try:
            while True:
                message = await queue.get()
                await ws.send_json(message)
        except (WebSocketDisconnect, ConnectionError, RuntimeError):
            pass
        finally:
            registry.unsubscribe_notifications(queue)

    @app.exception_handler(Exception)
    async def on_error(request, exc):
        log.exception("unhandled API error: %s", exc)
        return JSONResponse(status_code=500, content={"detail": "internal error"})

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
