"""Composition root: one process, one event loop, both listeners."""

from __future__ import annotations

import asyncio
import logging
import socket
from dataclasses import dataclass, field
from pathlib import Path

import uvicorn

from sentinel.secure import StaticIdentity, peer_id_for_public
from sentinel.server.api import build_api
from sentinel.server.registry import Registry
from sentinel.server.robotlink import RobotLink
from sentinel.server.stores import ClipStore, EventStore, TokenStore, UserStore

log = logging.getLogger(__name__)


@dataclass
class ServerConfig:
    robot_host: str = "0.0.0.0"
    robot_port: int = 7700
    http_host: str = "0.0.0.0"
    http_port: int = 8080
    data_dir: Path = field(default_factory=lambda: Path("sentinel-data"))
    token_ttl_seconds: float = 24 * 3600
    static_dir: str | None = None


class ControlServer:
    """Owns the robot listener, the HTTP/WS API, and all stores."""

    def __init__(self, config: ServerConfig, identity: StaticIdentity, allowlist: list[bytes]):
        self.config = config
        self.identity = identity
        self.allowlist = {peer_id_for_public(pub): pub for pub in allowlist}
        data = Path(config.data_dir)
        data.mkdir(parents=True, exist_ok=True)
        self.registry = Registry()
        self.users = UserStore(data / "users.jsonl")
        self.tokens = TokenStore(ttl_seconds=config.token_ttl_seconds)
        self.events = EventStore(data / "events.jsonl")
        self.clips = ClipStore(data / "clips")
        self.link = RobotLink(self.registry, self.events, self.clips, identity, self.allowlist)
        self.api = build_api(
            self.registry,
            self.users,
            self.tokens,
            self.events,
            self.clips,
            self.link,
            static_dir=config.static_dir,
        )
        self._http_server: uvicorn.Server | None = None
        self._http_task: asyncio.Task | None = None
        self._http_port: int | None = None

    @property
    def robot_port(self) -> int:
        return self.link.port

    @property
    def http_port(self) -> int:
        return self._http_port

    async def start(self) -> None:
        await self.link.serve(self.config.robot_host, self.config.robot_port)

        sock = socket.create_server(
            (self.config.http_host, self.config.http_port), reuse_port=False
        )
        self._http_port = sock.getsockname()[1]
        uv_config = uvicorn.Config(
            self.api,
            log_level="warning",
            loop="asyncio",
            lifespan="on",
            access_log=False,
            ws="websockets",
        )
        self._http_server = uvicorn.Server(uv_config)
        self._http_task = asyncio.create_task(self._http_server.serve(sockets=[sock]))
        while not self._http_server.started:
            if self._http_task.done():
                self._http_task.result()  # surface bind/startup errors
                raise RuntimeError("HTTP server exited during startup")
            await asyncio.sleep(0.01)
        log.info(
            "control server up: robots on %s:%d, http on %s:%d",
            self.config.robot_host,
            self.robot_port,
            self.config.http_host,
            self.http_port,
        )

    async def stop(self) -> None:
        await self.link.close()
        if self._http_server is not None:
            self._http_server.should_exit = True
        if self._http_task is not None:
            try:
                await asyncio.wait_for(self._http_task, timeout=5)
            except asyncio.TimeoutError:
                self._http_task.cancel()

    async def serve_forever(self) -> None:
        await self.start()
        try:
            while True:
                await asyncio.sleep(3600)
        finally:
            await self.stop()
