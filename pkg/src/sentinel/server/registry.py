"""In-memory robot registry and bounded fan-out hubs.

Every stream subscriber gets its own fixed-capacity queue; a publisher never
waits, it drops the oldest queued item when a subscriber is full. One stalled
viewer therefore costs only its own frames, never the robot's ingest path or
the other viewers.
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, field


class Hub:
    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._queues: set[asyncio.Queue] = set()

    def subscribe(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=self.maxsize)
        self._queues.add(q)
        return q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        self._queues.discard(q)

    @property
    def subscriber_count(self) -> int:
        return len(self._queues)

    def publish(self, item) -> None:
        for q in self._queues:
            if q.full():
                try:
                    q.get_nowait()  # drop-oldest keeps the feed live, never blocks
                except asyncio.QueueEmpty:
                    pass
            try:
                q.put_nowait(item)
            except asyncio.QueueFull:
                pass


@dataclass
class RobotEntry:
    robot_id: str
    connected: bool = False
    mode: str = "Idle"
    last_status: dict | None = None
    connected_since: float | None = None
    faults: int = 0
    seen_seqs: set[int] = field(default_factory=set)
    writer: asyncio.StreamWriter | None = None
    session: object | None = None  # SessionKeys; owned by the session task

    def snapshot(self) -> dict:
        return {
            "robot_id": self.robot_id,
            "connected": self.connected,
            "mode": self.mode,
            "last_status": self.last_status,
            "connected_since": self.connected_since,
            "stream_link": f"/api/robots/{self.robot_id}/stream",
        }


class Registry:
    """Connection state for every robot this server has ever seen."""

    def __init__(self):
        self.robots: dict[str, RobotEntry] = {}
        self._stream_hubs: dict[str, Hub] = {}
        self._notify_subs: dict[asyncio.Queue, str] = {}  # queue -> username

    def entry(self, robot_id: str) -> RobotEntry:
        if robot_id not in self.robots:
            self.robots[robot_id] = RobotEntry(robot_id=robot_id)
        return self.robots[robot_id]

    def get(self, robot_id: str) -> RobotEntry | None:
        return self.robots.get(robot_id)

    def attach_session(self, robot_id: str, writer: asyncio.StreamWriter, session) -> RobotEntry:
        entry = self.entry(robot_id)
        if entry.writer is not None and entry.writer is not writer:
            entry.writer.close()  # newer handshake evicts the stale session
        entry.writer = writer
        entry.session = session
        entry.connected = True
        entry.connected_since = time.time()
        entry.faults = 0
        return entry

    def detach_session(self, robot_id: str, writer: asyncio.StreamWriter) -> None:
        entry = self.robots.get(robot_id)
        if entry is None or entry.writer is not writer:
            return  # a newer session already took over
        entry.writer = None
        entry.session = None
        entry.connected = False

    def stream_hub(self, robot_id: str) -> Hub:
        if robot_id not in self._stream_hubs:
            self._stream_hubs[robot_id] = Hub()
        return self._stream_hubs[robot_id]

    # -- operator notifications ---------------------------------------------

    def subscribe_notifications(self, username: str, maxsize: int = 256) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=maxsize)
        self._notify_subs[q] = username
        return q

    def unsubscribe_notifications(self, q: asyncio.Queue) -> None:
        self._notify_subs.pop(q, None)

    def notify_all(self, message: dict) -> None:
        for q in self._notify_subs:
            if q.full():
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            try:
                q.put_nowait(message)
            except asyncio.QueueFull:
                pass

    def notify_user(self, username: str, message: dict) -> None:
        delivered = False
        for q, user in self._notify_subs.items():
            if user != username:
                continue
            if q.full():
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            try:
                q.put_nowait(message)
                delivered = True
            except asyncio.QueueFull:
                pass
        if not delivered:
            # Caller is not listening right now; let everyone else see the
            # outcome rather than dropping it silently.
            self.notify_all(message)
