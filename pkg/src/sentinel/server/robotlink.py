"""Robot-facing TCP listener: handshakes, ingest, acknowledgements.

One asyncio task per robot connection owns that session's keys for both
sealing and opening; HTTP handlers hand outbound commands to the same event
loop, so session state is never touched concurrently. Ingest never blocks on
subscribers: frame fan-out uses drop-oldest queues and event persistence is
plain local file appends.
"""

from __future__ import annotations

import asyncio
import logging
import time
from collections import OrderedDict, deque

from sentinel import wire
from sentinel.secure import (
    CLASS_SIGNED,
    MSG_ACK,
    MSG_CLIP_UPLOAD,
    MSG_COMMAND,
    MSG_ERROR,
    MSG_FIRE_ALERT,
    MSG_FRAME,
    MSG_MOTION_EVENT,
    MSG_STATUS,
    ChannelError,
    StaticIdentity,
    open_envelope,
    seal,
)
from sentinel.secure.handshake import HandshakeError, handshake_respond, read_envelope_frame
from sentinel.server.registry import Registry
from sentinel.server.stores import ClipStore, EventStore

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_FAULTS = 10
_PENDING_COMMANDS_MAX = 4096


class RobotLink:
    def __init__(
        self,
        registry: Registry,
        events: EventStore,
        clips: ClipStore,
        identity: StaticIdentity,
        allowlist: dict[bytes, bytes],
    ):
        self.registry = registry
        self.events = events
        self.clips = clips
        self.identity = identity
        self.allowlist = allowlist
        self._server: asyncio.Server | None = None
        # command_id -> username, for routing ACK/ERROR results back.
        self._command_owners: OrderedDict[str, str] = OrderedDict()
        # Ingest handling latency samples (seconds), newest last.
        self.ingest_latencies: deque[float] = deque(maxlen=20000)

    async def serve(self, host: str, port: int) -> None:
        self._server = await asyncio.start_server(self._handle_connection, host, port)

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    def register_command(self, command_id: str, username: str) -> None:
        self._command_owners[command_id] = username
        while len(self._command_owners) > _PENDING_COMMANDS_MAX:
            self._command_owners.popitem(last=False)

    def send_command(self, robot_id: str, payload: bytes) -> bool:
        """Seal a COMMAND onto the robot's live session; False when offline."""
        entry = self.registry.get(robot_id)
        if entry is None or not entry.connected or entry.writer is None or entry.session is None:
            return False
        try:
            entry.writer.write(seal(payload, MSG_COMMAND, CLASS_SIGNED, entry.session, self.identity))
            return True
        except (ChannelError, ConnectionError, RuntimeError) as exc:
            log.warning("command send to %s failed: %s", robot_id, exc)
            return False

    def _send_ack(self, entry, seq: int) -> None:
        if entry.writer is None or entry.session is None:
            return
        try:
            entry.writer.write(
                seal(wire.encode_json_payload({"seq": seq}), MSG_ACK, CLASS_SIGNED, entry.session, self.identity)
            )
        except (ChannelError, ConnectionError, RuntimeError) as exc:
            log.warning("ack to %s failed: %s", entry.robot_id, exc)

    async def _handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        try:
            robot_id_bytes, session = await handshake_respond(reader, writer, self.identity, self.allowlist)
        except (HandshakeError, ChannelError, ConnectionError, OSError, asyncio.TimeoutError) as exc:
            log.warning("handshake from %s failed: %s", peer, exc)
            writer.close()
            return
        robot_id = robot_id_bytes.hex()
        entry = self.registry.attach_session(robot_id, writer, session)
        entry.seen_seqs |= self.events.seqs_for(robot_id)
        log.info("robot %s connected from %s", robot_id, peer)
        trusted = {robot_id_bytes: session.peer_static_public}
        try:
            while True:
                frame = await read_envelope_frame(reader)
                started = time.perf_counter()
                try:
                    msg_type, payload = open_envelope(frame, session, trusted)
                except ChannelError as exc:
                    entry.faults += 1
                    log.warning("envelope from %s rejected (%d/%d): %s",
                                robot_id, entry.faults, MAX_CONSECUTIVE_FAULTS, exc)
                    if entry.faults >= MAX_CONSECUTIVE_FAULTS:
                        log.warning("closing session for %s after repeated faults", robot_id)
                        break
                    continue
                entry.faults = 0
                try:
                    self._ingest(entry, msg_type, payload)
                except wire.WireError as exc:
                    log.warning("unusable %s payload from %s: %s", hex(msg_type), robot_id, exc)
                self.ingest_latencies.append(time.perf_counter() - started)
        except (asyncio.IncompleteReadError, ConnectionError, ChannelError, OSError):
            pass
        finally:
            self.registry.detach_session(robot_id, writer)
            writer.close()
            log.info("robot %s disconnected", robot_id)

    def _ingest(self, entry, msg_type: int, payload: bytes) -> None:
        robot_id = entry.robot_id
        if msg_type == MSG_FRAME:
            # Hot path: no persistence, no waiting; absent subscribers cost nothing.
            self.registry.stream_hub(robot_id).publish(payload)
            return

        if msg_type == MSG_STATUS:
            doc = wire.decode_json_payload(payload, what="status")
            seq = doc.get("seq")
            entry.last_status = {k: v for k, v in doc.items() if k != "seq"}
            entry.mode = doc.get("mode", entry.mode)
            if isinstance(seq, int):
                entry.seen_seqs.add(seq)
                self._send_ack(entry, seq)
            return

        if msg_type in (MSG_FIRE_ALERT, MSG_MOTION_EVENT):
            doc = wire.decode_json_payload(payload, what="event")
            seq = doc.get("seq")
            if not isinstance(seq, int):
                raise wire.WireError("event payload missing seq")
            if seq not in entry.seen_seqs and not self.events.seen(robot_id, seq):
                kind = "Fire" if msg_type == MSG_FIRE_ALERT else "Motion"
                details = {k: v for k, v in doc.items() if k not in ("seq", "kind")}
                record = self.events.add(robot_id, kind, seq, details)
                self.registry.notify_all({"type": "event", "event": record.to_json()})
            entry.seen_seqs.add(seq)
            self._send_ack(entry, seq)  # persisted and pushed before the ack
            return

        if msg_type == MSG_CLIP_UPLOAD:
            meta, svc1 = wire.decode_clip_upload(payload)
            seq = meta["seq"]
            if seq not in entry.seen_seqs and not self.clips.seen(robot_id, seq):
                clip_id = self.clips.put(robot_id, seq, svc1)
                event_seq = meta.get("event_seq")
                linked = None
                if isinstance(event_seq, int):
                    linked = self.events.link_clip(robot_id, event_seq, clip_id, meta["sha256"])
                if linked is None:
                    linked = self._link_latest_motion(robot_id, clip_id, meta["sha256"])
                if linked is not None:
                    self.registry.notify_all({"type": "event", "event": linked.to_json()})
            entry.seen_seqs.add(seq)
            self._send_ack(entry, seq)
            return

        if msg_type in (MSG_ACK, MSG_ERROR):
            doc = wire.decode_json_payload(payload, what="command result")
            command_id = doc.get("command_id")
            if isinstance(command_id, str) and command_id:
                result = {
                    "type": "command_result",
                    "robot_id": robot_id,
                    "command_id": command_id,
                    "status": "ack" if msg_type == MSG_ACK else "error",
                }
                if msg_type == MSG_ERROR:
                    result["reason"] = doc.get("reason", "unknown")
                owner = self._command_owners.pop(command_id, None)
                if owner is not None:
                    self.registry.notify_user(owner, result)
                else:
                    self.registry.notify_all(result)
            return

        log.warning("robot %s sent unexpected msg_type 0x%02x", robot_id, msg_type)

    def _link_latest_motion(self, robot_id: str, clip_id: str, sha256: str):
        """Fallback clip linking: newest unlinked motion event for the robot."""
        page, _ = self.events.query(kind="Motion", robot_id=robot_id, page=0, page_size=50)
        for ev in page:
            if ev.clip_id is None:
                return self.events.link_clip(robot_id, ev.seq, clip_id, sha256)
        return None
