"""The robot's brain: mode state machine, fire watchdog, and uplink runtime.

:class:`AgentCore` is pure simulation logic: it owns the world instance,
applies operator commands, and produces effect records each tick. The
:class:`RobotAgent` runtime wraps a core with networking: it keeps a secure
session to the control server alive with exponential backoff, write-ahead
journals every loss-protected message before sending, and retransmits
unacknowledged records after every reconnect.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from sentinel import wire
from sentinel.journal import BackupJournal
from sentinel.secure import (
    CLASS_ENCRYPTED_SIGNED,
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
    SessionKeys,
    StaticIdentity,
    open_envelope,
    peer_id_for_public,
    seal,
)
from sentinel.secure.handshake import handshake_initiate, read_envelope_frame
from sentinel.secure.keys import load_public_key
from sentinel.vision import (
    BackgroundModel,
    Clip,
    ClipBuffer,
    DetectorConfig,
    Frame,
    MotionEvent,
    detect,
    encode_clip,
    init_background,
)
from sentinel.world import (
    BLOCKED,
    RobotPose,
    SensorReading,
    WorldGrid,
    apply_move,
    read_sensors,
    render_frame,
)
from sentinel.wire import Command, CommandKind

log = logging.getLogger(__name__)


class Mode(str, Enum):
    IDLE = "Idle"
    MOTION_DETECTION = "MotionDetection"
    STREAMING = "Streaming"


@dataclass(frozen=True)
class FireConfig:
    smoke_threshold_ppm: float = 300.0
    temperature_threshold_c: float = 57.0
    debounce_ticks: int = 3

    def __post_init__(self):
        if self.smoke_threshold_ppm <= 0 or self.temperature_threshold_c <= 0 or self.debounce_ticks <= 0:
            raise ValueError("fire thresholds and debounce must be positive")


def fire_check(reading: SensorReading, cfg: FireConfig, counter: int) -> tuple[int, bool]:
    """Debounced fire rule: alert on the Nth consecutive over-threshold tick.

    The counter holds at the debounce value while the condition persists, so
    one continuous fire raises exactly one alert; it must drop below both
    thresholds before a new alert can build up.
    """
    over = (
        reading.smoke_ppm > cfg.smoke_threshold_ppm
        or reading.temperature_c > cfg.temperature_threshold_c
    )
    if not over:
        return 0, False
    if counter >= cfg.debounce_ticks:
        return counter, False
    counter += 1
    return counter, counter == cfg.debounce_ticks


# Effect records produced by the core; the runtime turns them into wire traffic.


@dataclass(frozen=True)
class CommandAck:
    command_id: str


@dataclass(frozen=True)
class CommandRefused:
    command_id: str
    reason: str  # Blocked | ModeConflict | BadCommand


@dataclass(frozen=True)
class StatusReport:
    status: dict


@dataclass(frozen=True)
class FireAlert:
    smoke_ppm: float
    temperature_c: float
    tick: int


@dataclass(frozen=True)
class MotionDetected:
    event: MotionEvent
    tick: int


@dataclass(frozen=True)
class ClipReady:
    clip: Clip


@dataclass(frozen=True)
class FrameCaptured:
    frame: Frame


Effect = object

_SEEN_COMMANDS_MAX = 1024


class AgentCore:
    """Owns the world and the mode state machine; no I/O, fully deterministic."""

    def __init__(
        self,
        world: WorldGrid,
        pose: RobotPose,
        detector_cfg: DetectorConfig | None = None,
        fire_cfg: FireConfig | None = None,
        tick_ms: int = 100,
    ):
        self.world = world
        self.pose = pose
        self.detector_cfg = detector_cfg or DetectorConfig()
        self.fire_cfg = fire_cfg or FireConfig()
        self.tick_ms = tick_ms
        self.mode = Mode.IDLE
        self.detector: BackgroundModel | None = None
        self._clips: ClipBuffer | None = None
        self.fire_counter = 0
        self._frame_index = 0
        self._seen_commands: OrderedDict[str, None] = OrderedDict()

    @property
    def tick(self) -> int:
        return self.world.tick

    def status(self) -> dict:
        reading = read_sensors(self.world, self.pose)
        return {
            "mode": self.mode.value,
            "pose": {"x": self.pose.x, "y": self.pose.y, "heading": self.pose.heading.value},
            "sensors": {
                "smoke_ppm": reading.smoke_ppm,
                "temperature_c": reading.temperature_c,
                "proximity_front": reading.proximity_front,
                "proximity_rear": reading.proximity_rear,
            },
            "tick": self.world.tick,
        }

    def _capture(self) -> Frame:
        frame = render_frame(
            self.world,
            self.pose,
            frame_index=self._frame_index,
            timestamp_ms=self.world.tick * self.tick_ms,
        )
        self._frame_index += 1
        return frame

    def _enter_motion_detection(self) -> None:
        self.mode = Mode.MOTION_DETECTION
        self._frame_index = 0
        cfg = self.detector_cfg
        self._clips = ClipBuffer(pre_roll=cfg.pre_roll, post_roll=cfg.post_roll)
        first = self._capture()
        self.detector = init_background(first)
        self._clips.push(first)

    def _leave_active_mode(self) -> None:
        self.mode = Mode.IDLE
        self.detector = None
        self._clips = None

    def handle_command(self, cmd: Command) -> list[Effect]:
        if cmd.command_id in self._seen_commands:
            return [CommandAck(cmd.command_id)]
        self._seen_commands[cmd.command_id] = None
        while len(self._seen_commands) > _SEEN_COMMANDS_MAX:
            self._seen_commands.popitem(last=False)

        if cmd.kind == CommandKind.MOVE:
            result = apply_move(self.world, self.pose, cmd.direction)
            if result is BLOCKED:
                return [CommandRefused(cmd.command_id, "Blocked")]
            self.pose = result
            return [CommandAck(cmd.command_id), StatusReport(self.status())]

        if cmd.kind == CommandKind.START_MOTION_DETECTION:
            if self.mode == Mode.STREAMING:
                return [CommandRefused(cmd.command_id, "ModeConflict")]
            if self.mode == Mode.MOTION_DETECTION:
                return [CommandAck(cmd.command_id)]
            self._enter_motion_detection()
            return [CommandAck(cmd.command_id), StatusReport(self.status())]

        if cmd.kind == CommandKind.START_STREAMING:
            if self.mode == Mode.MOTION_DETECTION:
                return [CommandRefused(cmd.command_id, "ModeConflict")]
            if self.mode == Mode.STREAMING:
                return [CommandAck(cmd.command_id)]
            self.mode = Mode.STREAMING
            self._frame_index = 0
            return [CommandAck(cmd.command_id), StatusReport(self.status())]

        if cmd.kind == CommandKind.STOP:
            if self.mode == Mode.IDLE:
                return [CommandAck(cmd.command_id)]
            self._leave_active_mode()
            return [CommandAck(cmd.command_id), StatusReport(self.status())]

        if cmd.kind == CommandKind.STATUS_REQUEST:
            return [CommandAck(cmd.command_id), StatusReport(self.status())]

        return [CommandRefused(cmd.command_id, "BadCommand")]

    def step(self) -> list[Effect]:
        """Advance one tick: world, fire watchdog (every mode), mode behavior."""
        self.world.step()
        effects: list[Effect] = []

        reading = read_sensors(self.world, self.pose)
        self.fire_counter, alert = fire_check(reading, self.fire_cfg, self.fire_counter)
        if alert:
            effects.append(
                FireAlert(
                    smoke_ppm=reading.smoke_ppm,
                    temperature_c=reading.temperature_c,
                    tick=self.world.tick,
                )
            )

        if self.mode == Mode.MOTION_DETECTION:
            frame = self._capture()
            event, self.detector = detect(self.detector, frame, self.detector_cfg)
            if event is not None and not self._clips.clip_open:
                effects.append(MotionDetected(event=event, tick=self.world.tick))
            clip = self._clips.push(frame, event)
            if clip is not None:
                effects.append(ClipReady(clip=clip))
        elif self.mode == Mode.STREAMING:
            effects.append(FrameCaptured(frame=self._capture()))

        return effects


@dataclass
class AgentConfig:
    tick_rate: float = 10.0
    backoff_base: float = 0.5
    backoff_cap: float = 30.0
    handshake_timeout: float = 5.0

    @property
    def tick_ms(self) -> int:
        return int(1000 / self.tick_rate) if self.tick_rate > 0 else 1


class _SeqAllocator:
    """Monotonic event sequence numbers that survive restarts.

    The high-water mark lives in a sidecar file because the journal forgets
    acknowledged records; reusing a seq would make the server drop the new
    message as a duplicate.
    """

    def __init__(self, path: Path, floor: int = 0):
        self.path = path
        stored = 0
        if path.exists():
            try:
                stored = int(path.read_text().strip() or 0)
            except ValueError:
                stored = 0
        self._last = max(stored, floor)

    def next(self) -> int:
        self._last += 1
        self.path.write_text(str(self._last))
        return self._last


class RobotAgent:
    """Drives one AgentCore against a control server over the secure channel."""

    def __init__(
        self,
        core: AgentCore,
        identity: StaticIdentity,
        server_addr: tuple[str, int],
        server_public: bytes,
        journal_path: str | Path,
        config: AgentConfig | None = None,
    ):
        self.core = core
        self.identity = identity
        self.server_addr = server_addr
        self.server_public = server_public
        self.config = config or AgentConfig()
        journal_path = Path(journal_path)
        self.journal = BackupJournal(journal_path)
        self._seqs = _SeqAllocator(
            journal_path.with_suffix(journal_path.suffix + ".seq"), floor=self.journal.max_seq()
        )
        self.connected = False
        self._session: SessionKeys | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._reader_task: asyncio.Task | None = None
        self._inbound: asyncio.Queue[Command] = asyncio.Queue()
        self._just_connected = False
        self._stopping = False
        # Observability for tests and operators: counts of generated effects.
        self.stats = {
            "fire_alerts": 0,
            "motion_events": 0,
            "clips": 0,
            "frames_sent": 0,
            "reconnects": 0,
        }
        self.clip_hashes: list[str] = []
        self._motion_seq_by_frame: dict[int, int] = {}

    # -- journal-backed messaging ------------------------------------------

    def _send_raw(self, msg_type: int, klass: int, payload: bytes) -> bool:
        """Seal and write on the live session; returns False when offline."""
        if not self.connected or self._session is None or self._writer is None:
            return False
        try:
            blob = seal(payload, msg_type, klass, self._session, self.identity)
            self._writer.write(blob)
            return True
        except (ChannelError, ConnectionError, RuntimeError) as exc:
            log.warning("send failed, dropping connection: %s", exc)
            self._mark_disconnected()
            return False

    def _emit_journaled(self, msg_type: int, klass: int, payload: bytes, seq: int) -> None:
        self.journal.append(seq, msg_type, payload)
        self._send_raw(msg_type, klass, payload)

    def _flush_journal(self) -> None:
        for seq, kind, payload in self.journal.records():
            klass = CLASS_ENCRYPTED_SIGNED if kind in (MSG_CLIP_UPLOAD, MSG_STATUS) else CLASS_SIGNED
            if not self._send_raw(kind, klass, payload):
                return

    # -- effect dispatch ----------------------------------------------------

    def _dispatch(self, effects: list[Effect]) -> None:
        for eff in effects:
            if isinstance(eff, FrameCaptured):
                if self.connected:
                    if self._send_raw(MSG_FRAME, 0, wire.encode_frame_payload(eff.frame)):
                        self.stats["frames_sent"] += 1
                continue
            if isinstance(eff, CommandAck):
                self._send_raw(MSG_ACK, CLASS_SIGNED, wire.encode_json_payload({"command_id": eff.command_id}))
                continue
            if isinstance(eff, CommandRefused):
                self._send_raw(
                    MSG_ERROR,
                    CLASS_SIGNED,
                    wire.encode_json_payload({"command_id": eff.command_id, "reason": eff.reason}),
                )
                continue
            if isinstance(eff, StatusReport):
                seq = self._seqs.next()
                doc = dict(eff.status)
                doc["seq"] = seq
                self._emit_journaled(MSG_STATUS, CLASS_ENCRYPTED_SIGNED, wire.encode_json_payload(doc), seq)
                continue
            if isinstance(eff, FireAlert):
                self.stats["fire_alerts"] += 1
                seq = self._seqs.next()
                doc = {
                    "kind": "Fire",
                    "smoke_ppm": eff.smoke_ppm,
                    "temperature_c": eff.temperature_c,
                    "tick": eff.tick,
                    "seq": seq,
                }
                self._emit_journaled(MSG_FIRE_ALERT, CLASS_SIGNED, wire.encode_json_payload(doc), seq)
                continue
            if isinstance(eff, MotionDetected):
                self.stats["motion_events"] += 1
                seq = self._seqs.next()
                self._motion_seq_by_frame[eff.event.frame_index] = seq
                doc = {
                    "kind": "Motion",
                    "frame_index": eff.event.frame_index,
                    "changed_fraction": eff.event.changed_fraction,
                    "bbox": list(eff.event.bbox),
                    "tick": eff.tick,
                    "seq": seq,
                }
                self._emit_journaled(MSG_MOTION_EVENT, CLASS_SIGNED, wire.encode_json_payload(doc), seq)
                continue
            if isinstance(eff, ClipReady):
                self.stats["clips"] += 1
                seq = self._seqs.next()
                svc1 = encode_clip(eff.clip.frames)
                self.clip_hashes.append(hashlib.sha256(svc1).hexdigest())
                event_seq = self._motion_seq_by_frame.pop(eff.clip.event.frame_index, None)
                payload = wire.encode_clip_upload(seq, eff.clip.event, svc1, event_seq=event_seq)
                self._emit_journaled(MSG_CLIP_UPLOAD, CLASS_ENCRYPTED_SIGNED, payload, seq)
                continue
            log.warning("unhandled effect %r", eff)

    # -- connection management ---------------------------------------------

    def _mark_disconnected(self) -> None:
        self.connected = False
        self._session = None
        if self._writer is not None:
            self._writer.close()
            self._writer = None

    async def _reader_loop(self, reader: asyncio.StreamReader, session: SessionKeys) -> None:
        trusted = {peer_id_for_public(self.server_public): load_public_key(self.server_public)}
        try:
            while True:
                frame = await read_envelope_frame(reader)
                try:
                    msg_type, payload = open_envelope(frame, session, trusted)
                except ChannelError as exc:
                    log.warning("rejected inbound envelope: %s", exc)
                    continue
                if msg_type == MSG_COMMAND:
                    try:
                        self._inbound.put_nowait(wire.decode_command(payload))
                    except wire.WireError as exc:
                        doc = {}
                        try:
                            doc = wire.decode_json_payload(payload, what="command")
                        except wire.WireError:
                            pass
                        cid = doc.get("command_id", "") if isinstance(doc, dict) else ""
                        log.warning("bad command: %s", exc)
                        self._send_raw(
                            MSG_ERROR,
                            CLASS_SIGNED,
                            wire.encode_json_payload({"command_id": cid, "reason": "BadCommand"}),
                        )
                elif msg_type == MSG_ACK:
                    doc = wire.decode_json_payload(payload, what="ack")
                    seq = doc.get("seq")
                    if isinstance(seq, int):
                        self.journal.ack(seq)
                elif msg_type == MSG_ERROR:
                    log.warning("server error: %s", payload[:200])
                else:
                    log.warning("unexpected inbound msg_type 0x%02x", msg_type)
        except (asyncio.IncompleteReadError, ConnectionError, ChannelError):
            pass
        finally:
            # A stale reader from an earlier session must not tear down a
            # fresher connection that replaced it.
            if self._session is session:
                self._mark_disconnected()

    async def _connection_loop(self) -> None:
        delay = self.config.backoff_base
        while not self._stopping:
            if not self.connected:
                try:
                    reader, writer = await asyncio.open_connection(*self.server_addr)
                    session = await handshake_initiate(
                        reader, writer, self.identity, self.server_public, self.config.handshake_timeout
                    )
                except (ConnectionError, OSError, ChannelError, asyncio.TimeoutError) as exc:
                    log.debug("connect failed (%s); retrying in %.2fs", exc, delay)
                    await asyncio.sleep(delay)
                    delay = min(delay * 2, self.config.backoff_cap)
                    continue
                self._session = session
                self._writer = writer
                self.connected = True
                self._just_connected = True
                self.stats["reconnects"] += 1
                delay = self.config.backoff_base
                self._reader_task = asyncio.create_task(self._reader_loop(reader, session))
                log.info("connected to server at %s:%d", *self.server_addr)
            await asyncio.sleep(self.config.backoff_base / 4 if self.config.backoff_base > 0 else 0)

    # -- main loop -----------------------------------------------------------

    async def run(self, max_ticks: int | None = None, stop: asyncio.Event | None = None) -> None:
        """Tick loop; returns after max_ticks (tests) or when stop is set."""
        connector = asyncio.create_task(self._connection_loop())
        period = 1.0 / self.config.tick_rate if self.config.tick_rate > 0 else 0.0
        loop = asyncio.get_running_loop()
        ticks = 0
        try:
            while not self._stopping:
                if stop is not None and stop.is_set():
                    break
                if max_ticks is not None and ticks >= max_ticks:
                    break
                started = loop.time()

                if self._just_connected:
                    self._just_connected = False
                    self._flush_journal()
                    self._dispatch([StatusReport(self.core.status())])

                while True:
                    try:
                        cmd = self._inbound.get_nowait()
                    except asyncio.QueueEmpty:
                        break
                    self._dispatch(self.core.handle_command(cmd))

                self._dispatch(self.core.step())
                ticks += 1

                if self._writer is not None and self.connected:
                    try:
                        await self._writer.drain()
                    except (ConnectionError, RuntimeError):
                        self._mark_disconnected()

                elapsed = loop.time() - started
                await asyncio.sleep(max(0.0, period - elapsed))
        finally:
            self._stopping = True
            connector.cancel()
            if self._reader_task is not None:
                self._reader_task.cancel()
            self._mark_disconnected()
            self.journal.close()
