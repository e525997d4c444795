"""Application payload codecs shared by the robot agent and the server.

Envelope payloads are JSON for commands, status, events and acks; frames and
clip uploads are binary. The frame payload layout doubles as the WebSocket
stream message, so the server can fan frames out without re-encoding:

    u16-BE width | u16-BE height | u64-BE frame_index | u64-BE timestamp_ms | pixels
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from enum import Enum

from sentinel.vision import Clip, Frame, MotionEvent
from sentinel.world import MoveDirection

_FRAME_HEADER = struct.Struct(">HHQQ")


class WireError(ValueError):
    pass


class CommandKind(str, Enum):
    MOVE = "Move"
    START_MOTION_DETECTION = "StartMotionDetection"
    START_STREAMING = "StartStreaming"
    STOP = "Stop"
    STATUS_REQUEST = "StatusRequest"


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    command_id: str
    direction: MoveDirection | None = None


def encode_command(cmd: Command) -> bytes:
    doc: dict = {"kind": cmd.kind.value, "command_id": cmd.command_id}
    if cmd.direction is not None:
        doc["direction"] = cmd.direction.value
    return json.dumps(doc).encode()


def decode_command(payload: bytes) -> Command:
    try:
        doc = json.loads(payload)
    except (ValueError, UnicodeDecodeError) as exc:
        raise WireError(f"command payload is not JSON: {exc}") from exc
    return command_from_dict(doc)


def command_from_dict(doc: dict) -> Command:
    if not isinstance(doc, dict):
        raise WireError("command must be a JSON object")
    try:
        kind = CommandKind(doc.get("kind"))
    except ValueError:
        raise WireError(f"unknown command kind {doc.get('kind')!r}")
    command_id = doc.get("command_id")
    if not isinstance(command_id, str) or not command_id:
        raise WireError("command_id must be a non-empty string")
    direction = None
    if kind == CommandKind.MOVE:
        try:
            direction = MoveDirection(doc.get("direction"))
        except ValueError:
            raise WireError(f"Move requires a direction, got {doc.get('direction')!r}")
    elif "direction" in doc:
        raise WireError(f"{kind.value} does not take a direction")
    return Command(kind=kind, command_id=command_id, direction=direction)


def encode_frame_payload(frame: Frame) -> bytes:
    return (
        _FRAME_HEADER.pack(frame.width, frame.height, frame.frame_index, frame.timestamp_ms)
        + frame.pixels
    )


def decode_frame_payload(payload: bytes) -> Frame:
    if len(payload) < _FRAME_HEADER.size:
        raise WireError("frame payload truncated")
    width, height, index, ts = _FRAME_HEADER.unpack_from(payload)
    pixels = payload[_FRAME_HEADER.size :]
    if len(pixels) != width * height:
        raise WireError(f"frame payload has {len(pixels)} pixel bytes, expected {width * height}")
    return Frame(width=width, height=height, pixels=pixels, frame_index=index, timestamp_ms=ts)


def encode_clip_upload(seq: int, event: MotionEvent, svc1: bytes, event_seq: int | None = None) -> bytes:
    meta = {
        "seq": seq,
        "sha256": hashlib.sha256(svc1).hexdigest(),
        "event_seq": event_seq,
        "event": {
            "frame_index": event.frame_index,
            "changed_fraction": event.changed_fraction,
            "bbox": list(event.bbox),
        },
    }
    meta_bytes = json.dumps(meta).encode()
    return struct.pack(">I", len(meta_bytes)) + meta_bytes + svc1


def decode_clip_upload(payload: bytes) -> tuple[dict, bytes]:
    """Returns (metadata, SVC1 bytes); raises WireError on any inconsistency."""
    if len(payload) < 4:
        raise WireError("clip upload truncated")
    (meta_len,) = struct.unpack_from(">I", payload)
    if len(payload) < 4 + meta_len:
        raise WireError("clip upload metadata truncated")
    try:
        meta = json.loads(payload[4 : 4 + meta_len])
    except (ValueError, UnicodeDecodeError) as exc:
        raise WireError(f"clip metadata is not JSON: {exc}") from exc
    if not isinstance(meta, dict) or not isinstance(meta.get("seq"), int):
        raise WireError("clip metadata missing seq")
    svc1 = payload[4 + meta_len :]
    if hashlib.sha256(svc1).hexdigest() != meta.get("sha256"):
        raise WireError("clip bytes do not match metadata sha256")
    return meta, svc1


def clip_payload_for(seq: int, clip: Clip, svc1: bytes) -> bytes:
    return encode_clip_upload(seq, clip.event, svc1)


def decode_json_payload(payload: bytes, *, what: str) -> dict:
    try:
        doc = json.loads(payload)
    except (ValueError, UnicodeDecodeError) as exc:
        raise WireError(f"{what} payload is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise WireError(f"{what} payload must be a JSON object")
    return doc


def encode_json_payload(doc: dict) -> bytes:
    return json.dumps(doc).encode()
