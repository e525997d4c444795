"""Background-subtraction motion detection and clip capture.

Each frame is differenced against a running-average reference image; pixels
whose absolute difference exceeds a per-pixel threshold are "changed", and a
frame whose changed fraction exceeds an area threshold raises a motion event.
A ring buffer keeps recent frames so every event yields a clip with pre-roll
and post-roll context.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

CLIP_MAGIC = b"SVC1"


class VisionError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """One grayscale camera frame; ``pixels`` is row-major, 8-bit, w*h bytes."""

    width: int
    height: int
    pixels: bytes
    frame_index: int = 0
    timestamp_ms: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise VisionError(f"frame dimensions must be positive, got {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height:
            raise VisionError(
                f"frame pixel buffer has {len(self.pixels)} bytes, expected {self.width * self.height}"
            )

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)


@dataclass(frozen=True)
class DetectorConfig:
    pixel_threshold: int = 25
    area_fraction: float = 0.01
    learning_rate: float = 0.05
    warmup_frames: int = 5
    pre_roll: int = 10
    post_roll: int = 10

    def __post_init__(self):
        if not 0 <= self.pixel_threshold <= 255:
            raise VisionError(f"pixel_threshold must be in [0, 255], got {self.pixel_threshold}")
        if not 0 < self.area_fraction <= 1:
            raise VisionError(f"area_fraction must be in (0, 1], got {self.area_fraction}")
        if not 0 <= self.learning_rate <= 1:
            raise VisionError(f"learning_rate must be in [0, 1], got {self.learning_rate}")
        if self.warmup_frames < 0 or self.pre_roll < 0 or self.post_roll < 0:
            raise VisionError("warmup_frames, pre_roll and post_roll must be non-negative")


@dataclass(frozen=True)
class BackgroundModel:
    """Reference image the detector differences against.

    ``mean`` is float64 so the exponential update keeps full precision; it is
    never mutated in place, which keeps detect() a pure function.
    """

    width: int
    height: int
    mean: np.ndarray
    frames_seen: int


@dataclass(frozen=True)
class MotionEvent:
    frame_index: int
    changed_fraction: float
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max, inclusive


@dataclass(frozen=True)
class Clip:
    frames: tuple[Frame, ...]
    event: MotionEvent


def init_background(frame: Frame) -> BackgroundModel:
    mean = frame.as_array().astype(np.float64)
    mean.setflags(write=False)
    return BackgroundModel(width=frame.width, height=frame.height, mean=mean, frames_seen=1)


def detect(
    model: BackgroundModel, frame: Frame, cfg: DetectorConfig
) -> tuple[MotionEvent | None, BackgroundModel]:
    """Compare a frame against the background, then fold the frame into it.

    Returns the motion event (None when below threshold or still warming up)
    and the updated model. Detection uses the model as it was before this
    frame's update.
    """
    if (frame.width, frame.height) != (model.width, model.height):
        raise VisionError(
            f"frame is {frame.width}x{frame.height}, model expects {model.width}x{model.height}"
        )
    current = frame.as_array()
    diff = np.abs(current.astype(np.int16) - np.rint(model.mean).astype(np.int16))
    changed = diff > cfg.pixel_threshold

    event = None
    changed_count = int(changed.sum())
    if model.frames_seen > cfg.warmup_frames and changed_count > cfg.area_fraction * changed.size:
        ys, xs = np.nonzero(changed)
        event = MotionEvent(
            frame_index=frame.frame_index,
            changed_fraction=changed_count / changed.size,
            bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
        )

    new_mean = (1.0 - cfg.learning_rate) * model.mean + cfg.learning_rate * current
    new_mean.setflags(write=False)
    updated = BackgroundModel(
        width=model.width, height=model.height, mean=new_mean, frames_seen=model.frames_seen + 1
    )
    return event, updated


class ClipBuffer:
    """Ring of the last ``pre_roll`` frames plus at most one open post-roll.

    Call :meth:`push` once per frame, passing the detection result for that
    frame. A trigger opens a clip seeded from the ring; triggers arriving
    while the post-roll is still open fold into the same clip. The completed
    clip is returned by the push that closes its post-roll.
    """

    def __init__(self, pre_roll: int = 10, post_roll: int = 10):
        self.pre_roll = pre_roll
        self.post_roll = post_roll
        self._ring: deque[Frame] = deque(maxlen=pre_roll)
        self._open_frames: list[Frame] | None = None
        self._open_event: MotionEvent | None = None
        self._remaining_post = 0

    @property
    def clip_open(self) -> bool:
        return self._open_frames is not None

    def ring_frames(self) -> list[Frame]:
        return list(self._ring)

    def push(self, frame: Frame, event: MotionEvent | None = None) -> Clip | None:
        completed = None
        if self._open_frames is not None:
            self._open_frames.append(frame)
            self._remaining_post -= 1
            if self._remaining_post <= 0:
                completed = Clip(frames=tuple(self._open_frames), event=self._open_event)
                self._open_frames = None
                self._open_event = None
        elif event is not None:
            self._open_frames = list(self._ring) + [frame]
            self._open_event = event
            self._remaining_post = self.post_roll
            if self.post_roll == 0:
                completed = Clip(frames=tuple(self._open_frames), event=self._open_event)
                self._open_frames = None
                self._open_event = None
        if self._ring.maxlen:
            self._ring.append(frame)
        return completed


def encode_clip(clip_frames: tuple[Frame, ...] | list[Frame]) -> bytes:
    """Serialize frames into the SVC1 container (bit-exact, big-endian)."""
    frames = list(clip_frames)
    if not frames:
        raise VisionError("cannot encode an empty clip")
    width, height = frames[0].width, frames[0].height
    for a, b in zip(frames, frames[1:]):
        if (b.width, b.height) != (width, height):
            raise VisionError("clip frames must share dimensions")
        if b.frame_index != a.frame_index + 1:
            raise VisionError(
                f"clip frame indices must be contiguous, got {a.frame_index} then {b.frame_index}"
            )
    out = bytearray()
    out += CLIP_MAGIC
    out += struct.pack(">HHIQ", width, height, len(frames), frames[0].frame_index)
    for f in frames:
        out += struct.pack(">Q", f.timestamp_ms)
        out += f.pixels
    return bytes(out)


def decode_clip(data: bytes) -> list[Frame]:
    if data[:4] != CLIP_MAGIC:
        raise VisionError("not an SVC1 clip (bad magic)")
    if len(data) < 20:
        raise VisionError("SVC1 clip truncated in header")
    width, height, count, first_index = struct.unpack(">HHIQ", data[4:20])
    frame_bytes = width * height
    expected = 20 + count * (8 + frame_bytes)
    if len(data) != expected:
        raise VisionError(f"SVC1 clip is {len(data)} bytes, expected {expected}")
    frames = []
    off = 20
    for i in range(count):
        (ts,) = struct.unpack(">Q", data[off : off + 8])
        off += 8
        frames.append(
            Frame(
                width=width,
                height=height,
                pixels=data[off : off + frame_bytes],
                frame_index=first_index + i,
                timestamp_ms=ts,
            )
        )
        off += frame_bytes
    return frames
