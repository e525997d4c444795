"""Durable store-and-forward journal for outbound robot messages.

Every non-frame message is appended here before it is handed to the network,
and removed only when the server acknowledges its sequence number. The file
survives restarts; a truncated tail record (crash mid-append) is discarded
on load. When the size cap is hit, clip uploads are evicted oldest-first,
then other kinds; fire alerts are never evicted.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

from sentinel.secure.envelope import MSG_CLIP_UPLOAD, MSG_FIRE_ALERT

_HEADER = struct.Struct(">IQB")  # record length (seq+kind+payload), seq, kind

DEFAULT_MAX_BYTES = 64 * 1024 * 1024


class JournalError(Exception):
    pass


def _record_bytes(seq: int, kind: int, payload: bytes) -> bytes:
    return _HEADER.pack(8 + 1 + len(payload), seq, kind) + payload


class BackupJournal:
    """Append-only record log with explicit acknowledgement-driven removal."""

    def __init__(self, path: str | Path, max_bytes: int = DEFAULT_MAX_BYTES):
        self.path = Path(path)
        self.max_bytes = max_bytes
        self._records: dict[int, tuple[int, bytes]] = {}  # seq -> (kind, payload), insertion-ordered
        self._size = 0
        self._load()
        self._fh = open(self.path, "ab")

    def _load(self) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            return
        data = self.path.read_bytes()
        off = 0
        while off + _HEADER.size <= len(data):
            length, seq, kind = _HEADER.unpack_from(data, off)
            payload_len = length - 9
            if payload_len < 0 or off + 4 + length > len(data):
                break  # truncated tail record; drop it
            payload = data[off + _HEADER.size : off + 4 + length]
            self._records[seq] = (kind, payload)
            self._size += 4 + length
            off += 4 + length
        if off != len(data):
            # Rewrite without the torn tail so the next load is clean.
            self._rewrite()

    def _rewrite(self) -> None:
        if hasattr(self, "_fh"):
            self._fh.close()
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            for seq, (kind, payload) in self._records.items():
                fh.write(_record_bytes(seq, kind, payload))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)
        self._size = self.path.stat().st_size
        self._fh = open(self.path, "ab")

    def __len__(self) -> int:
        return len(self._records)

    @property
    def size_bytes(self) -> int:
        return self._size

    def max_seq(self) -> int:
        return max(self._records, default=0)

    def records(self) -> list[tuple[int, int, bytes]]:
        """Unacknowledged records, oldest first."""
        return [(seq, kind, payload) for seq, (kind, payload) in self._records.items()]

    def append(self, seq: int, kind: int, payload: bytes) -> None:
        if seq in self._records:
            raise JournalError(f"duplicate journal seq {seq}")
        record = _record_bytes(seq, kind, payload)
        if self._size + len(record) > self.max_bytes:
            self._evict(len(record))
        self._fh.write(record)
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._records[seq] = (kind, payload)
        self._size += len(record)

    def _evict(self, needed: int) -> None:
        # Clips first (largest, least critical), then the rest; alerts survive.
        for pass_kinds in ((MSG_CLIP_UPLOAD,), None):
            for seq, (kind, _) in list(self._records.items()):
                if self._size + needed <= self.max_bytes:
                    return
                if kind == MSG_FIRE_ALERT:
                    continue
                if pass_kinds is not None and kind not in pass_kinds:
                    continue
                self._drop(seq)
        if self._size + needed > self.max_bytes:
            raise JournalError("journal full of unacknowledged fire alerts")

    def _drop(self, seq: int) -> None:
        del self._records[seq]
        self._rewrite()  # recomputes _size from the compacted file

    def ack(self, seq: int) -> bool:
        """Remove an acknowledged record; returns False if it was unknown."""
        if seq not in self._records:
            return False
        self._drop(seq)
        return True

    def close(self) -> None:
        self._fh.close()
