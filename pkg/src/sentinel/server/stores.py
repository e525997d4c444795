"""File-backed persistence: user accounts, sessions, events, and clips.

Users and events are append-only JSON-lines files replayed at startup; clips
are content-addressed files (SVC1 containers) named by their SHA-256, which
makes stored bytes immutable and end-to-end verifiable. Everything here is
deliberately desk-scale: single process, no database.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import secrets
import time
import uuid
from dataclasses import asdict, dataclass
from pathlib import Path

_SCRYPT_N = 2**14
_SCRYPT_R = 8
_SCRYPT_P = 1

MIN_PASSWORD_LEN = 8
TOKEN_TTL_SECONDS = 24 * 3600


class DuplicateUser(ValueError):
    pass


class WeakPassword(ValueError):
    pass


class BadCredentials(ValueError):
    pass


def _hash_password(password: str, salt: bytes) -> bytes:
    # scrypt: memory-hard, stdlib, parameters fixed alongside the stored hash.
    return hashlib.scrypt(
        password.encode(), salt=salt, n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P, dklen=32
    )


class UserStore:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._users: dict[str, dict] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._users[rec["username"]] = rec
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def register(self, username: str, password: str) -> dict:
        if not username or len(username) > 64 or not username.isprintable():
            raise ValueError("username must be 1-64 printable characters")
        if len(password) < MIN_PASSWORD_LEN:
            raise WeakPassword(f"password must be at least {MIN_PASSWORD_LEN} characters")
        if username in self._users:
            raise DuplicateUser(f"username {username!r} already registered")
        salt = os.urandom(16)
        rec = {
            "username": username,
            "salt": salt.hex(),
            "hash": _hash_password(password, salt).hex(),
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")
        self._users[username] = rec
        return {"username": username, "created_at": rec["created_at"]}

    def verify(self, username: str, password: str) -> bool:
        rec = self._users.get(username)
        if rec is None:
            # Burn the same work as a real check so missing users are not
            # distinguishable by timing.
            _hash_password(password, b"\x00" * 16)
            return False
        expected = bytes.fromhex(rec["hash"])
        candidate = _hash_password(password, bytes.fromhex(rec["salt"]))
        return hmac.compare_digest(expected, candidate)


class TokenStore:
    """Opaque bearer tokens with server-side expiry."""

    def __init__(self, ttl_seconds: float = TOKEN_TTL_SECONDS):
        self.ttl = ttl_seconds
        self._tokens: dict[str, tuple[str, float]] = {}

    def issue(self, username: str) -> tuple[str, float]:
        token = secrets.token_hex(32)
        expires = time.time() + self.ttl
        self._tokens[token] = (username, expires)
        return token, expires

    def check(self, token: str | None) -> str | None:
        if not token:
            return None
        entry = self._tokens.get(token)
        if entry is None:
            return None
        username, expires = entry
        if time.time() >= expires:
            del self._tokens[token]
            return None
        return username


@dataclass
class EventRecord:
    event_id: str
    robot_id: str
    kind: str  # Motion | Fire
    timestamp_ms: int
    seq: int
    details: dict
    stream_link: str
    clip_id: str | None = None
    clip_sha256: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


class EventStore:
    """Append-only event log; clip links are appended as amendment records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._events: list[EventRecord] = []
        self._by_key: dict[tuple[str, int], EventRecord] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("type") == "clip_link":
                    ev = self._by_key.get((rec["robot_id"], rec["seq"]))
                    if ev is not None:
                        ev.clip_id = rec["clip_id"]
                        ev.clip_sha256 = rec.get("clip_sha256")
                else:
                    ev = EventRecord(**{k: v for k, v in rec.items() if k != "type"})
                    self._events.append(ev)
                    self._by_key[(ev.robot_id, ev.seq)] = ev
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def _append_line(self, doc: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(doc) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def seen(self, robot_id: str, seq: int) -> bool:
        return (robot_id, seq) in self._by_key

    def seqs_for(self, robot_id: str) -> set[int]:
        return {seq for (rid, seq) in self._by_key if rid == robot_id}

    def add(self, robot_id: str, kind: str, seq: int, details: dict) -> EventRecord:
        ev = EventRecord(
            event_id=uuid.uuid4().hex,
            robot_id=robot_id,
            kind=kind,
            timestamp_ms=int(time.time() * 1000),
            seq=seq,
            details=details,
            stream_link=f"/api/robots/{robot_id}/stream",
        )
        self._append_line({"type": "event", **ev.to_json()})
        self._events.append(ev)
        self._by_key[(robot_id, seq)] = ev
        return ev

    def link_clip(
        self, robot_id: str, event_seq: int, clip_id: str, clip_sha256: str
    ) -> EventRecord | None:
        ev = self._by_key.get((robot_id, event_seq))
        if ev is None:
            return None
        ev.clip_id = clip_id
        ev.clip_sha256 = clip_sha256
        self._append_line(
            {
                "type": "clip_link",
                "robot_id": robot_id,
                "seq": event_seq,
                "clip_id": clip_id,
                "clip_sha256": clip_sha256,
            }
        )
        return ev

    def query(
        self,
        kind: str | None = None,
        robot_id: str | None = None,
        page: int = 0,
        page_size: int = 50,
    ) -> tuple[list[EventRecord], int]:
        """Newest-first page of matching events plus the total match count."""
        matches = [
            ev
            for ev in reversed(self._events)
            if (kind is None or ev.kind == kind) and (robot_id is None or ev.robot_id == robot_id)
        ]
        start = page * page_size
        return matches[start : start + page_size], len(matches)

    def count(self, kind: str | None = None, robot_id: str | None = None) -> int:
        return self.query(kind, robot_id, 0, len(self._events) + 1)[1]


class ClipStore:
    """Content-addressed clip files plus a JSON-lines index."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.index_path = self.dir / "index.jsonl"
        self._index: dict[str, dict] = {}
        self._seqs: dict[str, set[int]] = {}
        if self.index_path.exists():
            for line in self.index_path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._index[rec["clip_id"]] = rec
                self._seqs.setdefault(rec["robot_id"], set()).add(rec["seq"])

    def seen(self, robot_id: str, seq: int) -> bool:
        return seq in self._seqs.get(robot_id, set())

    def put(self, robot_id: str, seq: int, svc1: bytes) -> str:
        """Store clip bytes; the id is the SHA-256, so rewrites are no-ops."""
        clip_id = hashlib.sha256(svc1).hexdigest()
        path = self.dir / f"{clip_id}.svc1"
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(svc1)
            os.replace(tmp, path)
        rec = {
            "clip_id": clip_id,
            "robot_id": robot_id,
            "seq": seq,
            "size": len(svc1),
            "path": path.name,
        }
        if clip_id not in self._index:
            with open(self.index_path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
            self._index[clip_id] = rec
        self._seqs.setdefault(robot_id, set()).add(seq)
        return clip_id

    def get(self, clip_id: str) -> bytes | None:
        rec = self._index.get(clip_id)
        if rec is None:
            return None
        return (self.dir / rec["path"]).read_bytes()
