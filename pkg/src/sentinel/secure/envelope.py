"""The wire envelope: framing, protection classes, seal and open.

Wire layout, big-endian, bit-exact:

    u32 remaining-length | u8 msg_type | u8 class | 16B sender_id | u64 seq |
    16B iv | u32 payload_len | payload | 64B signature

Class 0 travels in the clear (zero iv, zero signature), class 1 is signed,
class 2 is PKCS#7-padded, AES-256-CBC encrypted under a fresh IV, and signed
over the ciphertext so receivers verify before they decrypt.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.padding import PKCS7

from sentinel.secure.keys import StaticIdentity, verify_signature

MSG_HELLO = 0x01
MSG_HELLO_ACK = 0x02
MSG_COMMAND = 0x03
MSG_STATUS = 0x04
MSG_FRAME = 0x05
MSG_FIRE_ALERT = 0x06
MSG_MOTION_EVENT = 0x07
MSG_CLIP_UPLOAD = 0x08
MSG_ACK = 0x09
MSG_ERROR = 0x0A

MSG_NAMES = {
    MSG_HELLO: "HELLO",
    MSG_HELLO_ACK: "HELLO_ACK",
    MSG_COMMAND: "COMMAND",
    MSG_STATUS: "STATUS",
    MSG_FRAME: "FRAME",
    MSG_FIRE_ALERT: "FIRE_ALERT",
    MSG_MOTION_EVENT: "MOTION_EVENT",
    MSG_CLIP_UPLOAD: "CLIP_UPLOAD",
    MSG_ACK: "ACK",
    MSG_ERROR: "ERROR",
}

CLASS_PLAIN = 0
CLASS_SIGNED = 1
CLASS_ENCRYPTED_SIGNED = 2

_ZERO_IV = bytes(16)
_ZERO_SIG = bytes(64)

# Fixed bytes besides the payload: type, class, sender, seq, iv, len, signature.
_FIXED_LEN = 1 + 1 + 16 + 8 + 16 + 4 + 64
MAX_PAYLOAD = 8 * 1024 * 1024


class ChannelError(Exception):
    code = "channel"


class MalformedEnvelope(ChannelError):
    code = "malformed"


class UnknownSender(ChannelError):
    code = "unknown_sender"


class PolicyViolation(ChannelError):
    code = "policy"


class BadSignature(ChannelError):
    code = "bad_signature"


class ReplayedSequence(ChannelError):
    code = "replay"


class BadPadding(ChannelError):
    code = "bad_padding"


def default_policy() -> dict[int, int]:
    """Minimum protection class per message type.

    Commands and alert traffic must be signed; status and clip uploads carry
    sensitive detail and must be encrypted as well. Live frames ride plain:
    the stream is latency-critical and carries no secrets beyond the imagery
    already visible to any subscriber.
    """
    return {
        MSG_HELLO: CLASS_SIGNED,
        MSG_HELLO_ACK: CLASS_SIGNED,
        MSG_COMMAND: CLASS_SIGNED,
        MSG_STATUS: CLASS_ENCRYPTED_SIGNED,
        MSG_FRAME: CLASS_PLAIN,
        MSG_FIRE_ALERT: CLASS_SIGNED,
        MSG_MOTION_EVENT: CLASS_SIGNED,
        MSG_CLIP_UPLOAD: CLASS_ENCRYPTED_SIGNED,
        MSG_ACK: CLASS_SIGNED,
        MSG_ERROR: CLASS_SIGNED,
    }


@dataclass
class SessionKeys:
    """Per-session state: one sealer and one opener, never shared across tasks."""

    aes_key: bytes
    peer_id: bytes
    peer_static_public: object  # ec.EllipticCurvePublicKey
    send_seq: int = 1
    recv_seq_high: int = 0


@dataclass(frozen=True)
class Envelope:
    msg_type: int
    klass: int
    sender_id: bytes
    seq: int
    iv: bytes
    payload: bytes
    signature: bytes = field(default=_ZERO_SIG)


def signed_bytes(env: Envelope) -> bytes:
    """The byte string the signature covers (ciphertext when class 2)."""
    return (
        struct.pack(">BB", env.msg_type, env.klass)
        + env.sender_id
        + struct.pack(">Q", env.seq)
        + env.iv
        + env.payload
    )


def encode_envelope(env: Envelope) -> bytes:
    if len(env.sender_id) != 16 or len(env.iv) != 16 or len(env.signature) != 64:
        raise MalformedEnvelope("bad field widths")
    remaining = _FIXED_LEN + len(env.payload)
    return (
        struct.pack(">IBB", remaining, env.msg_type, env.klass)
        + env.sender_id
        + struct.pack(">Q", env.seq)
        + env.iv
        + struct.pack(">I", len(env.payload))
        + env.payload
        + env.signature
    )


def decode_envelope(data: bytes) -> Envelope:
    if len(data) < 4 + _FIXED_LEN:
        raise MalformedEnvelope(f"frame too short ({len(data)} bytes)")
    (remaining,) = struct.unpack(">I", data[:4])
    if remaining != len(data) - 4:
        raise MalformedEnvelope(f"remaining-length {remaining} does not match frame size {len(data) - 4}")
    msg_type, klass = struct.unpack(">BB", data[4:6])
    sender_id = data[6:22]
    (seq,) = struct.unpack(">Q", data[22:30])
    iv = data[30:46]
    (payload_len,) = struct.unpack(">I", data[46:50])
    if payload_len > MAX_PAYLOAD:
        raise MalformedEnvelope(f"payload length {payload_len} exceeds limit")
    if remaining != _FIXED_LEN + payload_len:
        raise MalformedEnvelope("payload length inconsistent with frame size")
    payload = data[50 : 50 + payload_len]
    signature = data[50 + payload_len :]
    if msg_type not in MSG_NAMES:
        raise MalformedEnvelope(f"unknown msg_type 0x{msg_type:02x}")
    if klass not in (CLASS_PLAIN, CLASS_SIGNED, CLASS_ENCRYPTED_SIGNED):
        raise MalformedEnvelope(f"unknown class {klass}")
    if klass != CLASS_ENCRYPTED_SIGNED and iv != _ZERO_IV:
        raise MalformedEnvelope("iv must be zero unless class is encrypted+signed")
    if klass == CLASS_PLAIN and signature != _ZERO_SIG:
        raise MalformedEnvelope("plain envelopes carry a zero signature")
    if klass == CLASS_ENCRYPTED_SIGNED and (payload_len == 0 or payload_len % 16 != 0):
        raise MalformedEnvelope("encrypted payload length must be a positive multiple of 16")
    return Envelope(msg_type, klass, sender_id, seq, iv, payload, signature)


def _encrypt(key: bytes, iv: bytes, plaintext: bytes) -> bytes:
    padder = PKCS7(128).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return enc.update(padded) + enc.finalize()


def _decrypt(key: bytes, iv: bytes, ciphertext: bytes) -> bytes:
    dec = Cipher(algorithms.AES(key), modes.CBC(iv)).decryptor()
    padded = dec.update(ciphertext) + dec.finalize()
    unpadder = PKCS7(128).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError as exc:
        raise BadPadding(str(exc)) from exc


def seal(
    payload: bytes,
    msg_type: int,
    klass: int,
    keys: SessionKeys,
    identity: StaticIdentity,
    policy: dict[int, int] | None = None,
) -> bytes:
    """Wrap a payload for the wire, consuming the session's next send seq."""
    policy = default_policy() if policy is None else policy
    minimum = policy.get(msg_type)
    if minimum is None:
        raise PolicyViolation(f"no policy for msg_type 0x{msg_type:02x}")
    if klass < minimum:
        raise PolicyViolation(
            f"{MSG_NAMES[msg_type]} requires class >= {minimum}, got {klass}"
        )
    if len(payload) > MAX_PAYLOAD:
        raise MalformedEnvelope(f"payload of {len(payload)} bytes exceeds limit")

    if klass == CLASS_ENCRYPTED_SIGNED:
        iv = os.urandom(16)
        body = _encrypt(keys.aes_key, iv, payload)
    else:
        iv = _ZERO_IV
        body = payload

    seq = keys.send_seq
    keys.send_seq += 1

    env = Envelope(msg_type, klass, identity.identity_id, seq, iv, body)
    signature = identity.sign(signed_bytes(env)) if klass >= CLASS_SIGNED else _ZERO_SIG
    return encode_envelope(
        Envelope(msg_type, klass, identity.identity_id, seq, iv, body, signature)
    )


def open_envelope(
    data: bytes,
    keys: SessionKeys,
    trusted: dict[bytes, object],
    policy: dict[int, int] | None = None,
) -> tuple[int, bytes]:
    """Validate and unwrap one envelope; raises a distinct error per defect.

    Order matters: parse, policy, sender, signature, then replay check, and
    only then decryption, so forgeries are rejected before any cipher work
    and cannot advance the replay counter.
    """
    policy = default_policy() if policy is None else policy
    env = decode_envelope(data)
    minimum = policy.get(env.msg_type)
    if minimum is None:
        raise PolicyViolation(f"no policy for msg_type 0x{env.msg_type:02x}")
    if env.klass < minimum:
        raise PolicyViolation(
            f"{MSG_NAMES[env.msg_type]} requires class >= {minimum}, got {env.klass}"
        )
    public = trusted.get(env.sender_id)
    if public is None:
        raise UnknownSender(f"sender {env.sender_id.hex()} not trusted")
    if env.klass >= CLASS_SIGNED and not verify_signature(public, signed_bytes(env), env.signature):
        raise BadSignature(f"{MSG_NAMES[env.msg_type]} signature verification failed")
    if env.seq <= keys.recv_seq_high:
        raise ReplayedSequence(f"seq {env.seq} not above high-water mark {keys.recv_seq_high}")
    keys.recv_seq_high = env.seq
    if env.klass == CLASS_ENCRYPTED_SIGNED:
        return env.msg_type, _decrypt(keys.aes_key, env.iv, env.payload)
    return env.msg_type, env.payload
