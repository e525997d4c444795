"""Session establishment over a connected byte stream.

The robot opens with HELLO: its ephemeral ECDH public, its static signing
public, and a fresh nonce, all signed by its static key. The server answers
HELLO_ACK in the same shape, echoing the robot's nonce inside the signed
body so a reflected HELLO cannot impersonate a live server. Both sides then
derive the session key from the ephemeral exchange; static keys never
encrypt anything, which keeps past sessions safe if one leaks.
"""

from __future__ import annotations

import asyncio
import os
import struct

from sentinel.secure.envelope import (
    CLASS_SIGNED,
    MSG_HELLO,
    MSG_HELLO_ACK,
    MAX_PAYLOAD,
    ChannelError,
    Envelope,
    SessionKeys,
    decode_envelope,
    encode_envelope,
    signed_bytes,
)
from sentinel.secure.keys import (
    InvalidPeerKey,
    StaticIdentity,
    derive_session_key,
    generate_ephemeral,
    load_public_key,
    peer_id_for_public,
    public_bytes,
    verify_signature,
)

HANDSHAKE_TIMEOUT = 5.0
NONCE_LEN = 16
_BODY_LEN = 65 + 65 + NONCE_LEN


class HandshakeError(ChannelError):
    code = "handshake"


def build_hello(identity: StaticIdentity, ephemeral_public: bytes, nonce: bytes, *, ack: bool = False) -> bytes:
    payload = ephemeral_public + identity.public_bytes() + nonce
    env = Envelope(
        msg_type=MSG_HELLO_ACK if ack else MSG_HELLO,
        klass=CLASS_SIGNED,
        sender_id=identity.identity_id,
        seq=0,
        iv=bytes(16),
        payload=payload,
    )
    sig = identity.sign(signed_bytes(env))
    return encode_envelope(
        Envelope(env.msg_type, env.klass, env.sender_id, env.seq, env.iv, env.payload, sig)
    )


def _parse_handshake_envelope(data: bytes, expect_type: int) -> tuple[Envelope, bytes, bytes, bytes]:
    env = decode_envelope(data)
    if env.msg_type != expect_type:
        raise HandshakeError(f"expected msg_type 0x{expect_type:02x}, got 0x{env.msg_type:02x}")
    if env.klass != CLASS_SIGNED or env.seq != 0:
        raise HandshakeError("handshake envelopes must be class 1 with seq 0")
    if len(env.payload) != _BODY_LEN:
        raise HandshakeError(f"handshake body must be {_BODY_LEN} bytes, got {len(env.payload)}")
    ephemeral = env.payload[:65]
    static = env.payload[65:130]
    nonce = env.payload[130:]
    return env, ephemeral, static, nonce


def verify_hello(data: bytes, allowlist: dict[bytes, bytes]) -> tuple[bytes, bytes, bytes]:
    """Server side: returns (robot_id, robot_ephemeral_public, nonce)."""
    env, ephemeral, static, nonce = _parse_handshake_envelope(data, MSG_HELLO)
    pinned = allowlist.get(env.sender_id)
    if pinned is None or pinned != static:
        raise HandshakeError(f"robot static key not allowlisted (id {env.sender_id.hex()})")
    if not verify_signature(load_public_key(static), signed_bytes(env), env.signature):
        raise HandshakeError("HELLO signature invalid")
    load_public_key(ephemeral)  # reject off-curve points before ECDH
    return env.sender_id, ephemeral, nonce


def verify_hello_ack(data: bytes, pinned_server_public: bytes, expected_nonce: bytes) -> bytes:
    """Robot side: returns the server's ephemeral public key."""
    env, ephemeral, static, nonce = _parse_handshake_envelope(data, MSG_HELLO_ACK)
    if static != pinned_server_public or env.sender_id != peer_id_for_public(pinned_server_public):
        raise HandshakeError("server static key does not match the pinned key")
    if not verify_signature(load_public_key(static), signed_bytes(env), env.signature):
        raise HandshakeError("HELLO_ACK signature invalid")
    if nonce != expected_nonce:
        raise HandshakeError("HELLO_ACK echoed the wrong nonce")
    load_public_key(ephemeral)
    return ephemeral


async def read_envelope_frame(reader: asyncio.StreamReader, timeout: float | None = None) -> bytes:
    """Read one length-prefixed envelope frame, returning the complete bytes."""
    header = await asyncio.wait_for(reader.readexactly(4), timeout)
    (remaining,) = struct.unpack(">I", header)
    if remaining > MAX_PAYLOAD + 4096:
        raise HandshakeError(f"frame of {remaining} bytes exceeds limit")
    body = await asyncio.wait_for(reader.readexactly(remaining), timeout)
    return header + body


async def handshake_initiate(
    reader: asyncio.StreamReader,
    writer: asyncio.StreamWriter,
    identity: StaticIdentity,
    pinned_server_public: bytes,
    timeout: float = HANDSHAKE_TIMEOUT,
) -> SessionKeys:
    """Robot side of the handshake; raises HandshakeError on any mismatch."""
    ephemeral = generate_ephemeral()
    nonce = os.urandom(NONCE_LEN)
    writer.write(build_hello(identity, public_bytes(ephemeral.public_key()), nonce))
    await writer.drain()
    try:
        ack = await read_envelope_frame(reader, timeout)
    except asyncio.TimeoutError as exc:
        raise HandshakeError("timed out waiting for HELLO_ACK") from exc
    except asyncio.IncompleteReadError as exc:
        raise HandshakeError("connection closed during handshake") from exc
    server_ephemeral = verify_hello_ack(ack, pinned_server_public, nonce)
    try:
        aes_key = derive_session_key(ephemeral, server_ephemeral)
    except InvalidPeerKey as exc:
        raise HandshakeError(f"server ephemeral key invalid: {exc}") from exc
    return SessionKeys(
        aes_key=aes_key,
        peer_id=peer_id_for_public(pinned_server_public),
        peer_static_public=load_public_key(pinned_server_public),
    )


async def handshake_respond(
    reader: asyncio.StreamReader,
    writer: asyncio.StreamWriter,
    identity: StaticIdentity,
    allowlist: dict[bytes, bytes],
    timeout: float = HANDSHAKE_TIMEOUT,
) -> tuple[bytes, SessionKeys]:
    """Server side; returns (robot_id, session keys) once the HELLO checks out."""
    try:
        hello = await read_envelope_frame(reader, timeout)
    except asyncio.TimeoutError as exc:
        raise HandshakeError("timed out waiting for HELLO") from exc
    except asyncio.IncompleteReadError as exc:
        raise HandshakeError("connection closed during handshake") from exc
    robot_id, robot_ephemeral, nonce = verify_hello(hello, allowlist)
    ephemeral = generate_ephemeral()
    writer.write(build_hello(identity, public_bytes(ephemeral.public_key()), nonce, ack=True))
    await writer.drain()
    try:
        aes_key = derive_session_key(ephemeral, robot_ephemeral)
    except InvalidPeerKey as exc:
        raise HandshakeError(f"robot ephemeral key invalid: {exc}") from exc
    keys = SessionKeys(
        aes_key=aes_key,
        peer_id=robot_id,
        peer_static_public=load_public_key(allowlist[robot_id]),
    )
    return robot_id, keys
