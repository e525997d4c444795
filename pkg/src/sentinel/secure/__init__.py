"""Authenticated, optionally encrypted robot-to-server messaging.

Session keys come from an ephemeral ECDH (P-256) agreement authenticated by
static ECDSA identities; payloads travel in a fixed binary envelope that is
signed (class 1) or AES-256-CBC encrypted then signed (class 2). Signatures
are verified before any decryption.
"""

from sentinel.secure.envelope import (
    CLASS_ENCRYPTED_SIGNED,
    CLASS_PLAIN,
    CLASS_SIGNED,
    MSG_ACK,
    MSG_CLIP_UPLOAD,
    MSG_COMMAND,
    MSG_ERROR,
    MSG_FIRE_ALERT,
    MSG_FRAME,
    MSG_HELLO,
    MSG_HELLO_ACK,
    MSG_MOTION_EVENT,
    MSG_STATUS,
    BadPadding,
    BadSignature,
    ChannelError,
    Envelope,
    MalformedEnvelope,
    PolicyViolation,
    ReplayedSequence,
    SessionKeys,
    UnknownSender,
    decode_envelope,
    default_policy,
    encode_envelope,
    open_envelope,
    seal,
)
from sentinel.secure.handshake import (
    HandshakeError,
    handshake_initiate,
    handshake_respond,
    read_envelope_frame,
)
from sentinel.secure.keys import (
    InvalidPeerKey,
    StaticIdentity,
    derive_session_key,
    generate_keypair,
    identity_from_scalar,
    load_private_key_file,
    load_public_key,
    load_public_key_file,
    peer_id_for_public,
    public_bytes,
    save_private_key_file,
    save_public_key_file,
)

__all__ = [
    "CLASS_PLAIN",
    "CLASS_SIGNED",
    "CLASS_ENCRYPTED_SIGNED",
    "MSG_HELLO",
    "MSG_HELLO_ACK",
    "MSG_COMMAND",
    "MSG_STATUS",
    "MSG_FRAME",
    "MSG_FIRE_ALERT",
    "MSG_MOTION_EVENT",
    "MSG_CLIP_UPLOAD",
    "MSG_ACK",
    "MSG_ERROR",
    "ChannelError",
    "MalformedEnvelope",
    "UnknownSender",
    "PolicyViolation",
    "BadSignature",
    "ReplayedSequence",
    "BadPadding",
    "HandshakeError",
    "InvalidPeerKey",
    "Envelope",
    "SessionKeys",
    "StaticIdentity",
    "encode_envelope",
    "decode_envelope",
    "default_policy",
    "seal",
    "open_envelope",
    "generate_keypair",
    "identity_from_scalar",
    "derive_session_key",
    "peer_id_for_public",
    "public_bytes",
    "load_public_key",
    "save_private_key_file",
    "load_private_key_file",
    "save_public_key_file",
    "load_public_key_file",
    "handshake_initiate",
    "handshake_respond",
    "read_envelope_frame",
]
