"""P-256 identities, key files, and ECDH session-key derivation.

Primitives come from the ``cryptography`` library; this module owns the
composition: raw 32-byte scalars and 65-byte uncompressed SEC1 points on
disk (hex, one per line), identity ids derived from public keys, and the
SHA-256 KDF over the ECDH shared x-coordinate.
"""

from __future__ import annotations

import hashlib
import os
import stat
from dataclasses import dataclass
from pathlib import Path

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from cryptography.exceptions import InvalidSignature

CURVE = ec.SECP256R1()
# Order of the P-256 base point; scalars must fall in [1, ORDER - 1].
CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

SIGNATURE_LEN = 64
PUBLIC_KEY_LEN = 65
IDENTITY_ID_LEN = 16


class InvalidPeerKey(ValueError):
    """Peer public key is off-curve, malformed, or the point at infinity."""


@dataclass
class StaticIdentity:
    """A long-lived signing identity; the id is bound to the public key."""

    identity_id: bytes
    private: ec.EllipticCurvePrivateKey

    @property
    def public(self) -> ec.EllipticCurvePublicKey:
        return self.private.public_key()

    def public_bytes(self) -> bytes:
        return public_bytes(self.public)

    def sign(self, message: bytes) -> bytes:
        """ECDSA-P256-SHA256 signature as fixed-width 64-byte r||s."""
        der = self.private.sign(message, ec.ECDSA(hashes.SHA256()))
        r, s = decode_dss_signature(der)
        return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify_signature(public: ec.EllipticCurvePublicKey, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_LEN:
        return False
    r = int.from_bytes(signature[:32], "big")
    s = int.from_bytes(signature[32:], "big")
    if not (0 < r < CURVE_ORDER and 0 < s < CURVE_ORDER):
        return False
    try:
        public.verify(encode_dss_signature(r, s), message, ec.ECDSA(hashes.SHA256()))
        return True
    except InvalidSignature:
        return False


def public_bytes(public: ec.EllipticCurvePublicKey) -> bytes:
    return public.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


def load_public_key(data: bytes) -> ec.EllipticCurvePublicKey:
    if len(data) != PUBLIC_KEY_LEN or data[0] != 0x04:
        raise InvalidPeerKey(f"public key must be {PUBLIC_KEY_LEN} bytes of uncompressed SEC1")
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, data)
    except ValueError as exc:
        raise InvalidPeerKey(f"point rejected: {exc}") from exc


def peer_id_for_public(public_sec1: bytes) -> bytes:
    """16-byte identity id, deterministically derived from the public key."""
    return hashlib.sha256(public_sec1).digest()[:IDENTITY_ID_LEN]


def identity_from_scalar(scalar: bytes) -> StaticIdentity:
    if len(scalar) != 32:
        raise InvalidPeerKey("private scalar must be 32 bytes")
    value = int.from_bytes(scalar, "big")
    if not 0 < value < CURVE_ORDER:
        raise InvalidPeerKey("private scalar out of range for P-256")
    private = ec.derive_private_key(value, CURVE)
    return StaticIdentity(
        identity_id=peer_id_for_public(public_bytes(private.public_key())), private=private
    )


def generate_keypair(seed: bytes | None = None) -> StaticIdentity:
    """Fresh P-256 identity; a seed makes generation deterministic (tests)."""
    if seed is None:
        private = ec.generate_private_key(CURVE)
        return StaticIdentity(
            identity_id=peer_id_for_public(public_bytes(private.public_key())), private=private
        )
    counter = 0
    while True:
        digest = hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        value = int.from_bytes(digest, "big")
        if 0 < value < CURVE_ORDER:
            return identity_from_scalar(digest)
        counter += 1


def generate_ephemeral() -> ec.EllipticCurvePrivateKey:
    return ec.generate_private_key(CURVE)


def derive_session_key(
    own_private: ec.EllipticCurvePrivateKey, peer_public_sec1: bytes
) -> bytes:
    """32-byte AES key = SHA-256 of the ECDH shared point's x-coordinate."""
    peer = load_public_key(peer_public_sec1)
    shared_x = own_private.exchange(ec.ECDH(), peer)  # 32 bytes, big-endian
    return hashlib.sha256(shared_x).digest()


def private_scalar_bytes(private: ec.EllipticCurvePrivateKey) -> bytes:
    return private.private_numbers().private_value.to_bytes(32, "big")


def save_private_key_file(path: str | Path, identity: StaticIdentity) -> None:
    path = Path(path)
    path.write_text(private_scalar_bytes(identity.private).hex() + "\n")
    os.chmod(path, stat.S_IRUSR | stat.S_IWUSR)


def load_private_key_file(path: str | Path) -> StaticIdentity:
    line = Path(path).read_text().strip().splitlines()[0].strip()
    return identity_from_scalar(bytes.fromhex(line))


def save_public_key_file(path: str | Path, publics: list[bytes] | bytes) -> None:
    if isinstance(publics, bytes):
        publics = [publics]
    Path(path).write_text("".join(p.hex() + "\n" for p in publics))


def load_public_key_file(path: str | Path) -> list[bytes]:
    """All public keys in a file, one hex-armored SEC1 point per line."""
    keys = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            data = bytes.fromhex(line)
        except ValueError as exc:
            raise InvalidPeerKey(f"{path}:{lineno}: not hex") from exc
        load_public_key(data)  # validate early
        keys.append(data)
    return keys
