"""Cryptographic primitives and key-schedule derivations shared by all schemes.

Three identifier schedules live here:

* centralized: ``id = HKDF(user_id, t_k)``, optionally keyed by a server
  master key with a per-identifier IV and authenticity tag (the pre-generated
  batch flavor);
* decentralized key-schedule: one 16-byte daily key from which the day's 144
  rotating identifiers are derived (10-minute slots, 24*6 = 144);
* encounter tokens: an ephemeral Diffie-Hellman shared secret per rotation
  window, established over a two-way exchange and never transmitted raw.
  Only its SHA-256 hash and metadata sealed under a token-derived AEAD key
  ever leave the device.

All derivations are pure functions of their inputs. HKDF is HKDF-SHA256
(RFC 5869); epoch indexes enter KDF inputs as 8-byte big-endian integers.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import ConfigurationError, HandshakeError
from .rng import SeedStream

IDENTIFIER_LEN = 16          # BLE advertising leaves space for 128 bits only
IDENTIFIER_SLOT_S = 600      # 10-minute identifier slots
IDENTIFIERS_PER_DAY = 144    # 24 * 6
DAY_S = 86400
TOKEN_HASH_LEN = 32          # published token hashes are full SHA-256 digests


# ---------------------------------------------------------------------------
# HKDF-SHA256 (RFC 5869)
# ---------------------------------------------------------------------------

def hkdf_sha256(ikm: bytes, salt: bytes | None, info: bytes, length: int) -> bytes:
    """HMAC-based key derivation. Independent of library HKDFs on purpose:
    the test suite cross-checks this against one."""
    if length > 255 * 32:
        raise ValueError("HKDF output too long")
    prk = hmac.new(salt or b"\x00" * 32, ikm, hashlib.sha256).digest()
    okm = b""
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:length]


def encode_epoch(t_k: int) -> bytes:
    """Epoch index as it enters every KDF input: 8-byte big-endian, signed
    so that windows before the scenario origin (shifted clocks) encode too."""
    return struct.pack(">q", t_k)


# ---------------------------------------------------------------------------
# Group abstraction: toy multiplicative group mod p, or X25519
# ---------------------------------------------------------------------------

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _is_probable_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3e24 with the fixed base set."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


KIND_TOY = "toy-modp"
KIND_PRODUCTION = "production-curve"
PRODUCTION_CURVE_ID = "x25519"
PRODUCTION_KEY_LEN = 32      # 256-bit keys, the floor for standardized ECDH


@dataclass(frozen=True)
class GroupParams:
    """Where Diffie-Hellman happens: a hand-checkable toy group or X25519."""

    kind: str
    modulus: int | None = None
    generator: int | None = None
    curve_id: str = PRODUCTION_CURVE_ID

    @classmethod
    def toy(cls, p: int, g: int) -> "GroupParams":
        params = cls(kind=KIND_TOY, modulus=p, generator=g)
        params.validate()
        return params

    @classmethod
    def production(cls) -> "GroupParams":
        return cls(kind=KIND_PRODUCTION)

    def validate(self) -> None:
        if self.kind == KIND_TOY:
            if self.modulus is None or self.generator is None:
                raise ConfigurationError("toy-modp group needs modulus and generator")
            if not _is_probable_prime(self.modulus):
                raise ConfigurationError(f"toy-modp modulus {self.modulus} is not prime")
            g, p = self.generator, self.modulus
            if not 1 < g < p or pow(g, 2, p) == 1:
                raise ConfigurationError("generator must generate a subgroup of order > 2")
        elif self.kind == KIND_PRODUCTION:
            if self.curve_id != PRODUCTION_CURVE_ID:
                raise ConfigurationError(f"unknown production curve {self.curve_id!r}")
        else:
            raise ConfigurationError(f"unknown group kind {self.kind!r}")

    @property
    def element_size(self) -> int:
        """Byte length of a canonically serialized group element."""
        if self.kind == KIND_TOY:
            return (self.modulus.bit_length() + 7) // 8
        return PRODUCTION_KEY_LEN

    def encode_element(self, value: int) -> bytes:
        """Fixed-length big-endian encoding (toy group only)."""
        return value.to_bytes(self.element_size, "big")

    def decode_element(self, data: bytes) -> int:
        return int.from_bytes(data, "big")

    def validate_public(self, public: bytes) -> None:
        """Reject the identity element and out-of-group encodings."""
        if len(public) != self.element_size:
            raise HandshakeError(f"public key must be {self.element_size} bytes")
        if self.kind == KIND_TOY:
            value = self.decode_element(public)
            # 0/1 are not usable, p-1 has order 2: all make the shared
            # secret predictable regardless of our scalar.
            if value <= 1 or value >= self.modulus - 1:
                raise HandshakeError("public key is the identity or out of group")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EphemeralKeyPair:
    """Per-rotation-window DH key pair. The secret never leaves the device."""

    secret: int | bytes = field(repr=False)
    public: bytes
    epoch_index: int
    created_at: int = 0


@dataclass(frozen=True)
class Identifier:
    """16-byte rotating beacon payload with its validity window (seconds)."""

    bytes: bytes
    valid_from: int = 0
    valid_to: int = 0

    def __post_init__(self):
        if len(self.bytes) != IDENTIFIER_LEN:
            raise ConfigurationError(f"identifier must be {IDENTIFIER_LEN} bytes")

    @property
    def hex(self) -> str:
        return self.bytes.hex()


@dataclass(frozen=True)
class Tek:
    """Daily exposure key; published wholesale on an infection report."""

    bytes: bytes
    day_index: int

    @property
    def hex(self) -> str:
        return self.bytes.hex()


@dataclass(frozen=True)
class EncounterToken:
    """Shared DH secret for one encounter window. Both parties derive
    bit-identical secret bytes; uploads carry only hash_token(self)."""

    secret: bytes = field(repr=False)
    window_index: int = 0


@dataclass(frozen=True)
class MasterKey:
    """Server-side secret for pre-generated identifier batches."""

    bytes: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.bytes) != 32:
            raise ConfigurationError("master key must be 32 bytes")


# ---------------------------------------------------------------------------
# Key generation and token agreement
# ---------------------------------------------------------------------------

def keygen(params: GroupParams, stream: SeedStream, epoch: int, created_at: int = 0) -> EphemeralKeyPair:
    """Draw a fresh key pair for one rotation window from a seed stream."""
    params.validate()
    if params.kind == KIND_TOY:
        while True:
            secret = 1 + stream.randrange(params.modulus - 2)
            value = pow(params.generator, secret, params.modulus)
            # resample scalars whose public key is the identity or the lone
            # order-2 element; peers reject those encodings
            if 1 < value < params.modulus - 1:
                break
        public = params.encode_element(value)
        return EphemeralKeyPair(secret=secret, public=public, epoch_index=epoch, created_at=created_at)
    secret = stream.take(PRODUCTION_KEY_LEN)
    public = X25519PrivateKey.from_private_bytes(secret).public_key().public_bytes_raw()
    return EphemeralKeyPair(secret=secret, public=public, epoch_index=epoch, created_at=created_at)


def dh_token(my_secret: int | bytes, their_public: bytes, params: GroupParams,
             window_index: int = 0) -> EncounterToken:
    """Shared encounter token: their_public raised to my secret. Symmetric by
    construction; private keys are never exchanged."""
    params.validate_public(their_public)
    if params.kind == KIND_TOY:
        shared = pow(params.decode_element(their_public), my_secret, params.modulus)
        return EncounterToken(secret=params.encode_element(shared), window_index=window_index)
    try:
        shared = X25519PrivateKey.from_private_bytes(my_secret).exchange(
            X25519PublicKey.from_public_bytes(their_public))
    except ValueError as exc:
        # the library reports an all-zero shared secret (identity/low-order
        # peer point) as ValueError
        raise HandshakeError(f"invalid peer public key: {exc}") from exc
    return EncounterToken(secret=shared, window_index=window_index)


# ---------------------------------------------------------------------------
# Identifier schedules
# ---------------------------------------------------------------------------

def _as_bytes(value: str | bytes) -> bytes:
    return value.encode() if isinstance(value, str) else value


def derive_centralized_id(user_id: str | bytes, t_k: int, rotation_s: int = 900) -> Identifier:
    """id = HKDF(user_id, t_k), truncated to 16 bytes."""
    raw = hkdf_sha256(_as_bytes(user_id), None, encode_epoch(t_k), IDENTIFIER_LEN)
    return Identifier(raw, valid_from=t_k * rotation_s, valid_to=(t_k + 1) * rotation_s)


def derive_bluetrace_id(user_id: str | bytes, t_k: int, iv: bytes, auth_tag: bytes,
                        master: MasterKey, rotation_s: int = 900) -> Identifier:
    """Four-input HKDF(user_id || t_k || IV || auth_tag) keyed by the server
    master key. Only the server can generate or verify these."""
    ikm = _as_bytes(user_id) + encode_epoch(t_k) + iv + auth_tag
    raw = hkdf_sha256(ikm, master.bytes, b"", IDENTIFIER_LEN)
    return Identifier(raw, valid_from=t_k * rotation_s, valid_to=(t_k + 1) * rotation_s)


def derive_day_identifiers(tek: Tek) -> list[Identifier]:
    """The day's full identifier schedule: 144 identifiers, one per 10-minute
    slot, each HKDF(tek, slot_index). Publication of the key therefore links
    every identifier of the day, which is exactly what the linkage attack
    exploits."""
    day_start = tek.day_index * DAY_S
    out = []
    for slot in range(IDENTIFIERS_PER_DAY):
        raw = hkdf_sha256(tek.bytes, None, encode_epoch(slot), IDENTIFIER_LEN)
        out.append(Identifier(raw,
                              valid_from=day_start + slot * IDENTIFIER_SLOT_S,
                              valid_to=day_start + (slot + 1) * IDENTIFIER_SLOT_S))
    return out


# ---------------------------------------------------------------------------
# Token hashing and sealed metadata
# ---------------------------------------------------------------------------

def hash_token(et: EncounterToken) -> bytes:
    """SHA-256 of the canonical token encoding; this is all an infected user
    ever publishes about an encounter."""
    return hashlib.sha256(et.secret).digest()


def _meta_keys(et: EncounterToken) -> tuple[bytes, bytes]:
    key = hkdf_sha256(et.secret, None, b"meta", 32)
    nonce_key = hkdf_sha256(et.secret, None, b"meta-nonce", 32)
    return key, nonce_key


def seal_metadata(et: EncounterToken, plaintext: bytes) -> bytes:
    """Authenticated encryption under a token-derived key. The nonce is a MAC
    of the plaintext, so sealing is deterministic and never reuses a nonce
    for distinct messages under the same token."""
    key, nonce_key = _meta_keys(et)
    nonce = hmac.new(nonce_key, plaintext, hashlib.sha256).digest()[:12]
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, None)


def open_metadata(et: EncounterToken, sealed: bytes) -> bytes | None:
    """Inverse of seal_metadata. Returns None on authentication failure: a
    wrong token is a no-match signal, not an error."""
    if len(sealed) < 12 + 16:
        return None
    key, _ = _meta_keys(et)
    try:
        return ChaCha20Poly1305(key).decrypt(sealed[:12], sealed[12:], None)
    except InvalidTag:
        return None


def encode_timestamp(ts: int) -> bytes:
    return struct.pack(">q", ts)


def decode_timestamp(data: bytes) -> int:
    return struct.unpack(">q", data)[0]


def seal_timestamp(et: EncounterToken, ts: int) -> bytes:
    return seal_metadata(et, encode_timestamp(ts))


def open_timestamp(et: EncounterToken, sealed: bytes) -> int | None:
    plain = open_metadata(et, sealed)
    if plain is None or len(plain) != 8:
        return None
    return decode_timestamp(plain)


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(data: str) -> bytes:
    return base64.b64decode(data.encode("ascii"))
