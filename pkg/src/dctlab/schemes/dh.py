"""Diffie-Hellman encounter-token scheme (the TraceCORONA family).

Instead of broadcasting identifiers, devices advertise an opaque per-window
pseudonym and establish a BLE *connection* with peers they stay near. Over
the connection both sides exchange the full ephemeral public key for the
current rotation window (public keys do not fit in an advertisement), and
once accumulated co-presence reaches the minimum encounter duration each
side derives the shared encounter token. Private keys never leave the
device, so only the two participants can know a token.

Reporting uploads, per encounter, the SHA-256 of the token plus the
handshake start time sealed under a token-derived AEAD key. A counterpart
matches by hashing its own tokens, opening the sealed timestamp, and
accepting only when the two recorded times differ by at most epsilon.

Consequences exercised by the adversary lab:

* one-way relays get nothing: copying beacons cannot complete a handshake;
* real-time two-way relays are capped by the 8-connection radio budget and
  defeated outright when the wormhole's latency exceeds epsilon;
* a claimant holding only the public feed cannot produce any token that
  superspreader verification would accept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..crypto_core import (
    EncounterToken,
    EphemeralKeyPair,
    GroupParams,
    b64,
    dh_token,
    hash_token,
    keygen,
    open_timestamp,
    seal_timestamp,
    unb64,
)
from ..errors import ConfigurationError, HandshakeError
from ..radio import Connection, DeviceClient, IDENTIFIER_FIELD_LEN
from ..rng import SeedStream


@dataclass(frozen=True)
class DhConfig:
    rotation_s: int = 900            # new key pair every T (e.g. 15) minutes
    min_encounter_s: int = 300       # no token for shorter brushes (e.g. 5 minutes)
    epsilon_s: int = 60              # max |reporter ts - local ts| for a match
    superspreader_threshold: int = 3
    anonymized_upload: bool = False  # postbox mitigation, modeled not implemented
    defer_token_computation: bool = False  # battery deferral note; a no-op here
    group: GroupParams = field(default_factory=GroupParams.production)

    def __post_init__(self):
        if not self.min_encounter_s < self.rotation_s:
            raise ConfigurationError("min_encounter_s must be below rotation_s")
        if self.epsilon_s <= 0:
            raise ConfigurationError("epsilon_s must be positive")


@dataclass
class EncounterRecord:
    token: EncounterToken
    my_timestamp: int       # handshake start on this device's clock
    peer_pub: bytes
    duration_s: int


@dataclass(frozen=True)
class DhUploadEntry:
    token_hash: bytes
    sealed_meta: bytes

    def as_dict(self) -> dict:
        return {"hash_hex": self.token_hash.hex(), "meta_b64": b64(self.sealed_meta)}


@dataclass(frozen=True)
class DhExposure:
    token_hash_hex: str
    delta_s: int
    window_index: int

    def as_dict(self) -> dict:
        return {"hash_hex": self.token_hash_hex, "delta_s": self.delta_s,
                "window": self.window_index}


@dataclass
class PendingEncounter:
    """Handshake in flight for one (peer, rotation window)."""

    peer_id: str
    epoch: int
    started_at: int
    accrued_s: int = 0
    token: EncounterToken | None = None
    peer_pub: bytes | None = None
    paired_epoch: int | None = None
    record: EncounterRecord | None = None


def report_infection_dh(records: list[EncounterRecord], tan: str,
                        anonymized_upload: bool = False) -> dict:
    """Upload bundle: token hash + sealed handshake timestamp per encounter.
    Raw token bytes never appear here."""
    entries = [DhUploadEntry(hash_token(r.token),
                             seal_timestamp(r.token, r.my_timestamp))
               for r in records]
    return {"scheme": "dh", "tan": tan, "anonymized": anonymized_upload,
            "entries": [e.as_dict() for e in entries]}


def match_exposures_dh(records: list[EncounterRecord], published: list[dict],
                       cfg: DhConfig) -> list[DhExposure]:
    """A record matches a published entry when the token hashes agree, the
    sealed metadata opens under the local token, and the two handshake
    timestamps differ by at most epsilon. Entries that fail authentication
    are ignored. At most one exposure per local record."""
    by_hash: dict[str, list[dict]] = {}
    for entry in published:
        by_hash.setdefault(entry["hash_hex"], []).append(entry)
    out = []
    for rec in records:
        h = hash_token(rec.token).hex()
        for entry in by_hash.get(h, ()):
            remote_ts = open_timestamp(rec.token, unb64(entry["meta_b64"]))
            if remote_ts is None:
                continue
            delta = abs(rec.my_timestamp - remote_ts)
            if delta <= cfg.epsilon_s:
                out.append(DhExposure(h, delta, rec.token.window_index))
                break
    return out


def superspreader_check(records: list[EncounterRecord], published: list[dict],
                        cfg: DhConfig) -> dict:
    """Count own tokens whose hash appears in the published feed. Warn at the
    threshold; the matched raw tokens are released only through this flow,
    as the proof the service provider verifies against published hashes."""
    published_hashes = {e["hash_hex"] for e in published}
    matched = [r.token for r in records if hash_token(r.token).hex() in published_hashes]
    warn = len(matched) >= cfg.superspreader_threshold
    return {"warn": warn, "matches": len(matched), "proof": matched if warn else []}


def encode_proof(tokens: list[EncounterToken], group: GroupParams) -> dict:
    """Proof wire form: hex for the toy group, base64 for the production one."""
    if group.kind == "toy-modp":
        return {"tokens": [t.secret.hex() for t in tokens], "encoding": "hex"}
    return {"tokens": [b64(t.secret) for t in tokens], "encoding": "b64"}


class DhClient(DeviceClient):
    def __init__(self, stream: SeedStream, cfg: DhConfig | None = None):
        self.cfg = cfg or DhConfig()
        self.stream = stream
        self.records: list[EncounterRecord] = []
        self.reported = False
        self.known_published: list[dict] = []
        self._keypairs: dict[int, EphemeralKeyPair] = {}
        self._pseudonyms: dict[int, bytes] = {}
        self._pending: dict[tuple[str, int], PendingEncounter] = {}
        self._peer_keys: dict[tuple[str, int], bytes] = {}
        self._keys_sent: dict[tuple[int, int], bool] = {}   # (cid, epoch)
        self._conns: dict[str, Connection] = {}
        self._aborted_peers: set[str] = set()
        self._notified_hashes: set[str] = set()
        self.rejected_keys = 0

    # -- key material ---------------------------------------------------------

    def epoch_of(self, local_t: int) -> int:
        return local_t // self.cfg.rotation_s

    def keypair(self, epoch: int, local_t: int = 0) -> EphemeralKeyPair:
        if epoch not in self._keypairs:
            self._keypairs[epoch] = keygen(self.cfg.group,
                                           self.stream.child(f"key:{epoch}"),
                                           epoch, created_at=local_t)
        return self._keypairs[epoch]

    def advertisement_identifier(self, local_t: int) -> bytes:
        """Beacons carry only an opaque per-window pseudonym; the public key
        (32 bytes) cannot fit and travels over connections instead."""
        epoch = self.epoch_of(local_t)
        if epoch not in self._pseudonyms:
            self._pseudonyms[epoch] = self.stream.child(f"pseudo:{epoch}").take(IDENTIFIER_FIELD_LEN)
        return self._pseudonyms[epoch]

    # -- handshake --------------------------------------------------------------

    def wants_connection(self, peer_id: str, local_t: int) -> bool:
        return peer_id not in self._aborted_peers

    def on_connected(self, conn: Connection, local_t: int) -> None:
        self.handshake(conn, local_t)

    def on_disconnect(self, conn: Connection, local_t: int) -> None:
        peer = conn.peer_of(self.device_id)
        if self._conns.get(peer) is conn:
            del self._conns[peer]

    def handshake(self, conn: Connection, local_t: int) -> PendingEncounter | EncounterRecord:
        """Start (or continue) the two-way exchange for the current rotation
        window over an open connection. Returns the finalized record once
        co-presence reaches the minimum duration, the pending state before."""
        epoch = self.epoch_of(local_t)
        self._conns[conn.peer_of(self.device_id)] = conn
        pending = self._ensure_pending(conn.peer_of(self.device_id), epoch, local_t)
        self._ensure_key_sent(conn, epoch, local_t)
        return pending.record or pending

    def _ensure_pending(self, peer_id: str, epoch: int, local_t: int) -> PendingEncounter:
        key = (peer_id, epoch)
        if key not in self._pending:
            self._pending[key] = PendingEncounter(peer_id, epoch, started_at=local_t)
            self._try_pair_token(self._pending[key])
        return self._pending[key]

    def _ensure_key_sent(self, conn: Connection, epoch: int, local_t: int) -> None:
        if self._keys_sent.get((conn.cid, epoch)):
            return
        self._keys_sent[(conn.cid, epoch)] = True
        kp = self.keypair(epoch, local_t)
        conn.send(self.device_id, {"kind": "pubkey", "epoch": epoch, "key": kp.public.hex()})

    def on_message(self, conn: Connection, sender_id: str, payload: dict, local_t: int) -> None:
        if payload.get("kind") != "pubkey":
            return
        their_epoch = payload["epoch"]
        my_epoch = self.epoch_of(local_t)
        if abs(their_epoch - my_epoch) > 1:
            # stale or far-future key: not a legal handshake partner state
            self.rejected_keys += 1
            return
        peer_pub = bytes.fromhex(payload["key"])
        try:
            self.cfg.group.validate_public(peer_pub)
        except HandshakeError:
            self.rejected_keys += 1
            self._aborted_peers.add(sender_id)
            return
        self._peer_keys[(sender_id, their_epoch)] = peer_pub
        self._conns[sender_id] = conn
        self._ensure_key_sent(conn, my_epoch, local_t)
        pending = self._ensure_pending(sender_id, my_epoch, local_t)
        self._try_pair_token(pending)
        self._maybe_finalize(pending)

    def _pair_with(self, pending: PendingEncounter, peer_pub: bytes, epoch: int) -> None:
        kp = self.keypair(pending.epoch)
        pending.peer_pub = peer_pub
        pending.paired_epoch = epoch
        pending.token = dh_token(kp.secret, peer_pub, self.cfg.group,
                                 window_index=pending.epoch)

    def _try_pair_token(self, pending: PendingEncounter) -> None:
        """Pair my window key with the peer key of the same window; across a
        rotation boundary with skewed clocks, fall back to an adjacent-window
        key (the fallback choices of the two sides mirror each other, so the
        secrets still agree). A fallback pairing is upgraded in place if the
        exact-window key arrives before the record is finalized."""
        if pending.record is not None:
            return
        exact = self._peer_keys.get((pending.peer_id, pending.epoch))
        if exact is not None:
            if pending.paired_epoch != pending.epoch:
                self._pair_with(pending, exact, pending.epoch)
            return
        if pending.token is not None:
            return
        for e in (pending.epoch - 1, pending.epoch + 1):
            peer_pub = self._peer_keys.get((pending.peer_id, e))
            if peer_pub is not None:
                self._pair_with(pending, peer_pub, e)
                return

    def on_copresence_tick(self, peer_id: str, seconds: int, local_t: int) -> None:
        epoch = self.epoch_of(local_t)
        conn = self._conns.get(peer_id)
        if conn is not None and conn.open:
            # rotation rollover mid-connection: push the fresh window's key
            self._ensure_key_sent(conn, epoch, local_t)
        pending = self._ensure_pending(peer_id, epoch, local_t)
        pending.accrued_s += seconds
        self._try_pair_token(pending)
        self._maybe_finalize(pending)

    def _maybe_finalize(self, pending: PendingEncounter) -> None:
        if pending.record is not None or pending.token is None:
            return
        if pending.accrued_s < self.cfg.min_encounter_s:
            return
        pending.record = EncounterRecord(pending.token, pending.started_at,
                                         pending.peer_pub, pending.accrued_s)
        self.records.append(pending.record)

    # -- reporting and matching ---------------------------------------------------

    def make_report(self, tan: str) -> dict:
        self.reported = True
        return report_infection_dh(self.records, tan, self.cfg.anonymized_upload)

    def sync(self, feed_entries: list[dict], local_t: int) -> list[DhExposure]:
        known = {e["hash_hex"] for e in self.known_published}
        self.known_published.extend(e for e in feed_entries if e["hash_hex"] not in known)
        if self.reported:
            return []
        exposures = match_exposures_dh(self.records, self.known_published, self.cfg)
        fresh = [e for e in exposures if e.token_hash_hex not in self._notified_hashes]
        self._notified_hashes.update(e.token_hash_hex for e in fresh)
        return fresh

    def superspreader_check(self) -> dict:
        return superspreader_check(self.records, self.known_published, self.cfg)
