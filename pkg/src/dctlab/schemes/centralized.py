"""Centralized scheme (the BlueTrace/PEPP-PT family).

Devices register with the service provider and get a pseudonymous user id.
Identifiers rotate every 15 minutes by default and are either derived
locally from the user id (pepp_pt variant) or pulled as pre-generated
batches the server computed under its master key (bluetrace variant).

The defining property: an infected user uploads the identifiers it
*observed*, and the server resolves each one back to the user that emitted
it. Matching happens server-side against the registry, which is also why
this architecture exposes the full contact multiset of every uploader to
the operator. That exposure is exactly what the adversary lab's
social-graph and collusion scenarios measure.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..crypto_core import (
    DAY_S,
    Identifier,
    MasterKey,
    derive_bluetrace_id,
    derive_centralized_id,
)
from ..errors import ProtocolError
from ..radio import DeviceClient
from ..rng import SeedStream

DEFAULT_ROTATION_S = 900       # "10 to 15 minutes"; exposed as a parameter
VARIANT_BLUETRACE = "bluetrace"
VARIANT_PEPP_PT = "pepp_pt"
MODE_ANONYMOUS = "anonymous"
MODE_PHONE = "phone"
SIGHTING_MERGE_GAP_S = 60
IV_LEN = 16
AUTH_TAG_LEN = 8


@dataclass(frozen=True)
class CentralRegistration:
    user_id: str
    mode: str
    phone: str | None = None


@dataclass
class ObservedRecord:
    identifier: bytes
    first_seen: int
    last_seen: int
    observer_clock: int

    def as_dict(self) -> dict:
        return {"id_hex": self.identifier.hex(),
                "first_seen": self.first_seen, "last_seen": self.last_seen}


class CentralRegistry:
    """Server-side user registry plus identifier resolution.

    For the bluetrace variant the registry keeps the (iv, auth_tag, window)
    of every identifier it issued and re-derives under the master key when
    resolving, rather than trusting the lookup index.
    """

    def __init__(self, stream: SeedStream, variant: str = VARIANT_BLUETRACE,
                 rotation_s: int = DEFAULT_ROTATION_S):
        if variant not in (VARIANT_BLUETRACE, VARIANT_PEPP_PT):
            raise ProtocolError(f"unknown centralized variant {variant!r}")
        self.variant = variant
        self.rotation_s = rotation_s
        self.stream = stream
        self.master = MasterKey(stream.child("master").take(32))
        self.users: dict[str, CentralRegistration] = {}
        self.device_of: dict[str, str] = {}
        self._batch_index: dict[bytes, tuple[str, int, bytes, bytes]] = {}
        self._issued_batches: dict[tuple[str, int], list[dict]] = {}

    @property
    def batch_size(self) -> int:
        return DAY_S // self.rotation_s

    def register(self, device_id: str, mode: str = MODE_ANONYMOUS,
                 phone: str | None = None) -> CentralRegistration:
        user_id = "u-" + self.stream.child(f"uid:{len(self.users)}").take(6).hex()
        reg = CentralRegistration(user_id, mode, phone)
        self.users[user_id] = reg
        self.device_of[user_id] = device_id
        return reg

    def issue_batch(self, user_id: str, day: int) -> list[dict]:
        """Pre-generated identifiers for one day (bluetrace pull)."""
        if user_id not in self.users:
            raise ProtocolError(f"unknown user {user_id}")
        cached = self._issued_batches.get((user_id, day))
        if cached is not None:
            return cached
        batch = []
        base = day * self.batch_size
        batch_stream = self.stream.child(f"batch:{user_id}:{day}")
        for i in range(self.batch_size):
            t_k = base + i
            iv = batch_stream.take(IV_LEN)
            auth_tag = batch_stream.take(AUTH_TAG_LEN)
            ident = derive_bluetrace_id(user_id, t_k, iv, auth_tag, self.master, self.rotation_s)
            self._batch_index[ident.bytes] = (user_id, t_k, iv, auth_tag)
            batch.append({"id_hex": ident.hex, "t_k": t_k,
                          "valid_from": ident.valid_from, "valid_to": ident.valid_to})
        self._issued_batches[(user_id, day)] = batch
        return batch

    def resolve(self, identifier: bytes, first_seen: int, last_seen: int) -> str | None:
        """Map an uploaded identifier back to the user that emitted it."""
        if self.variant == VARIANT_BLUETRACE:
            hit = self._batch_index.get(identifier)
            if hit is None:
                return None
            user_id, t_k, iv, auth_tag = hit
            rederived = derive_bluetrace_id(user_id, t_k, iv, auth_tag, self.master, self.rotation_s)
            return user_id if rederived.bytes == identifier else None
        lo = first_seen // self.rotation_s - 1
        hi = last_seen // self.rotation_s + 1
        for user_id in self.users:
            for t_k in range(lo, hi + 1):
                if derive_centralized_id(user_id, t_k, self.rotation_s).bytes == identifier:
                    return user_id
        return None


def report_infection(records: list[ObservedRecord], tan: str) -> dict:
    """Upload bundle: the observed identifiers with their raw timestamps.
    This plaintext exposure is the heart of the centralized privacy critique."""
    return {"scheme": "centralized", "tan": tan,
            "records": [r.as_dict() for r in records]}


def server_match(records: list[dict], registry: CentralRegistry) -> dict[str, list[tuple[int, int]]]:
    """Resolve uploaded records to user ids; unresolvable ones are skipped.
    Returns user_id -> contact intervals (one per resolved record)."""
    matches: dict[str, list[tuple[int, int]]] = {}
    for rec in records:
        user_id = registry.resolve(bytes.fromhex(rec["id_hex"]),
                                   rec["first_seen"], rec["last_seen"])
        if user_id is None:
            continue
        matches.setdefault(user_id, []).append((rec["first_seen"], rec["last_seen"]))
    return matches


class CentralizedClient(DeviceClient):
    def __init__(self, registry: CentralRegistry, *, mode: str = MODE_ANONYMOUS,
                 phone: str | None = None):
        self.registry = registry
        self.rotation_s = registry.rotation_s
        self.mode = mode
        self.phone = phone
        self.registration: CentralRegistration | None = None
        self.records: list[ObservedRecord] = []
        self._last_by_id: dict[bytes, ObservedRecord] = {}
        self._batches: dict[int, dict[int, bytes]] = {}

    def register(self) -> CentralRegistration:
        self.registration = self.registry.register(self.device_id, self.mode, self.phone)
        return self.registration

    def _require_registration(self) -> CentralRegistration:
        if self.registration is None:
            raise ProtocolError("device is not registered")
        return self.registration

    def _pulled_batch(self, day: int) -> dict[int, bytes]:
        if day not in self._batches:
            reg = self._require_registration()
            batch = self.registry.issue_batch(reg.user_id, day)
            self._batches[day] = {e["t_k"]: bytes.fromhex(e["id_hex"]) for e in batch}
        return self._batches[day]

    def _identifier_for_window(self, t_k: int) -> bytes:
        reg = self._require_registration()
        if self.registry.variant == VARIANT_BLUETRACE:
            return self._pulled_batch((t_k * self.rotation_s) // DAY_S)[t_k]
        return derive_centralized_id(reg.user_id, t_k, self.rotation_s).bytes

    def advertisement_identifier(self, local_t: int) -> bytes:
        return self._identifier_for_window(local_t // self.rotation_s)

    def beacon_schedule(self, window_start: int, window_end: int) -> list[Identifier]:
        """One identifier per rotation period covering [window_start, window_end)."""
        self._require_registration()
        out = []
        for t_k in range(window_start // self.rotation_s,
                         (window_end + self.rotation_s - 1) // self.rotation_s):
            out.append(Identifier(self._identifier_for_window(t_k),
                                  valid_from=t_k * self.rotation_s,
                                  valid_to=(t_k + 1) * self.rotation_s))
        return out

    def on_sighting(self, identifier: bytes, link_addr: bytes, local_t: int, global_t: int) -> None:
        rec = self._last_by_id.get(identifier)
        if rec is not None and local_t - rec.last_seen <= SIGHTING_MERGE_GAP_S:
            rec.last_seen = max(rec.last_seen, local_t)
            return
        rec = ObservedRecord(identifier, local_t, local_t, local_t)
        self.records.append(rec)
        self._last_by_id[identifier] = rec

    def make_report(self, tan: str) -> dict:
        self._require_registration()
        return report_infection(self.records, tan)
