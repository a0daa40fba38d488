"""Decentralized daily-key scheme (the GAEN/DP3T-1 family).

Each device keeps one random 16-byte key per day and beacons the key's
derived identifier for the current 10-minute slot. On infection the daily
keys themselves are published, so matching happens on the phone: derive the
144 identifiers of each published key and intersect with the sighting log.

The weaknesses the adversary lab exercises are reproduced deliberately:

* a generous match validity window (default 7200 s) that admits relayed
  sightings recorded hours away from an identifier's nominal slot;
* publication of whole daily keys, which links all 144 identifiers of an
  infected device's day (tracking), and lets anyone fabricate "sightings"
  straight from the public feed (fake exposure claims, same-day replays).

The optional strict-freshness fix pins every published key to the length of
the sighting log at the moment the key first arrived in a feed sync; entries
appended after that cannot match the key. The pin is an append-order
watermark, not a timestamp, so it holds even when the device clock has been
manipulated. It ships off by default, mirroring deployed behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..crypto_core import DAY_S, IDENTIFIER_SLOT_S, Tek, derive_day_identifiers
from ..radio import DeviceClient
from ..rng import SeedStream

DEFAULT_VALIDITY_WINDOW_S = 7200
DEFAULT_RETENTION_DAYS = 14
STRICT_VALIDITY_WINDOW_S = 120   # the "fixed" profile


@dataclass
class TekStore:
    """At most retention_days daily keys, pruned oldest-first."""

    retention_days: int = DEFAULT_RETENTION_DAYS
    teks: dict[int, Tek] = field(default_factory=dict)

    def add(self, tek: Tek) -> None:
        self.teks[tek.day_index] = tek
        while len(self.teks) > self.retention_days:
            del self.teks[min(self.teks)]

    def retained(self) -> list[Tek]:
        return [self.teks[d] for d in sorted(self.teks)]


@dataclass(frozen=True)
class Sighting:
    identifier: bytes
    seen_at: int    # local clock at record time; this is what matching uses
    seq: int        # append order, immune to clock manipulation
    global_at: int  # simulator ground truth, never consulted by the scheme


class SightingLog:
    """Append-only within a run."""

    def __init__(self):
        self.entries: list[Sighting] = []
        self._by_id: dict[bytes, list[Sighting]] = {}

    def append(self, identifier: bytes, seen_at: int, global_at: int) -> Sighting:
        s = Sighting(identifier, seen_at, len(self.entries), global_at)
        self.entries.append(s)
        self._by_id.setdefault(identifier, []).append(s)
        return s

    def sightings_of(self, identifier: bytes) -> list[Sighting]:
        return self._by_id.get(identifier, [])


@dataclass(frozen=True)
class PublishedTek:
    tek: Tek
    published_at: int


@dataclass(frozen=True)
class Exposure:
    tek_hex: str
    day_index: int
    slot: int
    seen_at: int

    @property
    def key(self) -> tuple:
        return (self.tek_hex, self.slot)

    def as_dict(self) -> dict:
        return {"tek_hex": self.tek_hex, "day": self.day_index,
                "slot": self.slot, "seen_at": self.seen_at}


def publish_keys(store: TekStore, tan: str) -> dict:
    """Upload bundle: the raw daily keys become public by design."""
    return {
        "scheme": "tek",
        "tan": tan,
        "teks": [{"tek_hex": t.hex, "day": t.day_index} for t in store.retained()],
    }


def _slot_distance(seen_at: int, valid_from: int, valid_to: int) -> int:
    if seen_at < valid_from:
        return valid_from - seen_at
    if seen_at >= valid_to:
        return seen_at - (valid_to - 1)
    return 0


def match_exposures(log: SightingLog, published: list[PublishedTek],
                    validity_window_s: int = DEFAULT_VALIDITY_WINDOW_S,
                    strict_freshness: bool = False,
                    watermarks: dict[str, int] | None = None) -> list[Exposure]:
    """Intersect the sighting log with the identifier schedules of published
    keys. A sighting matches when the bytes are equal and its recorded local
    time lies within validity_window_s of the identifier's nominal slot.
    One exposure per matched (key, slot), not per sighting.

    With strict_freshness, a watermark map (tek_hex -> log length when the
    key first arrived) is required and sightings at or past the watermark
    are ignored for that key.
    """
    if strict_freshness and watermarks is None:
        raise ValueError("strict_freshness requires first-sight watermarks")
    out: list[Exposure] = []
    seen_keys: set[tuple] = set()
    for pub in published:
        cutoff = watermarks.get(pub.tek.hex) if strict_freshness else None
        for slot, ident in enumerate(derive_day_identifiers(pub.tek)):
            for s in log.sightings_of(ident.bytes):
                if cutoff is not None and s.seq >= cutoff:
                    continue
                if _slot_distance(s.seen_at, ident.valid_from, ident.valid_to) > validity_window_s:
                    continue
                exp = Exposure(pub.tek.hex, pub.tek.day_index, slot, s.seen_at)
                if exp.key not in seen_keys:
                    seen_keys.add(exp.key)
                    out.append(exp)
                break
    return out


def risk_summary(exposures: list[Exposure]) -> dict:
    days: dict[int, int] = {}
    for e in exposures:
        days[e.day_index] = days.get(e.day_index, 0) + 1
    return {"count": len(exposures), "days": {str(d): days[d] for d in sorted(days)}}


class TekClient(DeviceClient):
    def __init__(self, stream: SeedStream, *, validity_window_s: int = DEFAULT_VALIDITY_WINDOW_S,
                 strict_freshness: bool = False, retention_days: int = DEFAULT_RETENTION_DAYS):
        self.stream = stream
        self.validity_window_s = validity_window_s
        self.strict_freshness = strict_freshness
        self.store = TekStore(retention_days=retention_days)
        self.log = SightingLog()
        self.watermarks: dict[str, int] = {}
        self.known_published: list[PublishedTek] = []
        self.reported = False
        self._schedules: dict[int, list] = {}
        self._notified: set[tuple] = set()

    def tek_for_day(self, day: int) -> Tek:
        if day not in self.store.teks:
            self.store.add(Tek(self.stream.child(f"tek:{day}").take(16), day))
        return self.store.teks[day]

    def _schedule_for(self, day: int) -> list:
        if day not in self._schedules:
            self._schedules[day] = derive_day_identifiers(self.tek_for_day(day))
            if len(self._schedules) > 4:  # keep the cache small on long runs
                self._schedules.pop(min(self._schedules))
        return self._schedules[day]

    def advertisement_identifier(self, local_t: int) -> bytes:
        day, within = divmod(local_t, DAY_S)
        return self._schedule_for(day)[within // IDENTIFIER_SLOT_S].bytes

    def on_sighting(self, identifier: bytes, link_addr: bytes, local_t: int, global_t: int) -> None:
        self.log.append(identifier, local_t, global_t)

    def make_report(self, tan: str) -> dict:
        self.reported = True
        return publish_keys(self.store, tan)

    def sync(self, feed_entries: list[dict], local_t: int) -> list[Exposure]:
        """Ingest new feed entries and return not-yet-seen exposures."""
        known = {p.tek.hex for p in self.known_published}
        for e in feed_entries:
            if e["tek_hex"] in known:
                continue
            self.known_published.append(
                PublishedTek(Tek(bytes.fromhex(e["tek_hex"]), e["day"]), e["published_at"]))
            self.watermarks.setdefault(e["tek_hex"], len(self.log.entries))
        own = {t.hex for t in self.store.retained()} if self.reported else set()
        exposures = match_exposures(self.log,
                                    [p for p in self.known_published if p.tek.hex not in own],
                                    self.validity_window_s,
                                    self.strict_freshness,
                                    self.watermarks)
        fresh = [e for e in exposures if e.key not in self._notified]
        self._notified.update(e.key for e in fresh)
        return fresh
