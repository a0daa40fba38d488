"""Executable attack models, run against any scheme inside the radio world.

Attacks come in two forms:

* installers, which hook the attack into a world before it runs (relay
  wormholes, sniffer networks, the clock-shifting replay), and
* analyses, pure functions over what the attacker could see afterwards
  (sighting linkage, social-graph extraction, fake-claim attempts).

Every attack is deterministic under the scenario seed: outcomes are counts,
not probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .crypto_core import (
    DAY_S,
    IDENTIFIER_SLOT_S,
    Tek,
    b64,
    derive_centralized_id,
    derive_day_identifiers,
)
from .errors import ConfigurationError
from .radio import LINK_ADDR_LEN, DeviceClient, World
from .rng import SeedStream
from .schemes.centralized import CentralRegistry
from .schemes.dh import DhConfig, match_exposures_dh
from .schemes.tek import PublishedTek, SightingLog, match_exposures
from .server import TracingServer

TWO_WAY_FANOUT_LIMIT = 8   # a phone sustains 8 BLE connections, no more


# ---------------------------------------------------------------------------
# Passive sniffing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SnifferObservation:
    at: int              # attacker clock == global time
    identifier: bytes
    link_addr: bytes
    sniffer_id: str


class SnifferClient(DeviceClient):
    """Passive collector: hears everything in range, emits nothing."""

    def __init__(self):
        self.observations: list[SnifferObservation] = []

    def advertisement_identifier(self, local_t):
        return None   # never advertises

    def on_sighting(self, identifier, link_addr, local_t, global_t):
        self.observations.append(
            SnifferObservation(global_t, identifier, link_addr, self.device_id))


class ReplayClient(DeviceClient):
    """Attack-controlled beacon; broadcasts whatever the attack armed it with."""

    def __init__(self):
        self.payload: bytes | None = None

    def advertisement_identifier(self, local_t):
        return self.payload


# ---------------------------------------------------------------------------
# Relay (wormhole) attacks
# ---------------------------------------------------------------------------

@dataclass
class RelayPair:
    """Two attacker nodes bridging distant locations.

    one_way_broadcast copies every advertisement heard near node_a to every
    device near node_b, with unlimited fanout. two_way_realtime keeps live
    relayed connections open so a full handshake can cross the wormhole, at
    most 8 per relayed victim, and every message is delayed by latency_s.
    """

    node_a: str
    node_b: str
    mode: str
    window: tuple[int, int]
    latency_s: int = 0
    fanout_limit: int = TWO_WAY_FANOUT_LIMIT
    tick_s: int = 60

    def __post_init__(self):
        if self.mode not in ("one_way_broadcast", "two_way_realtime"):
            raise ConfigurationError(f"unknown relay mode {self.mode!r}")
        self.fanout_limit = min(self.fanout_limit, TWO_WAY_FANOUT_LIMIT)


@dataclass
class AttackOutcome:
    false_notifications: int = 0
    details: dict = field(default_factory=dict)


def install_relay(world: World, pair: RelayPair) -> dict:
    """Wire a relay into the world; returns a live stats dict."""
    stats = {"mode": pair.mode, "copied_beacons": 0, "relayed_connections": 0,
             "relay_rejects": 0}
    start, end = pair.window
    if pair.mode == "one_way_broadcast":
        def capture(t):
            def snapshot():
                # record what is on the air near node_a now; re-broadcast the
                # recording near node_b after the relay latency
                captured = []
                for src in world.trace.neighbors(pair.node_a, t):
                    ident = world.devices[src].client.advertisement_identifier(
                        world.local_time(src))
                    if ident is not None:
                        captured.append(
                            (ident, world.stream.child(f"relay:{t}:{src}").take(LINK_ADDR_LEN)))

                def rebroadcast():
                    for sink in world.trace.neighbors(pair.node_b, world.now):
                        for ident, link in captured:
                            stats["copied_beacons"] += 1
                            world.inject_beacon(sink, ident, link, origin=pair.node_a)

                if captured:
                    world.schedule(t + pair.latency_s, rebroadcast)
            return snapshot

        t = start
        while t < end:
            world.schedule(t, capture(t))
            t += pair.tick_s
        return stats

    def open_links():
        victims = world.trace.neighbors(pair.node_a, world.now)
        targets = world.trace.neighbors(pair.node_b, world.now)
        conns = []
        for victim in victims:
            fanout = 0
            for target in targets:
                if target == victim:
                    continue
                if fanout >= pair.fanout_limit:
                    stats["relay_rejects"] += 1
                    continue
                conn = world.open_connection(victim, target, latency_s=pair.latency_s,
                                             relayed=True, notify_clients=False)
                if conn is None:
                    stats["relay_rejects"] += 1
                    continue
                fanout += 1
                conns.append(conn)
                # only the near side sees the handshake begin now; the far
                # side learns of it when the first delayed message lands
                world.devices[victim].client.on_connected(conn, world.local_time(victim))
            assert fanout <= TWO_WAY_FANOUT_LIMIT
        stats["relayed_connections"] = len(conns)
        opened_at = world.now

        def accrue(t):
            def run():
                for conn in conns:
                    if not conn.open:
                        continue
                    world.devices[conn.a].client.on_copresence_tick(
                        conn.b, pair.tick_s, world.local_time(conn.a))
                    # co-presence at the far end starts once the wormhole's
                    # first signals have crossed
                    if t >= opened_at + pair.latency_s:
                        world.devices[conn.b].client.on_copresence_tick(
                            conn.a, pair.tick_s, world.local_time(conn.b))
            return run

        t = world.now + pair.tick_s
        while t < end:
            world.schedule(t, accrue(t))
            t += pair.tick_s

        def teardown():
            for conn in conns:
                world.close_connection(conn)
        world.schedule(end, teardown)

    world.schedule(start, open_links)
    return stats


# ---------------------------------------------------------------------------
# Time travel / same-day replay
# ---------------------------------------------------------------------------

@dataclass
class TimeTravelAttack:
    """Shift the victim's clock back, replay an identifier derived from an
    already-published daily key, then restore the clock."""

    victim: str
    replayer: str
    offset_s: int
    at_s: int
    restore_at_s: int


def install_time_travel(world: World, server: TracingServer, attack: TimeTravelAttack,
                        scheme: str) -> dict:
    stats = {"armed": False, "replayed_id": None}

    def shift():
        world.set_clock(attack.victim, attack.offset_s)
        replayer = world.devices[attack.replayer].client
        if scheme == "tek":
            entries, _ = server.fetch_feed("tek")
            if entries:
                tek = Tek(bytes.fromhex(entries[0]["tek_hex"]), entries[0]["day"])
                victim_local = world.local_time(attack.victim)
                slot = (victim_local % DAY_S) // IDENTIFIER_SLOT_S
                day_of_victim = victim_local // DAY_S
                if day_of_victim == tek.day_index:
                    ident = derive_day_identifiers(tek)[slot]
                    replayer.payload = ident.bytes
                    stats["armed"] = True
                    stats["replayed_id"] = ident.hex
        else:
            # nothing derivable from hash-only or unpublished feeds; beacon noise
            replayer.payload = world.stream.child("tt:noise").take(16)

    def restore():
        world.set_clock(attack.victim, 0)

    world.schedule(attack.at_s, shift)
    world.schedule(attack.restore_at_s, restore)
    return stats


# ---------------------------------------------------------------------------
# Linkage analysis
# ---------------------------------------------------------------------------

@dataclass
class Track:
    label: str
    sightings: list[SnifferObservation]

    @property
    def start(self) -> int:
        return self.sightings[0].at

    @property
    def end(self) -> int:
        return self.sightings[-1].at

    @property
    def duration_s(self) -> int:
        return self.end - self.start


@dataclass
class LinkageReport:
    tracks: list[Track]
    max_track_duration_s: int

    def as_dict(self) -> dict:
        return {
            "tracks": len(self.tracks),
            "max_track_duration_s": self.max_track_duration_s,
            "max_track_sightings": max((len(t.sightings) for t in self.tracks), default=0),
        }


def _tracks_from_groups(groups: dict[str, list[SnifferObservation]]) -> LinkageReport:
    tracks = [Track(label, sorted(obs, key=lambda o: (o.at, o.sniffer_id)))
              for label, obs in groups.items() if obs]
    tracks.sort(key=lambda t: (t.start, t.label))
    longest = max((t.duration_s for t in tracks), default=0)
    return LinkageReport(tracks, longest)


def run_linkage(observations: list[SnifferObservation], scheme: str, *,
                published_teks: list[PublishedTek] | None = None,
                registry: CentralRegistry | None = None,
                scanned_windows: tuple[int, int] | None = None) -> LinkageReport:
    """Group sniffed sightings into per-device movement tracks.

    tek: re-derive the 144 identifiers of each published daily key; every
    sighting of any of them belongs to that key's device, so the track spans
    the whole day. dh (and centralized without server collusion): group by
    identical beacon payload, which rotates per window, so no track can
    outlive one rotation period. centralized with a colluding provider:
    derive every registered user's identifiers from the registry and group
    sightings per user across the whole scanned range.
    """
    groups: dict[str, list[SnifferObservation]] = {}
    if scheme == "tek":
        for pub in published_teks or []:
            idents = {i.bytes for i in derive_day_identifiers(pub.tek)}
            hits = [o for o in observations if o.identifier in idents]
            if hits:
                groups[f"tek:{pub.tek.hex[:16]}"] = hits
    elif scheme == "centralized" and registry is not None:
        lo, hi = scanned_windows
        ids_of_user: dict[bytes, str] = {}
        for user_id in registry.users:
            for t_k in range(lo, hi + 1):
                ident = registry_identifier(registry, user_id, t_k)
                if ident is not None:
                    ids_of_user[ident] = user_id
        for o in observations:
            user = ids_of_user.get(o.identifier)
            if user is not None:
                groups.setdefault(f"user:{user}", []).append(o)
    else:
        for o in observations:
            groups.setdefault(f"beacon:{o.identifier.hex()[:16]}", []).append(o)
    return _tracks_from_groups(groups)


def registry_identifier(registry: CentralRegistry, user_id: str, t_k: int) -> bytes | None:
    """What a colluding provider can derive for (user, window)."""
    if registry.variant == "pepp_pt":
        return derive_centralized_id(user_id, t_k, registry.rotation_s).bytes
    for ident, (uid, tk, _, _) in registry._batch_index.items():
        if uid == user_id and tk == t_k:
            return ident
    return None


# ---------------------------------------------------------------------------
# Fake exposure claims
# ---------------------------------------------------------------------------

def fake_claim_tek(server: TracingServer, claimant_local_t: int) -> dict:
    """Fabricate a sighting log purely from the public feed and run the
    standard matcher over it. Nothing distinguishes it from a real log."""
    entries, _ = server.fetch_feed("tek")
    log = SightingLog()
    published = []
    for e in entries:
        tek = Tek(bytes.fromhex(e["tek_hex"]), e["day"])
        published.append(PublishedTek(tek, e["published_at"]))
        slot = min((claimant_local_t % DAY_S) // IDENTIFIER_SLOT_S,
                   len(derive_day_identifiers(tek)) - 1)
        ident = derive_day_identifiers(tek)[slot]
        log.append(ident.bytes, seen_at=ident.valid_from + 30, global_at=claimant_local_t)
    exposures = match_exposures(log, published)
    return {"accepted": len(exposures) > 0, "fabricated_exposures": len(exposures)}


def fake_claim_dh(server: TracingServer, stream: SeedStream, guesses: int = 32) -> dict:
    """Try to forge superspreader proof tokens from public data: random
    blobs plus the published hashes themselves. Verification counts how many
    hash into the feed; preimage resistance keeps that at zero."""
    entries, _ = server.fetch_feed("dh")
    candidates = [b64(stream.child(f"guess:{i}").take(32)) for i in range(guesses)]
    candidates += [b64(bytes.fromhex(e["hash_hex"])) for e in entries]
    accepted = server.verify_superspreader_proof({"tokens": candidates, "encoding": "b64"})
    # client-side matching is just as hopeless without real records
    cfg = DhConfig()
    exposures = match_exposures_dh([], entries, cfg)
    return {"accepted": accepted > 0, "proof_accepted": accepted,
            "fabricated_exposures": len(exposures)}


def fake_claim_centralized(server: TracingServer, claimant_device: str,
                           observations: list[SnifferObservation]) -> dict:
    """An authenticated (infected) claimant uploads sniffed identifiers of
    people it never met; the server cannot tell them from honest records."""
    tan = server.issue_tan(claimant_device)
    records = [{"id_hex": o.identifier.hex(), "first_seen": o.at, "last_seen": o.at + 60}
               for o in observations]
    ack = server.accept_upload({"scheme": "centralized", "tan": tan.value,
                                "records": records})
    return {"accepted": ack["matched_users"] > 0,
            "victims_notified": ack["matched_users"]}


# ---------------------------------------------------------------------------
# Social graph extraction
# ---------------------------------------------------------------------------

def run_social_graph(server: TracingServer, scheme: str, *,
                     observations: list[SnifferObservation] | None = None,
                     published_teks: list[PublishedTek] | None = None,
                     co_sight_window_s: int = IDENTIFIER_SLOT_S) -> dict:
    """What an adversarial provider can learn about who met whom.

    centralized: the match history maps every upload straight to resolved
    contact identities. tek: only via colluding sniffers, by co-observing
    identifiers of two published keys at the same place and time (and then
    only between infected users). dh: published hashes carry no identity and
    resolve to no one.
    """
    edges: set[tuple[str, str]] = set()
    if scheme == "centralized":
        for m in server.match_history:
            pair = tuple(sorted((m["uploader_device"], m["contact_device"])))
            edges.add(pair)
    elif scheme == "tek" and observations:
        sightings_of_key: dict[str, list[SnifferObservation]] = {}
        for pub in published_teks or []:
            idents = {i.bytes for i in derive_day_identifiers(pub.tek)}
            hits = [o for o in observations if o.identifier in idents]
            if hits:
                sightings_of_key[f"tek:{pub.tek.hex[:16]}"] = hits
        labels = sorted(sightings_of_key)
        for i, la in enumerate(labels):
            for lb in labels[i + 1:]:
                if any(abs(oa.at - ob.at) <= co_sight_window_s
                       and oa.sniffer_id == ob.sniffer_id
                       for oa in sightings_of_key[la] for ob in sightings_of_key[lb]):
                    edges.add((la, lb))
    # dh: nothing to resolve
    return {"recovered_edges": sorted(list(e) for e in edges),
            "recovered_edge_count": len(edges)}
