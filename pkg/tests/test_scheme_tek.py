from dctlab.crypto_core import Tek, derive_day_identifiers
from dctlab.rng import SeedStream
from dctlab.schemes.tek import (
    PublishedTek,
    SightingLog,
    TekClient,
    TekStore,
    match_exposures,
    publish_keys,
    risk_summary,
)


def make_tek(seed: int, day: int) -> Tek:
    return Tek(SeedStream(seed, "tek").take(16), day)


def test_publish_lists_retained_days():
    store = TekStore()
    for d in range(14):
        store.add(make_tek(d, d))
    bundle = publish_keys(store, tan="T" * 12)
    assert bundle["scheme"] == "tek"
    assert len(bundle["teks"]) == 14

    small = TekStore()
    for d in range(3):
        small.add(make_tek(d, d))
    assert len(publish_keys(small, "T" * 12)["teks"]) == 3


def test_retention_prunes_oldest():
    store = TekStore(retention_days=14)
    for d in range(20):
        store.add(make_tek(d, d))
    assert len(store.teks) == 14
    assert min(store.teks) == 6


def test_match_inside_slot():
    tek = make_tek(1, 0)
    ident = derive_day_identifiers(tek)[7]
    log = SightingLog()
    log.append(ident.bytes, seen_at=7 * 600 + 30, global_at=7 * 600 + 30)
    got = match_exposures(log, [PublishedTek(tek, published_at=86000)])
    assert len(got) == 1
    assert got[0].slot == 7


def test_match_rejects_sighting_outside_window():
    tek = make_tek(1, 0)
    ident = derive_day_identifiers(tek)[7]
    log = SightingLog()
    # 3 h after the slot end, window is 2 h
    log.append(ident.bytes, seen_at=8 * 600 + 3 * 3600, global_at=0)
    assert match_exposures(log, [PublishedTek(tek, 86000)], validity_window_s=7200) == []
    # but a 2 h displacement is accepted under the default window
    log2 = SightingLog()
    log2.append(ident.bytes, seen_at=8 * 600 + 7200 - 1, global_at=0)
    assert len(match_exposures(log2, [PublishedTek(tek, 86000)])) == 1


def test_two_teks_two_exposures():
    teks = [make_tek(1, 0), make_tek(2, 0)]
    log = SightingLog()
    for tek in teks:
        ident = derive_day_identifiers(tek)[3]
        log.append(ident.bytes, seen_at=3 * 600 + 5, global_at=0)
    # brute-force oracle: intersect the log against both full schedules
    expected = 0
    logged = {s.identifier for s in log.entries}
    for tek in teks:
        expected += sum(1 for i in derive_day_identifiers(tek) if i.bytes in logged)
    got = match_exposures(log, [PublishedTek(t, 86000) for t in teks])
    assert len(got) == expected == 2


def test_repeated_sightings_single_exposure():
    tek = make_tek(1, 0)
    ident = derive_day_identifiers(tek)[0]
    log = SightingLog()
    for t in range(0, 600, 5):
        log.append(ident.bytes, seen_at=t, global_at=t)
    assert len(match_exposures(log, [PublishedTek(tek, 86000)])) == 1


def test_kiss_same_day_replay_and_strict_fix():
    # sighting recorded after the key was already published
    tek = make_tek(3, 0)
    ident = derive_day_identifiers(tek)[10]
    log = SightingLog()
    watermarks = {tek.hex: len(log.entries)}  # key arrived before the sighting
    log.append(ident.bytes, seen_at=10 * 600 + 50, global_at=10 * 600 + 50)
    published = [PublishedTek(tek, published_at=10 * 600)]
    assert len(match_exposures(log, published)) == 1  # default: accepted
    assert match_exposures(log, published, strict_freshness=True,
                           watermarks=watermarks) == []


def test_risk_summary_buckets():
    assert risk_summary([]) == {"count": 0, "days": {}}
    tek0, tek1 = make_tek(1, 0), make_tek(2, 1)
    log = SightingLog()
    for tek, slots in ((tek0, (1, 2)), (tek1, (3,))):
        for slot in slots:
            ident = derive_day_identifiers(tek)[slot]
            log.append(ident.bytes, ident.valid_from + 1, 0)
    exposures = match_exposures(log, [PublishedTek(tek0, 0), PublishedTek(tek1, 0)])
    summary = risk_summary(exposures)
    assert summary["count"] == 3
    assert summary["days"] == {"0": 2, "1": 1}
    # recount oracle
    assert summary["count"] == sum(summary["days"].values())


def test_client_schedule_and_sync_dedupe():
    stream = SeedStream(9, "dev")
    alice = TekClient(stream.child("alice"))
    bob = TekClient(stream.child("bob"))
    alice.device_id, bob.device_id = "alice", "bob"
    # bob hears alice's slot-0 identifier all through the slot
    ident = alice.advertisement_identifier(30)
    assert ident == alice.advertisement_identifier(599)
    assert ident != alice.advertisement_identifier(600)
    for t in range(0, 600, 5):
        bob.on_sighting(alice.advertisement_identifier(t), b"\x00" * 6, t, t)
    bundle = alice.make_report("T" * 12)
    feed = [{"tek_hex": e["tek_hex"], "day": e["day"], "published_at": 700}
            for e in bundle["teks"]]
    first = bob.sync(feed, 700)
    assert len(first) == 1
    assert bob.sync(feed, 800) == []  # already notified


def test_published_key_links_all_day_identifiers():
    # re-derivation from one published key groups sightings across the whole
    # day, and claims nothing from other devices
    mine, other = make_tek(5, 0), make_tek(6, 0)
    schedule = {i.bytes for i in derive_day_identifiers(mine)}
    assert len(schedule) == 144
    sightings = [derive_day_identifiers(mine)[0].bytes,
                 derive_day_identifiers(mine)[143].bytes,
                 derive_day_identifiers(other)[0].bytes]
    linked = [s for s in sightings if s in schedule]
    assert linked == sightings[:2]
