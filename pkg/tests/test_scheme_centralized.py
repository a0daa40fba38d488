import pytest

from dctlab.crypto_core import derive_bluetrace_id, derive_centralized_id
from dctlab.errors import ProtocolError
from dctlab.rng import SeedStream
from dctlab.schemes.centralized import (
    VARIANT_BLUETRACE,
    VARIANT_PEPP_PT,
    CentralizedClient,
    CentralRegistry,
    ObservedRecord,
    report_infection,
    server_match,
)


def make_pair(variant):
    registry = CentralRegistry(SeedStream(11, "srv"), variant=variant)
    client = CentralizedClient(registry)
    client.device_id = "dev-a"
    client.register()
    return registry, client


def test_one_hour_window_four_identifiers():
    _, client = make_pair(VARIANT_PEPP_PT)
    idents = client.beacon_schedule(0, 3600)
    assert len(idents) == 3600 // 900
    assert len({i.bytes for i in idents}) == 4


def test_pepp_pt_identifier_is_local_derivation():
    _, client = make_pair(VARIANT_PEPP_PT)
    uid = client.registration.user_id
    assert client.advertisement_identifier(950) == derive_centralized_id(uid, 1).bytes


def test_bluetrace_identifiers_verify_under_master_rederivation():
    registry, client = make_pair(VARIANT_BLUETRACE)
    uid = client.registration.user_id
    for ident in client.beacon_schedule(0, 3600):
        entry = registry._batch_index[ident.bytes]
        user_id, t_k, iv, auth_tag = entry
        assert user_id == uid
        rederived = derive_bluetrace_id(user_id, t_k, iv, auth_tag, registry.master)
        assert rederived.bytes == ident.bytes


def test_unregistered_client_cannot_beacon():
    registry = CentralRegistry(SeedStream(1, "srv"), variant=VARIANT_PEPP_PT)
    client = CentralizedClient(registry)
    with pytest.raises(ProtocolError):
        client.advertisement_identifier(0)
    with pytest.raises(ProtocolError):
        client.beacon_schedule(0, 900)


def test_report_bundle_contents():
    records = [ObservedRecord(bytes([i]) * 16, i * 100, i * 100 + 60, i * 100)
               for i in range(3)]
    bundle = report_infection(records, tan="TANTANTANTAN")
    assert bundle["scheme"] == "centralized"
    assert len(bundle["records"]) == 3
    assert report_infection([], "TANTANTANTAN")["records"] == []


def test_server_match_resolves_and_groups():
    registry = CentralRegistry(SeedStream(2, "srv"), variant=VARIANT_PEPP_PT)
    reg_b = registry.register("dev-b")
    # two identifiers of the same user in different windows, one unknown
    records = [
        {"id_hex": derive_centralized_id(reg_b.user_id, 0).bytes.hex(),
         "first_seen": 10, "last_seen": 800},
        {"id_hex": derive_centralized_id(reg_b.user_id, 1).bytes.hex(),
         "first_seen": 905, "last_seen": 1700},
        {"id_hex": "ab" * 16, "first_seen": 0, "last_seen": 60},
    ]
    matches = server_match(records, registry)
    assert list(matches) == [reg_b.user_id]
    assert matches[reg_b.user_id] == [(10, 800), (905, 1700)]


def test_server_match_bluetrace_roundtrip():
    registry = CentralRegistry(SeedStream(3, "srv"), variant=VARIANT_BLUETRACE)
    client = CentralizedClient(registry)
    client.device_id = "dev-b"
    client.register()
    ident = client.advertisement_identifier(1000)
    matches = server_match([{"id_hex": ident.hex(), "first_seen": 1000, "last_seen": 1100}],
                           registry)
    assert list(matches) == [client.registration.user_id]


def test_sightings_merge_into_records():
    _, client = make_pair(VARIANT_PEPP_PT)
    ident = b"\x07" * 16
    for t in (0, 5, 10, 15):
        client.on_sighting(ident, b"\x00" * 6, t, t)
    client.on_sighting(ident, b"\x00" * 6, 500, 500)  # gap > merge threshold
    assert len(client.records) == 2
    assert (client.records[0].first_seen, client.records[0].last_seen) == (0, 15)
    assert all(r.first_seen <= r.last_seen for r in client.records)
