"""Deterministic discrete-event BLE world.

Time is integer seconds from the scenario origin. The world processes a
single heap of (time, sequence) ordered callbacks, so a given (scenario,
seed) pair always produces the identical event log, byte for byte.

Modeling choices:

* Range is boolean, taken from the contact trace edges; there is no RSSI or
  distance estimation (deliberately out of scope).
* Advertisements are delivered to every in-range listener at each scan tick
  (default 5 s). The advertising interval (1 s) is faster than the scan
  tick, so a fresh beacon is always available at delivery time.
* Advertisement payloads fit 31 bytes and carry exactly one 16-byte
  identifier field. A full DH public key (32 bytes) cannot be advertised;
  public keys travel only over connections.
* A device sustains at most 8 simultaneous connections; further attempts
  are rejected and counted.
* Every device has its own clock: local = global + offset. Scheme code only
  ever sees local time. Changing a clock mid-run requires the scenario to
  grant the "clock" capability.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Callable

from .errors import CapabilityError, ConfigurationError
from .rng import SeedStream

SCAN_TICK_S = 5
ADV_INTERVAL_S = 1
MAX_CONNECTIONS = 8
ADV_PAYLOAD_BUDGET = 31
ADV_OVERHEAD_BYTES = 10           # flags, tx power, service data header
IDENTIFIER_FIELD_LEN = 16
LINK_ADDR_LEN = 6

EVENT_KINDS = frozenset({
    "advertise", "scan", "connect", "connect_reject", "message",
    "disconnect", "clock_set", "report", "notify",
})


@dataclass(frozen=True)
class Advertisement:
    """What a device can actually broadcast: one 16-byte identifier."""

    identifier: bytes

    def __post_init__(self):
        if len(self.identifier) != IDENTIFIER_FIELD_LEN:
            raise ConfigurationError(
                f"advertisement identifier field is {IDENTIFIER_FIELD_LEN} bytes, "
                f"got {len(self.identifier)}")
        assert ADV_OVERHEAD_BYTES + IDENTIFIER_FIELD_LEN <= ADV_PAYLOAD_BUDGET

    @property
    def size(self) -> int:
        return ADV_OVERHEAD_BYTES + len(self.identifier)


@dataclass(frozen=True)
class ContactEdge:
    a: str
    b: str
    start_s: int
    end_s: int
    distance_class: str = "near"

    def __post_init__(self):
        if self.a == self.b:
            raise ConfigurationError("contact edge endpoints must differ")
        if self.end_s <= self.start_s:
            raise ConfigurationError("contact edge interval is empty")

    def covers(self, t: int) -> bool:
        return self.start_s <= t < self.end_s

    @property
    def pair(self) -> frozenset:
        return frozenset((self.a, self.b))


class ContactTrace:
    """Ground-truth co-location intervals; symmetric by construction."""

    def __init__(self, edges: list[ContactEdge]):
        self.edges = sorted(edges, key=lambda e: (e.start_s, e.end_s, min(e.a, e.b), max(e.a, e.b)))

    def in_range(self, a: str, b: str, t: int) -> bool:
        pair = frozenset((a, b))
        return any(e.pair == pair and e.covers(t) for e in self.edges)

    def has_any_contact(self, a: str, b: str) -> bool:
        pair = frozenset((a, b))
        return any(e.pair == pair for e in self.edges)

    def neighbors(self, device: str, t: int) -> list[str]:
        out = [e.b if e.a == device else e.a
               for e in self.edges if device in e.pair and e.covers(t)]
        return sorted(set(out))

    def contacts_of(self, device: str) -> set[str]:
        return {e.b if e.a == device else e.a for e in self.edges if device in e.pair}


@dataclass
class SimEvent:
    at_s: int
    seq: int
    kind: str
    payload: dict

    def to_json_line(self) -> str:
        return json.dumps(
            {"at": self.at_s, "seq": self.seq, "kind": self.kind, "payload": self.payload},
            sort_keys=True, separators=(",", ":"))


class DeviceClient:
    """Base scheme client: everything is a no-op so subclasses override only
    the hooks they care about. All hooks receive device-local time."""

    device_id = "?"

    def advertisement_identifier(self, local_t: int) -> bytes | None:
        """Current 16-byte beacon identifier; None for passive devices."""
        return None

    def on_sighting(self, identifier: bytes, link_addr: bytes, local_t: int, global_t: int) -> None:
        pass

    def wants_connection(self, peer_id: str, local_t: int) -> bool:
        return False

    def on_connected(self, conn: "Connection", local_t: int) -> None:
        pass

    def on_message(self, conn: "Connection", sender_id: str, payload: dict, local_t: int) -> None:
        pass

    def on_copresence_tick(self, peer_id: str, seconds: int, local_t: int) -> None:
        pass

    def on_disconnect(self, conn: "Connection", local_t: int) -> None:
        pass


@dataclass
class Device:
    device_id: str
    client: DeviceClient
    clock_offset_s: int = 0
    connections: dict = field(default_factory=dict)   # peer_id -> Connection
    last_advertised: bytes | None = None
    link_stream: SeedStream | None = None
    irk_tag: bytes = b""

    def link_address(self, epoch: int, irk_linkable: bool) -> bytes:
        """Per-rotation-window pseudo link address. With the IRK-linkability
        flag the first two bytes are a stable per-device tag, modeling
        resolvable addresses derived from an unchanging identity key."""
        rand = self.link_stream.child(f"link:{epoch}").take(LINK_ADDR_LEN)
        if irk_linkable:
            return self.irk_tag + rand[2:]
        return rand


@dataclass
class Connection:
    cid: int
    a: str
    b: str
    latency_s: int
    world: "World"
    open: bool = True
    relayed: bool = False

    def peer_of(self, device_id: str) -> str:
        return self.b if device_id == self.a else self.a

    def send(self, sender_id: str, payload: dict) -> None:
        self.world.send(self, sender_id, payload)


class World:
    def __init__(self, trace: ContactTrace, stream: SeedStream, *,
                 scan_tick_s: int = SCAN_TICK_S, link_rotation_s: int = 900,
                 capabilities: tuple[str, ...] = (), irk_linkable: bool = False):
        self.trace = trace
        self.stream = stream
        self.scan_tick_s = scan_tick_s
        self.link_rotation_s = link_rotation_s
        self.capabilities = set(capabilities)
        self.irk_linkable = irk_linkable
        self.devices: dict[str, Device] = {}
        self.events: list[SimEvent] = []
        self.now = 0
        self.counters = {"connect_rejects_capacity": 0, "connect_rejects_range": 0}
        self._heap: list = []
        self._seq = 0
        self._cid = 0
        self._started = False

    # -- wiring -------------------------------------------------------------

    def add_device(self, device_id: str, client: DeviceClient, clock_offset_s: int = 0) -> Device:
        if device_id in self.devices:
            raise ConfigurationError(f"duplicate device {device_id}")
        dev = Device(device_id, client, clock_offset_s,
                     link_stream=self.stream.child(f"device:{device_id}:link"))
        dev.irk_tag = self.stream.child(f"device:{device_id}:irk").take(2)
        client.device_id = device_id
        self.devices[device_id] = dev
        return dev

    def local_time(self, device_id: str, global_t: int | None = None) -> int:
        t = self.now if global_t is None else global_t
        return t + self.devices[device_id].clock_offset_s

    # -- event machinery ----------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def schedule(self, at_s: int, fn: Callable[[], None]) -> None:
        if at_s < self.now:
            raise ConfigurationError("cannot schedule into the past")
        heapq.heappush(self._heap, (at_s, self._next_seq(), fn))

    def emit(self, kind: str, payload: dict) -> SimEvent:
        assert kind in EVENT_KINDS, kind
        ev = SimEvent(self.now, self._next_seq(), kind, payload)
        self.events.append(ev)
        return ev

    def _start(self) -> None:
        if self._started:
            return
        self._started = True
        for edge in self.trace.edges:
            first = edge.start_s + (-edge.start_s) % self.scan_tick_s
            if first < edge.end_s:
                self.schedule(first, self._make_edge_tick(edge, first))

    def step(self, until_s: int) -> list[SimEvent]:
        """Process all scheduled work at times <= until_s; returns the events
        emitted by this call."""
        self._start()
        mark = len(self.events)
        while self._heap and self._heap[0][0] <= until_s:
            at, _, fn = heapq.heappop(self._heap)
            self.now = max(self.now, at)
            fn()
        self.now = max(self.now, until_s)
        return self.events[mark:]

    def run(self) -> list[SimEvent]:
        """Drain the schedule completely."""
        self._start()
        mark = len(self.events)
        while self._heap:
            at, _, fn = heapq.heappop(self._heap)
            self.now = max(self.now, at)
            fn()
        return self.events[mark:]

    # -- radio behavior -----------------------------------------------------

    def _make_edge_tick(self, edge: ContactEdge, t: int):
        def tick():
            self._edge_tick(edge, t)
        return tick

    def _edge_tick(self, edge: ContactEdge, t: int) -> None:
        dev_a, dev_b = self.devices[edge.a], self.devices[edge.b]
        self._deliver_beacon(speaker=dev_a, listener=dev_b)
        self._deliver_beacon(speaker=dev_b, listener=dev_a)

        conn = dev_a.connections.get(edge.b)
        if conn is None:
            la = self.local_time(edge.a)
            lb = self.local_time(edge.b)
            if dev_a.client.wants_connection(edge.b, la) and dev_b.client.wants_connection(edge.a, lb):
                conn = self.open_connection(edge.a, edge.b)
        if conn is not None and conn.open:
            dev_a.client.on_copresence_tick(edge.b, self.scan_tick_s, self.local_time(edge.a))
            dev_b.client.on_copresence_tick(edge.a, self.scan_tick_s, self.local_time(edge.b))

        nxt = t + self.scan_tick_s
        if nxt < edge.end_s:
            self.schedule(nxt, self._make_edge_tick(edge, nxt))
        else:
            self.schedule(edge.end_s, self._make_edge_end(edge))

    def _make_edge_end(self, edge: ContactEdge):
        def end():
            conn = self.devices[edge.a].connections.get(edge.b)
            if conn is not None and conn.open and not conn.relayed \
                    and not self.trace.in_range(edge.a, edge.b, self.now):
                self.close_connection(conn)
        return end

    def _deliver_beacon(self, speaker: Device, listener: Device) -> None:
        ident = speaker.client.advertisement_identifier(self.local_time(speaker.device_id))
        if ident is None:
            return
        adv = Advertisement(ident)
        if speaker.last_advertised != ident:
            speaker.last_advertised = ident
            self.emit("advertise", {"device": speaker.device_id, "id": ident.hex(),
                                    "size": adv.size})
        link = speaker.link_address(
            self.local_time(speaker.device_id) // self.link_rotation_s, self.irk_linkable)
        self.emit("scan", {"device": listener.device_id, "from": speaker.device_id,
                           "id": ident.hex(), "link": link.hex()})
        listener.client.on_sighting(ident, link, self.local_time(listener.device_id), self.now)

    def inject_beacon(self, listener_id: str, identifier: bytes, link_addr: bytes,
                      origin: str) -> None:
        """Deliver a beacon outside the normal range rules (relay machinery)."""
        Advertisement(identifier)
        listener = self.devices[listener_id]
        self.emit("scan", {"device": listener_id, "from": origin,
                           "id": identifier.hex(), "link": link_addr.hex()})
        listener.client.on_sighting(identifier, link_addr,
                                    self.local_time(listener_id), self.now)

    # -- connections ----------------------------------------------------------

    def open_connection(self, a: str, b: str, latency_s: int = 0,
                        relayed: bool = False, notify_clients: bool = True) -> Connection | None:
        dev_a, dev_b = self.devices[a], self.devices[b]
        if not relayed and not self.trace.in_range(a, b, self.now):
            self.counters["connect_rejects_range"] += 1
            self.emit("connect_reject", {"a": a, "b": b, "reason": "range"})
            return None
        if len(dev_a.connections) >= MAX_CONNECTIONS or len(dev_b.connections) >= MAX_CONNECTIONS:
            self.counters["connect_rejects_capacity"] += 1
            self.emit("connect_reject", {"a": a, "b": b, "reason": "capacity"})
            return None
        self._cid += 1
        conn = Connection(self._cid, a, b, latency_s, self, relayed=relayed)
        dev_a.connections[b] = conn
        dev_b.connections[a] = conn
        assert len(dev_a.connections) <= MAX_CONNECTIONS
        assert len(dev_b.connections) <= MAX_CONNECTIONS
        self.emit("connect", {"a": a, "b": b, "cid": conn.cid, "relayed": relayed})
        if notify_clients:
            dev_a.client.on_connected(conn, self.local_time(a))
            dev_b.client.on_connected(conn, self.local_time(b))
        return conn

    def close_connection(self, conn: Connection) -> None:
        if not conn.open:
            return
        conn.open = False
        self.devices[conn.a].connections.pop(conn.b, None)
        self.devices[conn.b].connections.pop(conn.a, None)
        self.emit("disconnect", {"cid": conn.cid})
        self.devices[conn.a].client.on_disconnect(conn, self.local_time(conn.a))
        self.devices[conn.b].client.on_disconnect(conn, self.local_time(conn.b))

    def send(self, conn: Connection, sender_id: str, payload: dict) -> None:
        receiver_id = conn.peer_of(sender_id)

        def deliver():
            if not conn.open:
                return
            self.emit("message", {"cid": conn.cid, "from": sender_id, "to": receiver_id,
                                  "kind": payload.get("kind", "data")})
            self.devices[receiver_id].client.on_message(
                conn, sender_id, payload, self.local_time(receiver_id))

        self.schedule(self.now + conn.latency_s, deliver)

    # -- clocks ---------------------------------------------------------------

    def set_clock(self, device_id: str, offset_s: int, capability: str = "clock") -> None:
        if capability not in self.capabilities:
            raise CapabilityError(f"scenario does not grant the {capability!r} capability")
        self.devices[device_id].clock_offset_s = offset_s
        self.emit("clock_set", {"device": device_id, "offset_s": offset_s})
