"""Tracing service provider + health authority.

One server instance backs all three schemes:

* TAN lifecycle: the health authority issues single-use 12-character
  authenticators; verifying an upload consumes its TAN atomically, so a TAN
  cannot be spent twice even under concurrent submissions.
* Per-scheme uploads: daily-key bundles are published to a feed (rejected if
  they span more than the retention period), DH bundles publish token hashes
  and sealed metadata only, centralized bundles are never published - they
  are routed to server-side matching against the registry and turn into
  notifications.
* Publication feeds are append-only; clients page through them with an
  integer cursor and replaying a cursor returns the identical page.
* Superspreader proofs: raw tokens submitted through this flow are hashed,
  counted against the DH feed, tagged, and discarded - they are never stored
  or served.

Only the centralized code path can touch the registry; the TEK and DH paths
have no access to user identities and their feeds carry no user field.

The server is callable in-process and over a newline-delimited JSON
request/response protocol on a TCP byte stream (see serve_tcp / WireClient).
Persistence is an append-only JSON-lines log per feed plus the TAN log;
a server constructed over the same state directory replays them.
"""

from __future__ import annotations

import hashlib
import json
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path

from .crypto_core import unb64
from .errors import UploadRejected
from .rng import SeedStream
from .schemes.centralized import CentralRegistry, server_match

TAN_LENGTH = 12
DEFAULT_RETENTION_DAYS = 14
DAY_S = 86400
SCHEMES = ("centralized", "tek", "dh")


@dataclass
class Tan:
    value: str
    issued_to: str
    used: bool = False


class PublicationFeed:
    """Append-only entry list with cursor paging."""

    def __init__(self, scheme: str):
        self.scheme = scheme
        self.entries: list[dict] = []
        self.superspreader_tags: set[str] = set()

    def append(self, entry: dict) -> None:
        self.entries.append(entry)

    def page(self, since_cursor: int) -> tuple[list[dict], int]:
        entries = self.entries[since_cursor:]
        return list(entries), since_cursor + len(entries)


class TracingServer:
    def __init__(self, stream: SeedStream, *, registry: CentralRegistry | None = None,
                 retention_days: int = DEFAULT_RETENTION_DAYS,
                 state_dir: str | Path | None = None):
        self.stream = stream
        self.registry = registry
        self.retention_days = retention_days
        self.clock = lambda: 0          # the scenario runner points this at world time
        self.feeds = {s: PublicationFeed(s) for s in SCHEMES}
        self.tans: dict[str, Tan] = {}
        self.notifications: dict[str, list[dict]] = {}
        self.match_history: list[dict] = []   # centralized matches, uploader included
        self.on_notify = None
        self._lock = threading.RLock()
        self._tan_stream = stream.child("tan")
        self._shuffle_stream = stream.child("shuffle")
        self.state_dir = Path(state_dir) if state_dir is not None else None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._replay_state()

    # -- persistence ----------------------------------------------------------

    def _append_state(self, name: str, obj: dict) -> None:
        if self.state_dir is None:
            return
        with (self.state_dir / name).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            fh.flush()

    def _read_state(self, name: str) -> list[dict]:
        path = self.state_dir / name
        if not path.exists():
            return []
        with path.open(encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def _replay_state(self) -> None:
        for scheme in ("tek", "dh"):
            for entry in self._read_state(f"feed_{scheme}.jsonl"):
                self.feeds[scheme].entries.append(entry)
        for rec in self._read_state("tans.jsonl"):
            if rec["event"] == "issue":
                self.tans[rec["value"]] = Tan(rec["value"], rec["issued_to"])
            elif rec["event"] == "consume":
                self.tans[rec["value"]].used = True
        for rec in self._read_state("tags.jsonl"):
            self.feeds["dh"].superspreader_tags.add(rec["hash_hex"])

    # -- health authority -------------------------------------------------------

    def issue_tan(self, device_id: str) -> Tan:
        with self._lock:
            while True:
                value = self._tan_stream.token(TAN_LENGTH)
                if value not in self.tans:
                    break
            tan = Tan(value, device_id)
            self.tans[value] = tan
            self._append_state("tans.jsonl", {"event": "issue", "value": value,
                                              "issued_to": device_id})
            return tan

    def _consume_tan(self, value) -> Tan:
        """Verify and spend a TAN; single-use, linearizable."""
        with self._lock:
            tan = self.tans.get(value)
            if tan is None:
                raise UploadRejected("unknown TAN")
            if tan.used:
                raise UploadRejected("TAN already used")
            tan.used = True
            self._append_state("tans.jsonl", {"event": "consume", "value": value})
            return tan

    # -- registration (centralized only) ----------------------------------------

    def register(self, device_id: str, mode: str = "anonymous", phone: str | None = None):
        if self.registry is None:
            raise UploadRejected("no centralized registry configured")
        with self._lock:
            return self.registry.register(device_id, mode, phone)

    def pull_id_batch(self, user_id: str, day: int) -> list[dict]:
        if self.registry is None:
            raise UploadRejected("no centralized registry configured")
        with self._lock:
            return self.registry.issue_batch(user_id, day)

    # -- uploads -------------------------------------------------------------------

    def accept_upload(self, bundle: dict) -> dict:
        scheme = bundle.get("scheme")
        if scheme not in SCHEMES:
            raise UploadRejected(f"malformed bundle: unknown scheme {scheme!r}")
        with self._lock:
            tan = self._consume_tan(bundle.get("tan"))
            handler = {"tek": self._accept_tek, "dh": self._accept_dh,
                       "centralized": self._accept_centralized}[scheme]
            return handler(bundle, tan)

    def _accept_tek(self, bundle: dict, tan: Tan) -> dict:
        teks = bundle.get("teks")
        if not isinstance(teks, list):
            raise UploadRejected("malformed bundle: missing teks")
        if teks:
            days = [t["day"] for t in teks]
            if max(days) - min(days) + 1 > self.retention_days:
                raise UploadRejected(
                    f"TEK bundle spans more than {self.retention_days} days")
        now = self.clock()
        for t in teks:
            entry = {"tek_hex": t["tek_hex"], "day": t["day"], "published_at": now}
            self.feeds["tek"].append(entry)
            self._append_state("feed_tek.jsonl", entry)
        return {"status": "ack", "published": len(teks)}

    def _accept_dh(self, bundle: dict, tan: Tan) -> dict:
        entries = bundle.get("entries")
        if not isinstance(entries, list):
            raise UploadRejected("malformed bundle: missing entries")
        now = self.clock()
        published = [{"hash_hex": e["hash_hex"], "meta_b64": e["meta_b64"],
                      "published_at": now} for e in entries]
        if bundle.get("anonymized"):
            # postbox model: drop bundle grouping by shuffling before
            # publication; the cryptographic mixing itself is out of scope
            self._shuffle_stream.shuffle(published)
        for entry in published:
            self.feeds["dh"].append(entry)
            self._append_state("feed_dh.jsonl", entry)
        return {"status": "ack", "published": len(published)}

    def _accept_centralized(self, bundle: dict, tan: Tan) -> dict:
        if self.registry is None:
            raise UploadRejected("no centralized registry configured")
        records = bundle.get("records")
        if not isinstance(records, list):
            raise UploadRejected("malformed bundle: missing records")
        now = self.clock()
        horizon = now - self.retention_days * DAY_S
        fresh = [r for r in records if r["last_seen"] >= horizon]
        matches = server_match(fresh, self.registry)
        for user_id, intervals in matches.items():
            reg = self.registry.users[user_id]
            channel = "phone" if reg.mode == "phone" else "app"
            note = {"user_id": user_id, "device_id": self.registry.device_of[user_id],
                    "channel": channel, "intervals": [list(i) for i in intervals],
                    "cause": "centralized_match"}
            self.notifications.setdefault(user_id, []).append(note)
            self.match_history.append({"uploader_device": tan.issued_to,
                                       "contact_user": user_id,
                                       "contact_device": note["device_id"],
                                       "intervals": note["intervals"]})
            if self.on_notify is not None:
                self.on_notify(note)
        return {"status": "ack", "matched_users": len(matches),
                "skipped": len(records) - len(fresh)}

    # -- feeds and verification ------------------------------------------------------

    def fetch_feed(self, scheme: str, since_cursor: int = 0) -> tuple[list[dict], int]:
        if scheme not in self.feeds:
            raise UploadRejected(f"unknown scheme {scheme!r}")
        with self._lock:
            return self.feeds[scheme].page(since_cursor)

    def verify_superspreader_proof(self, proof: dict) -> int:
        """Count proof tokens whose hash appears in the DH feed and tag those
        hashes. Tokens are hashed and discarded, never stored."""
        decode = bytes.fromhex if proof.get("encoding") == "hex" else unb64
        with self._lock:
            published = {e["hash_hex"] for e in self.feeds["dh"].entries}
            accepted = 0
            for raw in proof.get("tokens", []):
                h = hashlib.sha256(decode(raw)).hexdigest()
                if h in published:
                    accepted += 1
                    if h not in self.feeds["dh"].superspreader_tags:
                        self.feeds["dh"].superspreader_tags.add(h)
                        self._append_state("tags.jsonl", {"hash_hex": h})
            return accepted

    def notify_poll(self, user_id: str) -> list[dict]:
        """Drain pending notifications for one registered user."""
        with self._lock:
            return self.notifications.pop(user_id, [])


# ---------------------------------------------------------------------------
# Newline-delimited JSON wire protocol
# ---------------------------------------------------------------------------

def _handle_request(server: TracingServer, req: dict) -> dict:
    op = req.get("op")
    args = req.get("args", {})
    try:
        if op == "issue_tan":
            tan = server.issue_tan(args["device_id"])
            return {"ok": True, "result": {"tan": tan.value}}
        if op == "upload":
            return {"ok": True, "result": server.accept_upload(args["bundle"])}
        if op == "feed":
            entries, cursor = server.fetch_feed(args["scheme"], args.get("since_cursor", 0))
            return {"ok": True, "result": {"entries": entries, "cursor": cursor}}
        if op == "superspreader_proof":
            return {"ok": True, "result": {"accepted": server.verify_superspreader_proof(args["proof"])}}
        if op == "register":
            reg = server.register(args["device_id"], args.get("mode", "anonymous"),
                                  args.get("phone"))
            return {"ok": True, "result": {"user_id": reg.user_id, "mode": reg.mode}}
        if op == "notify_poll":
            return {"ok": True, "result": {"notifications": server.notify_poll(args["user_id"])}}
        return {"ok": False, "error": f"unknown op {op!r}"}
    except UploadRejected as exc:
        return {"ok": False, "error": exc.reason}
    except (KeyError, TypeError, ValueError) as exc:
        return {"ok": False, "error": f"malformed request: {exc}"}


class _WireHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            try:
                req = json.loads(line)
            except json.JSONDecodeError as exc:
                resp = {"ok": False, "error": f"bad json: {exc}"}
            else:
                resp = _handle_request(self.server.tracing_server, req)
            self.wfile.write(json.dumps(resp, sort_keys=True).encode() + b"\n")
            self.wfile.flush()


class _WireServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve_tcp(server: TracingServer, host: str = "127.0.0.1", port: int = 0):
    """Start the NDJSON endpoint on a background thread.
    Returns (tcp_server, bound_port); call tcp_server.shutdown() to stop."""
    tcp = _WireServer((host, port), _WireHandler)
    tcp.tracing_server = server
    thread = threading.Thread(target=tcp.serve_forever, daemon=True)
    thread.start()
    return tcp, tcp.server_address[1]


class WireClient:
    """One-request-per-connection NDJSON client."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port

    def call(self, op: str, **args) -> dict:
        with socket.create_connection((self.host, self.port), timeout=10) as sock:
            sock.sendall(json.dumps({"op": op, "args": args}, sort_keys=True).encode() + b"\n")
            fh = sock.makefile("r", encoding="utf-8")
            resp = json.loads(fh.readline())
        if not resp.get("ok"):
            raise UploadRejected(resp.get("error", "request failed"))
        return resp["result"]
