"""Scenario loading and execution.

A scenario file is JSON with an id and a list of runs. Each run builds one
world (devices, contact trace, scheme clients, a tracing server), optionally
installs an attack, schedules infection reports and feed syncs, drains the
event loop, and evaluates the configured analyses. Runs inside a scenario
are independent worlds; they share only the scenario seed, from which every
run derives a labelled sub-stream.

Run fields:

    label          unique name within the scenario
    scheme         "centralized" | "tek" | "dh"
    scheme_config  per-scheme knobs (rotation_s, validity_window_s, ...)
    devices        ["id", ...] or {"id", "role", "clock_offset_s", "mode", "phone"}
                   role: device (default) | sniffer | relay | replayer
    contact_trace  [[a, b, start_s, end_s], ...] ground-truth co-location
    infections     [{"device", "report_at"}, ...]
    duration_s     run horizon; a final feed sync happens here
    attack         optional: relay | time_travel | fake_claim block
    analysis       optional: linkage / social_graph / superspreader_check flags

Outputs per scenario: events.jsonl (every SimEvent of every run, tagged with
the run label) and metrics.json. Identical (scenario, seed) pairs produce
byte-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import adversary
from .crypto_core import GroupParams, Tek
from .errors import ScenarioError, UploadRejected
from .radio import ContactEdge, ContactTrace, DeviceClient, World
from .rng import SeedStream
from .schemes.centralized import CentralizedClient, CentralRegistry
from .schemes.dh import DhClient, DhConfig, encode_proof
from .schemes.tek import PublishedTek, TekClient
from .server import TracingServer

SYNC_DELAY_S = 60
SCHEME_ROTATION_DEFAULTS = {"centralized": 900, "tek": 600, "dh": 900}


def load_scenario(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}")
    try:
        scenario = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc.msg}",
                            line=exc.lineno, column=exc.colno)
    for key in ("id", "runs"):
        if key not in scenario:
            raise ScenarioError(f"scenario {path} is missing the {key!r} field")
    return scenario


def _parse_group(cfg: dict) -> GroupParams:
    group = cfg.get("group", "x25519")
    if group == "x25519":
        return GroupParams.production()
    return GroupParams.toy(group["p"], group["g"])


def _normalize_devices(raw: list) -> list[dict]:
    out = []
    for entry in raw:
        if isinstance(entry, str):
            entry = {"id": entry}
        out.append({"id": entry["id"], "role": entry.get("role", "device"),
                    "clock_offset_s": entry.get("clock_offset_s", 0),
                    "mode": entry.get("mode"), "phone": entry.get("phone")})
    return out


@dataclass
class RunResult:
    label: str
    events: list
    metrics: dict


@dataclass
class _RunState:
    world: World
    server: TracingServer
    trace: ContactTrace
    scheme: str
    clients: dict[str, DeviceClient]
    scheme_devices: list[str]
    reporters: set[str] = field(default_factory=set)
    notified: dict[str, int] = field(default_factory=dict)
    exposures_by_device: dict[str, int] = field(default_factory=dict)
    cursors: dict[str, int] = field(default_factory=dict)
    attack_stats: dict = field(default_factory=dict)


def execute_run(run_cfg: dict, stream: SeedStream) -> RunResult:
    label = run_cfg["label"]
    scheme = run_cfg["scheme"]
    sconf = run_cfg.get("scheme_config", {})
    duration = run_cfg["duration_s"]
    analysis = run_cfg.get("analysis", {})
    attack = run_cfg.get("attack")

    edges = [ContactEdge(*e) for e in run_cfg.get("contact_trace", [])]
    trace = ContactTrace(edges)
    capabilities = ("clock",) if attack and attack.get("kind") == "time_travel" else ()
    world = World(trace, stream.child("world"),
                  link_rotation_s=sconf.get("rotation_s", SCHEME_ROTATION_DEFAULTS[scheme]),
                  capabilities=capabilities,
                  irk_linkable=bool(run_cfg.get("irk_linkable", False)))

    registry = None
    if scheme == "centralized":
        registry = CentralRegistry(stream.child("registry"),
                                   variant=sconf.get("variant", "bluetrace"),
                                   rotation_s=sconf.get("rotation_s", 900))
    server = TracingServer(stream.child("server"), registry=registry,
                           retention_days=sconf.get("retention_days", 14))
    server.clock = lambda: world.now

    state = _RunState(world, server, trace, scheme, {}, [])
    _build_devices(run_cfg, state, stream, sconf)
    if attack:
        _install_attack(attack, run_cfg, state, stream)
    _schedule_reports(run_cfg, state)
    _schedule_syncs(run_cfg, state)
    _schedule_superspreader_checks(run_cfg, state, sconf)

    world.run()

    metrics = _collect_metrics(run_cfg, state, sconf, analysis)
    return RunResult(label, world.events, metrics)


def _build_devices(run_cfg: dict, state: _RunState, stream: SeedStream, sconf: dict) -> None:
    scheme = state.scheme
    for dev in _normalize_devices(run_cfg["devices"]):
        did, role = dev["id"], dev["role"]
        if role == "sniffer":
            client = adversary.SnifferClient()
        elif role == "relay":
            client = DeviceClient()
        elif role == "replayer":
            client = adversary.ReplayClient()
        elif scheme == "centralized":
            client = CentralizedClient(state.server.registry,
                                       mode=dev["mode"] or sconf.get("mode", "anonymous"),
                                       phone=dev["phone"])
        elif scheme == "tek":
            client = TekClient(stream.child(f"device:{did}"),
                               validity_window_s=sconf.get("validity_window_s", 7200),
                               strict_freshness=sconf.get("strict_freshness", False),
                               retention_days=sconf.get("retention_days", 14))
        else:
            cfg = DhConfig(rotation_s=sconf.get("rotation_s", 900),
                           min_encounter_s=sconf.get("min_encounter_s", 300),
                           epsilon_s=sconf.get("epsilon_s", 60),
                           superspreader_threshold=sconf.get("superspreader_threshold", 3),
                           anonymized_upload=sconf.get("anonymized_upload", False),
                           group=_parse_group(sconf))
            client = DhClient(stream.child(f"device:{did}"), cfg)
        state.world.add_device(did, client, dev["clock_offset_s"])
        state.clients[did] = client
        if role == "device":
            state.scheme_devices.append(did)
            state.cursors[did] = 0
    if scheme == "centralized":
        for did in state.scheme_devices:
            state.clients[did].register()
        state.server.on_notify = lambda note: _on_central_notify(state, note)


def _on_central_notify(state: _RunState, note: dict) -> None:
    device = note["device_id"]
    state.notified[device] = state.notified.get(device, 0) + 1
    state.world.emit("notify", {"device": device, "scheme": "centralized",
                                "channel": note["channel"], "cause": note["cause"]})


def _install_attack(attack: dict, run_cfg: dict, state: _RunState, stream: SeedStream) -> None:
    kind = attack["kind"]
    if kind == "relay":
        pair = adversary.RelayPair(node_a=attack["node_a"], node_b=attack["node_b"],
                                   mode=attack["mode"], window=tuple(attack["window"]),
                                   latency_s=attack.get("latency_s", 0),
                                   fanout_limit=attack.get("fanout_limit", 8),
                                   tick_s=attack.get("tick_s", 60))
        state.attack_stats = adversary.install_relay(state.world, pair)
        state.attack_stats["kind"] = "relay"
    elif kind == "time_travel":
        tt = adversary.TimeTravelAttack(victim=attack["victim"], replayer=attack["replayer"],
                                        offset_s=attack["offset_s"], at_s=attack["at_s"],
                                        restore_at_s=attack["restore_at_s"])
        state.attack_stats = adversary.install_time_travel(state.world, state.server,
                                                           tt, state.scheme)
        state.attack_stats["kind"] = "time_travel"
    elif kind == "fake_claim":
        state.attack_stats = {"kind": "fake_claim"}

        def run_claim():
            claimant = attack["claimant"]
            state.reporters.add(claimant)
            if state.scheme == "tek":
                result = adversary.fake_claim_tek(
                    state.server, state.world.local_time(claimant))
            elif state.scheme == "dh":
                result = adversary.fake_claim_dh(state.server, stream.child("attack"),
                                                 guesses=attack.get("guesses", 32))
            else:
                spy = state.clients[attack["source_sniffer"]]
                result = adversary.fake_claim_centralized(state.server, claimant,
                                                          spy.observations)
            state.attack_stats.update(result)

        state.world.schedule(attack["at"], run_claim)
    else:
        raise ScenarioError(f"unknown attack kind {kind!r}")


def _schedule_reports(run_cfg: dict, state: _RunState) -> None:
    for infection in run_cfg.get("infections", []):
        device = infection["device"]
        at = infection["report_at"]

        def report(device=device):
            state.reporters.add(device)
            tan = state.server.issue_tan(device)
            bundle = state.clients[device].make_report(tan.value)
            try:
                ack = state.server.accept_upload(bundle)
                state.world.emit("report", {"device": device, "scheme": state.scheme,
                                            "entries": ack.get("published",
                                                               ack.get("matched_users", 0)),
                                            "accepted": True})
            except UploadRejected as exc:
                state.world.emit("report", {"device": device, "scheme": state.scheme,
                                            "accepted": False, "reason": exc.reason})

        state.world.schedule(at, report)


def _schedule_syncs(run_cfg: dict, state: _RunState) -> None:
    if state.scheme == "centralized":
        return   # notifications are pushed by the server at upload time
    times = sorted({i["report_at"] + SYNC_DELAY_S for i in run_cfg.get("infections", [])}
                   | {run_cfg["duration_s"]})

    def sync():
        for did in state.scheme_devices:
            client = state.clients[did]
            entries, cursor = state.server.fetch_feed(state.scheme, state.cursors[did])
            state.cursors[did] = cursor
            fresh = client.sync(entries, state.world.local_time(did))
            for exposure in fresh:
                state.notified[did] = state.notified.get(did, 0) + 1
                state.exposures_by_device[did] = state.exposures_by_device.get(did, 0) + 1
                state.world.emit("notify", {"device": did, "scheme": state.scheme,
                                            "cause": "exposure_match",
                                            "detail": exposure.as_dict()})

    for t in times:
        state.world.schedule(t, sync)


def _schedule_superspreader_checks(run_cfg: dict, state: _RunState, sconf: dict) -> None:
    devices = run_cfg.get("analysis", {}).get("superspreader_check", [])
    if not devices or state.scheme != "dh":
        return
    results: dict[str, dict] = {}
    state.attack_stats.setdefault("superspreader_results", results)

    def check():
        for did in devices:
            client = state.clients[did]
            result = client.superspreader_check()
            accepted = 0
            if result["proof"]:
                proof = encode_proof(result["proof"], client.cfg.group)
                accepted = state.server.verify_superspreader_proof(proof)
            results[did] = {"warn": result["warn"], "matches": result["matches"],
                            "proof_accepted": accepted,
                            "verified": accepted >= client.cfg.superspreader_threshold}

    # after the final feed sync at the same timestamp
    state.world.schedule(run_cfg["duration_s"], check)


def _published_teks(server: TracingServer) -> list[PublishedTek]:
    entries, _ = server.fetch_feed("tek")
    return [PublishedTek(Tek(bytes.fromhex(e["tek_hex"]), e["day"]), e["published_at"])
            for e in entries]


def _sniffer_observations(state: _RunState) -> list[adversary.SnifferObservation]:
    obs = []
    for did in sorted(state.clients):
        client = state.clients[did]
        if isinstance(client, adversary.SnifferClient):
            obs.extend(client.observations)
    obs.sort(key=lambda o: (o.at, o.sniffer_id, o.identifier))
    return obs


def _collect_metrics(run_cfg: dict, state: _RunState, sconf: dict, analysis: dict) -> dict:
    trace = state.trace
    notified = dict(sorted(state.notified.items()))
    false_devices = sorted(
        d for d in notified
        if not any(trace.has_any_contact(d, r) for r in state.reporters))
    metrics: dict = {
        "scheme": state.scheme,
        "notifications": notified,
        "notified_devices": sorted(notified),
        "false_notified_devices": false_devices,
        "false_notifications": len(false_devices),
        "true_notified_devices": sorted(set(notified) - set(false_devices)),
        "notify_events": sum(notified.values()),
        "reports": len(state.reporters),
        "connect_rejects_capacity": state.world.counters["connect_rejects_capacity"],
        "connect_rejects_range": state.world.counters["connect_rejects_range"],
    }
    if state.attack_stats:
        attack = {k: v for k, v in state.attack_stats.items()
                  if k != "superspreader_results"}
        if attack:
            metrics["attack"] = attack
        if "superspreader_results" in state.attack_stats:
            metrics["superspreader"] = state.attack_stats["superspreader_results"]

    if analysis.get("linkage"):
        observations = _sniffer_observations(state)
        rotation_s = sconf.get("rotation_s", SCHEME_ROTATION_DEFAULTS[state.scheme])
        kwargs = {}
        if state.scheme == "tek":
            kwargs["published_teks"] = _published_teks(state.server)
        elif state.scheme == "centralized" and analysis.get("colluding_sp"):
            kwargs["registry"] = state.server.registry
            kwargs["scanned_windows"] = (0, run_cfg["duration_s"] // rotation_s + 1)
        report = adversary.run_linkage(observations, state.scheme, **kwargs)
        metrics["linkage"] = report.as_dict()
        metrics["linkage"]["rotation_s"] = rotation_s

    if analysis.get("social_graph"):
        graph = adversary.run_social_graph(
            state.server, state.scheme,
            observations=_sniffer_observations(state),
            published_teks=_published_teks(state.server))
        roles = {d["id"]: d["role"] for d in _normalize_devices(run_cfg["devices"])}
        truth = sorted(
            sorted((r, c)) for r in state.reporters
            for c in trace.contacts_of(r) if roles.get(c) == "device")
        graph["ground_truth_edges"] = truth
        graph["ground_truth_edge_count"] = len(truth)
        if state.scheme == "centralized":
            recovered = {tuple(e) for e in graph["recovered_edges"]}
            graph["recovered_fraction"] = (
                len(recovered & {tuple(e) for e in truth}) / len(truth) if truth else 0.0)
        metrics["social_graph"] = graph

    if analysis.get("superspreader_check") and state.scheme != "dh":
        metrics["superspreader"] = _non_dh_superspreader(run_cfg, state, sconf)

    return metrics


def _non_dh_superspreader(run_cfg: dict, state: _RunState, sconf: dict) -> dict:
    threshold = sconf.get("superspreader_threshold", 3)
    results = {}
    for did in run_cfg["analysis"]["superspreader_check"]:
        if state.scheme == "centralized":
            uploaders = {m["uploader_device"] for m in state.server.match_history
                         if m["contact_device"] == did}
            count = len(uploaders)
            results[did] = {"warn": count >= threshold, "matches": count,
                            "verified": count >= threshold,
                            "basis": "server-side match history"}
        else:
            count = state.exposures_by_device.get(did, 0)
            results[did] = {"warn": count >= threshold, "matches": count,
                            "verified": False,
                            "basis": "client-side count, not provable"}
    return results


def run_scenario(scenario: dict, seed: int | None = None,
                 out_dir: str | Path | None = None) -> dict:
    """Execute every run of a scenario; optionally write events.jsonl and
    metrics.json under out_dir. Returns the metrics document."""
    sid = scenario["id"]
    seed = scenario.get("seed", 0) if seed is None else seed
    root = SeedStream(seed, sid)
    lines: list[str] = []
    runs_metrics: dict[str, dict] = {}
    for run_cfg in scenario["runs"]:
        result = execute_run(run_cfg, root.child(run_cfg["label"]))
        for ev in result.events:
            lines.append(json.dumps(
                {"run": result.label, "at": ev.at_s, "seq": ev.seq,
                 "kind": ev.kind, "payload": ev.payload},
                sort_keys=True, separators=(",", ":")))
        runs_metrics[result.label] = result.metrics
    metrics = {"scenario": sid, "seed": seed, "runs": runs_metrics}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        (out / "metrics.json").write_text(
            json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return metrics
