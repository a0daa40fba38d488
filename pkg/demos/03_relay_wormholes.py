"""Relay (wormhole) attacks against each scheme family.

A one-way relay records beacons in one place and replays them elsewhere;
against broadcast-identifier schemes every remote listener becomes a fake
contact. Against the DH scheme a beacon is just an opaque pseudonym: with no
two-way handshake there is no token and nothing to match. A real-time
two-way relay can carry a handshake through the wormhole, but the victim's
radio sustains at most 8 connections, and the sealed-timestamp check rejects
matches whose recorded times differ by more than epsilon.
"""

from dctlab.cli import builtin_scenario
from dctlab.scenario import run_scenario

for sid in ("relay_centralized", "relay_tek", "relay_dh"):
    metrics = run_scenario(builtin_scenario(sid))
    print(f"== {sid}")
    for label, run in metrics["runs"].items():
        attack = run.get("attack", {})
        line = f"  {label:13s} false notifications: {run['false_notifications']}"
        if attack.get("mode") == "two_way_realtime":
            line += (f"  (relayed connections: {attack['relayed_connections']},"
                     f" refused: {attack['relay_rejects']})")
        print(line)

print("""
Reading the numbers: the centralized and daily-key schemes notify every
remote target of a one-way relay. The DH scheme ignores one-way copies
entirely; the two-way wormhole reaches 8 of its 12 targets at zero latency
(the radio's connection budget) and none at 300 s latency (past epsilon).
""")
