"""Movement tracking with a passive sniffer network.

Three sniffers cover a commuter's day (roughly 08:00 to 21:00). After the
commuter reports an infection, the attacker tries to stitch the sniffed
beacons into movement tracks. What the published material lets the attacker
link decides how long a track gets.
"""

from dctlab.cli import builtin_scenario
from dctlab.scenario import run_scenario

for sid, story in (
        ("linkage_tek",
         "published daily key re-derives all 144 identifiers -> one day-long track"),
        ("linkage_dh",
         "hash-only feed, per-window pseudonyms -> tracks die at the rotation boundary"),
        ("linkage_centralized",
         "provider colludes: registry re-derives every user's identifiers")):
    run = run_scenario(builtin_scenario(sid))["runs"]["main"]
    linkage = run["linkage"]
    hours = linkage["max_track_duration_s"] / 3600
    print(f"== {sid}")
    print(f"   {story}")
    print(f"   tracks: {linkage['tracks']:3d}   longest: {hours:5.2f} h "
          f"({linkage['max_track_sightings']} sightings)")
