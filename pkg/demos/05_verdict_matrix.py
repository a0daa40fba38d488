"""Run the full standard scenario suite and print the verdict matrix.

Every +/- cell is backed by a metric from a scenario that just ran; the
evidence column says which one. Outputs land in ./out/ (events.jsonl and
metrics.json per scenario, quadrilemma.csv at the top).
"""

from dctlab.cli import main, matrix_csv, quadrilemma

OUT = "out"

exit_code = main(["--suite", "standard", "--matrix", "--out", OUT])
assert exit_code == 0

print()
verdicts = quadrilemma(OUT)
width = max(len(v.evidence) for v in verdicts)
current = None
for v in verdicts:
    if v.requirement != current:
        current = v.requirement
        print(f"-- {current}")
    mark = "+" if v.sign == "plus" else "-"
    note = f"   [{v.notes}]" if v.notes else ""
    print(f"   {mark} {v.scheme:12s} {v.evidence:<{width}}{note}")

print(f"\nfull CSV at {OUT}/quadrilemma.csv:")
print(matrix_csv(verdicts))
