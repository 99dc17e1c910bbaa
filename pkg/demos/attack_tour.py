"""Run a few adversary scenarios and print what each entity decided.

    python3 demos/attack_tour.py [scenario ...]

With no arguments a short tour is shown; ``all`` runs every scenario.
"""

import sys
import time

from ramhu.harness import ALL_SCENARIOS, run_scenario

TOUR = ["replay", "mitm", "stolen-device", "server-impersonation", "traceability"]


def main(names):
    if names == ["all"]:
        names = list(ALL_SCENARIOS)
    for name in names or TOUR:
        t0 = time.perf_counter()
        report = run_scenario(name, seed=0)
        print(f"\n### {name}: {'held' if report.passed else 'BROKEN'} ({time.perf_counter() - t0:.2f}s)")
        for step in report.steps:
            if step.action.startswith("scan-"):
                continue
            mark = " " if step.ok else "!"
            print(f" {mark} {step.action:<34} {step.entity:<9} {step.verdict:<22} want {step.expected}")
        scans = [s for s in report.steps if s.action.startswith("scan-")]
        clean = sum(s.ok for s in scans)
        print(f"   transcript scan: {clean}/{len(scans)} secret groups absent from adversary view")


if __name__ == "__main__":
    main(sys.argv[1:])
