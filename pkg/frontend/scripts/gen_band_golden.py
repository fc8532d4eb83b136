"""Regenerate tests/band_golden.json from the plant-side classifier.

The browser HMI ships its own copy of the level-band rules; this table
is the bridge that keeps the two sides honest. Run from anywhere with
the tankbed package importable; a test on each side pins against the
file.
"""

import json
from fractions import Fraction
from pathlib import Path

from tankbed.tanks import Thresholds, classify_level

OUT = Path(__file__).resolve().parents[1] / "tests" / "band_golden.json"


def tenths(lo: int, hi: int) -> list[Fraction]:
    return [Fraction(n, 10) for n in range(lo * 10, hi * 10 + 1)]


def main() -> None:
    thresholds = Thresholds()
    levels: list[Fraction] = []
    for whole in range(0, 101):
        levels.append(Fraction(whole))
    for boundary in (thresholds.ll, thresholds.l, thresholds.h, thresholds.hh):
        levels.extend(tenths(int(boundary) - 1, int(boundary) + 1))
    seen = set()
    cases = []
    for level in sorted(levels):
        if level in seen:
            continue
        seen.add(level)
        band = classify_level(level, thresholds)
        cases.append([float(level), band.name])
    doc = {
        "thresholds": {"hh": float(thresholds.hh), "h": float(thresholds.h),
                       "l": float(thresholds.l), "ll": float(thresholds.ll)},
        "cases": cases,
    }
    OUT.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {OUT} ({len(cases)} cases)")


if __name__ == "__main__":
    main()
