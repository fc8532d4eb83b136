"""Keeps the browser HMI's level-band table in sync with the plant.

The front end ships a copy of the band rules and pins them to
frontend/tests/band_golden.json; this test regenerates every case from
the plant-side classifier so neither side can drift alone.
"""

import json
from fractions import Fraction
from pathlib import Path

import pytest

from tankbed.tanks import Thresholds, classify_level

GOLDEN = Path(__file__).resolve().parents[1] / "frontend" / "tests" / \
    "band_golden.json"


@pytest.fixture(scope="module")
def golden():
    if not GOLDEN.exists():
        pytest.skip("front end not present in this checkout")
    return json.loads(GOLDEN.read_text())


def test_golden_thresholds_are_the_plant_defaults(golden):
    t = Thresholds()
    assert golden["thresholds"] == {"hh": float(t.hh), "h": float(t.h),
                                    "l": float(t.l), "ll": float(t.ll)}


def test_every_golden_case_matches_the_classifier(golden):
    thresholds = Thresholds()
    assert len(golden["cases"]) > 150
    for level, band in golden["cases"]:
        computed = classify_level(Fraction(str(level)), thresholds)
        assert computed.name == band, f"level {level}"


def test_golden_covers_the_boundaries(golden):
    levels = {level for level, _ in golden["cases"]}
    for boundary in (5.0, 20.0, 80.0, 95.0):
        assert boundary in levels
        assert round(boundary - 0.1, 1) in levels
        assert round(boundary + 0.1, 1) in levels
