"""Two-tank pump process.

Water moves between tank1 and tank2 at |speed| level-units per second;
positive speed pumps tank1 -> tank2, negative the other way. Levels live
in [0, 100] and are kept as exact rationals; each step moves
min(rate * dt, source content, destination headroom), so clamping can
never create or destroy water. The commanded speed is read from the pump
register as a signed value and is deliberately not limited here; only
the operator UI path clamps it.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .table import (
    PUMP_SPEED_REG,
    TANK1_LEVEL_REG,
    TANK2_LEVEL_REG,
    DataTable,
    Space,
    to_signed,
)

TICK = Fraction(1, 10)  # seconds per process step
LEVEL_MIN = 0
LEVEL_MAX = 100


class Band(str, Enum):
    LL = "LL"
    L = "L"
    NORMAL = "NORMAL"
    H = "H"
    HH = "HH"


@dataclass(frozen=True)
class Thresholds:
    hh: int = 95
    h: int = 80
    l: int = 20
    ll: int = 5

    def __post_init__(self) -> None:
        if not self.ll < self.l < self.h < self.hh:
            raise ValueError(f"thresholds must be ordered: {self}")


def classify_level(level, thresholds: Thresholds = Thresholds()) -> Band:
    """Band of a level value; bounds: HH at >=hh, H in [h, hh), LL at <=ll,
    L in (ll, l]."""
    if level >= thresholds.hh:
        return Band.HH
    if level >= thresholds.h:
        return Band.H
    if level <= thresholds.ll:
        return Band.LL
    if level <= thresholds.l:
        return Band.L
    return Band.NORMAL


class TankProcess:
    """Owns the physical levels; mirrors them into the sensor registers."""

    def __init__(self, table: DataTable, level1=50, level2=50,
                 thresholds: Thresholds = Thresholds()) -> None:
        self.table = table
        self.level1 = Fraction(level1)
        self.level2 = Fraction(level2)
        self.thresholds = thresholds
        self.write_back()

    @property
    def speed(self) -> int:
        return to_signed(self.table.get_word(Space.HOLDING_REGISTER, PUMP_SPEED_REG))

    @property
    def total(self) -> Fraction:
        return self.level1 + self.level2

    def band1(self) -> Band:
        return classify_level(self.level1, self.thresholds)

    def band2(self) -> Band:
        return classify_level(self.level2, self.thresholds)

    def step(self, dt: Fraction = TICK) -> None:
        """Advance dt seconds and write the rounded levels back out."""
        speed = self.speed
        if speed > 0:
            moved = min(Fraction(speed) * dt, self.level1, LEVEL_MAX - self.level2)
            self.level1 -= moved
            self.level2 += moved
        elif speed < 0:
            moved = min(Fraction(-speed) * dt, self.level2, LEVEL_MAX - self.level1)
            self.level2 -= moved
            self.level1 += moved
        self.write_back()

    def write_back(self) -> None:
        self.table.set_word(Space.HOLDING_REGISTER, TANK1_LEVEL_REG, round(self.level1))
        self.table.set_word(Space.HOLDING_REGISTER, TANK2_LEVEL_REG, round(self.level2))
