"""System data table: the four Modbus address spaces plus the logic map.

Each space holds 65536 zero-initialized cells. Discrete inputs and input
registers are read-only from the Modbus side; the process simulator writes
them through the privileged path. Registers always store unsigned 16-bit
values; signedness is applied where values are consumed.
"""
from __future__ import annotations

import configparser
import re
from array import array
from dataclasses import dataclass
from enum import Enum

SPACE_SIZE = 65536

# Register plan shared across the testbed.
PUMP_SPEED_REG = 32210
TANK1_LEVEL_REG = 42210
TANK2_LEVEL_REG = 42211
THRESH_H_REG = 42212
THRESH_L_REG = 42213
THRESH_HH_REG = 42214
THRESH_LL_REG = 42215
FAULT_COIL = 1340
FAULT_RESET_COIL = 65283


class Space(str, Enum):
    DISCRETE_INPUT = "inp"
    COIL = "coil"
    INPUT_REGISTER = "inpreg"
    HOLDING_REGISTER = "holdingreg"


BIT_SPACES = (Space.DISCRETE_INPUT, Space.COIL)
WORD_SPACES = (Space.INPUT_REGISTER, Space.HOLDING_REGISTER)
READ_ONLY_SPACES = (Space.DISCRETE_INPUT, Space.INPUT_REGISTER)


class TableError(Exception):
    pass


class OutOfBounds(TableError):
    pass


class ReadOnlySpace(TableError):
    pass


def to_signed(value: int) -> int:
    """Reinterpret an unsigned 16-bit cell as two's-complement."""
    return value - 0x10000 if value >= 0x8000 else value


def to_unsigned(value: int) -> int:
    return value & 0xFFFF


def _check_range(address: int, quantity: int) -> None:
    if quantity < 1:
        raise OutOfBounds(f"quantity must be positive, got {quantity}")
    if address < 0 or address + quantity > SPACE_SIZE:
        raise OutOfBounds(f"range {address}+{quantity} exceeds {SPACE_SIZE}")


class DataTable:
    """One owner's register file. Mutation is not thread-safe by itself;
    concurrent frontends serialize access (one owner rule)."""

    def __init__(self) -> None:
        self._bits: dict[Space, bytearray] = {
            Space.DISCRETE_INPUT: bytearray(SPACE_SIZE),
            Space.COIL: bytearray(SPACE_SIZE),
        }
        self._words: dict[Space, array] = {
            Space.INPUT_REGISTER: array("H", bytes(2 * SPACE_SIZE)),
            Space.HOLDING_REGISTER: array("H", bytes(2 * SPACE_SIZE)),
        }

    def read_bits(self, space: Space, address: int, quantity: int) -> list[bool]:
        _check_range(address, quantity)
        store = self._bits[space]
        return [bool(store[address + i]) for i in range(quantity)]

    def read_words(self, space: Space, address: int, quantity: int) -> list[int]:
        _check_range(address, quantity)
        store = self._words[space]
        return list(store[address : address + quantity])

    def write_bits(self, space: Space, address: int, values: list[bool],
                   privileged: bool = False) -> None:
        _check_range(address, len(values))
        if space in READ_ONLY_SPACES and not privileged:
            raise ReadOnlySpace(f"{space.value} is read-only")
        store = self._bits[space]
        for i, value in enumerate(values):
            store[address + i] = 1 if value else 0

    def write_words(self, space: Space, address: int, values: list[int],
                    privileged: bool = False) -> None:
        _check_range(address, len(values))
        if space in READ_ONLY_SPACES and not privileged:
            raise ReadOnlySpace(f"{space.value} is read-only")
        store = self._words[space]
        for i, value in enumerate(values):
            if not 0 <= value <= 0xFFFF:
                raise TableError(f"register value out of range: {value}")
            store[address + i] = value

    # single-cell conveniences

    def get_bit(self, space: Space, address: int) -> bool:
        return self.read_bits(space, address, 1)[0]

    def set_bit(self, space: Space, address: int, value: bool,
                privileged: bool = False) -> None:
        self.write_bits(space, address, [value], privileged)

    def get_word(self, space: Space, address: int) -> int:
        return self.read_words(space, address, 1)[0]

    def set_word(self, space: Space, address: int, value: int,
                 privileged: bool = False) -> None:
        self.write_words(space, address, [value], privileged)

    def set_fault(self, flag: bool) -> None:
        """Mirror the comm-fault bit into all four spaces at the fault cell."""
        self.set_bit(Space.COIL, FAULT_COIL, flag)
        self.set_bit(Space.DISCRETE_INPUT, FAULT_COIL, flag, privileged=True)
        value = 1 if flag else 0
        self.set_word(Space.HOLDING_REGISTER, FAULT_COIL, value)
        self.set_word(Space.INPUT_REGISTER, FAULT_COIL, value, privileged=True)


# --- logic address map (mblogic.config) ---

WORD_BANKS = ("DS", "YS")
BIT_BANKS = ("Y", "SC", "X")

_LOGIC_ADDR_RE = re.compile(r"^([A-Z]+)(\d+)$")


class MapConfigError(TableError):
    pass


def parse_logic_address(text: str) -> tuple[str, int]:
    match = _LOGIC_ADDR_RE.match(text.strip())
    if not match:
        raise MapConfigError(f"bad logic address {text!r}")
    bank, index = match.group(1), int(match.group(2))
    if bank not in WORD_BANKS + BIT_BANKS:
        raise MapConfigError(f"unknown logic bank {bank!r}")
    return bank, index


@dataclass(frozen=True)
class MapEntry:
    section: str
    logic_address: str
    bank: str
    index: int
    space: Space
    system_offset: int
    direction: str  # "read": system -> logic; "write": logic -> system


def parse_address_map(text: str) -> list[MapEntry]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep case
    parser.read_string(text)
    entries: list[MapEntry] = []
    seen: set[tuple[str, Space, int]] = set()
    for section in parser.sections():
        opts = parser[section]
        direction = opts.get("action", "").strip()
        if direction not in ("read", "write"):
            raise MapConfigError(f"[{section}] bad action {direction!r}")
        try:
            space = Space(opts.get("addrtype", "").strip())
        except ValueError:
            raise MapConfigError(f"[{section}] bad addrtype") from None
        base = int(opts.get("base", "-1"))
        names = [n for n in (s.strip() for s in opts.get("logictable", "").split(",")) if n]
        if not names:
            raise MapConfigError(f"[{section}] empty logictable")
        if base < 0 or base + len(names) > SPACE_SIZE:
            raise MapConfigError(f"[{section}] base run exceeds the address space")
        for k, name in enumerate(names):
            bank, index = parse_logic_address(name)
            word_bank = bank in WORD_BANKS
            word_space = space in WORD_SPACES
            if word_bank != word_space:
                raise MapConfigError(
                    f"[{section}] {name} bank kind does not match {space.value}")
            key = (direction, space, base + k)
            if key in seen:
                raise MapConfigError(
                    f"[{section}] duplicate {direction} mapping for {space.value} {base + k}")
            seen.add(key)
            entries.append(MapEntry(section, name, bank, index, space, base + k, direction))
    return entries


def transfer(table: DataTable, logic, entries: list[MapEntry]) -> None:
    """Run the address map once: reads copy system -> logic (words become
    signed), writes copy logic -> system."""
    for entry in entries:
        if entry.direction == "read":
            if entry.space in WORD_SPACES:
                raw = table.get_word(entry.space, entry.system_offset)
                logic.set_word(entry.bank, entry.index, to_signed(raw))
            else:
                logic.set_bit(entry.bank, entry.index,
                              table.get_bit(entry.space, entry.system_offset))
        else:
            if entry.space in WORD_SPACES:
                value = to_unsigned(logic.get_word(entry.bank, entry.index))
                table.set_word(entry.space, entry.system_offset, value, privileged=True)
            else:
                table.set_bit(entry.space, entry.system_offset,
                              logic.get_bit(entry.bank, entry.index), privileged=True)
