"""Instruction-list soft PLC.

Programs are lines of `OPCODE [operands]` grouped into numbered networks;
`SBR name` opens a subroutine that runs until RT. A network's first
instruction is a rung-condition starter (STR / STRE / STRNE / STRGE);
the exception is a network consisting solely of RT, which returns
unconditionally. Actions after the starter see the rung condition:

    OUT Yb    drive coil Yb to the rung value, every scan, no latching
    COPY a b  store word a into b when the rung is true
    CALL s    run subroutine s when the rung is true
    RT        return from the current routine

Word cells (DS/YS banks) are signed 16-bit; literals are signed decimal.
Bit cells live in Y/X banks; SC1 is the always-true system bit. Cells
auto-exist as 0/false on first touch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

STARTERS = ("STR", "STRE", "STRNE", "STRGE")
ACTIONS = ("OUT", "COPY", "CALL", "RT")

MAX_CALL_DEPTH = 16

from .table import BIT_BANKS, WORD_BANKS, parse_logic_address
from .table import MapConfigError as _AddrError


class LogicError(Exception):
    pass


class ParseError(LogicError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class RuntimeFault(LogicError):
    pass


@dataclass(frozen=True)
class Operand:
    """A logic cell reference, or a literal when bank is None."""
    bank: str | None
    value: int

    @property
    def is_literal(self) -> bool:
        return self.bank is None

    @property
    def is_bit(self) -> bool:
        return self.bank in BIT_BANKS

    def __str__(self) -> str:
        return str(self.value) if self.bank is None else f"{self.bank}{self.value}"


@dataclass(frozen=True)
class Instruction:
    op: str
    operands: tuple[Operand, ...]
    call_target: str | None = None
    line_no: int = 0


@dataclass
class Network:
    number: int
    instructions: list[Instruction] = field(default_factory=list)


@dataclass
class Program:
    main: list[Network]
    subroutines: dict[str, list[Network]]


class LogicTable:
    """Signed word banks (DS, YS) and bit banks (Y, X); SC1 reads true."""

    def __init__(self) -> None:
        self._words: dict[tuple[str, int], int] = {}
        self._bits: dict[tuple[str, int], bool] = {}

    def get_word(self, bank: str, index: int) -> int:
        if bank not in WORD_BANKS:
            raise RuntimeFault(f"{bank}{index} is not a word cell")
        return self._words.get((bank, index), 0)

    def set_word(self, bank: str, index: int, value: int) -> None:
        if bank not in WORD_BANKS:
            raise RuntimeFault(f"{bank}{index} is not a word cell")
        wrapped = value & 0xFFFF
        self._words[(bank, index)] = wrapped - 0x10000 if wrapped >= 0x8000 else wrapped

    def get_bit(self, bank: str, index: int) -> bool:
        if bank == "SC":
            return index == 1
        if bank not in BIT_BANKS:
            raise RuntimeFault(f"{bank}{index} is not a bit cell")
        return self._bits.get((bank, index), False)

    def set_bit(self, bank: str, index: int, value: bool) -> None:
        if bank == "SC":
            raise RuntimeFault("SC bits are system-owned")
        if bank not in BIT_BANKS:
            raise RuntimeFault(f"{bank}{index} is not a bit cell")
        self._bits[(bank, index)] = bool(value)

    def cells(self) -> dict[str, int | bool]:
        out: dict[str, int | bool] = {}
        for (bank, index), value in sorted(self._words.items()):
            out[f"{bank}{index}"] = value
        for (bank, index), value in sorted(self._bits.items()):
            out[f"{bank}{index}"] = value
        return out


def _parse_operand(token: str, line_no: int) -> Operand:
    try:
        return Operand(None, int(token, 10))
    except ValueError:
        pass
    try:
        bank, index = parse_logic_address(token)
    except _AddrError as exc:
        raise ParseError(line_no, str(exc)) from None
    return Operand(bank, index)


def _word_operand(token: str, line_no: int) -> Operand:
    operand = _parse_operand(token, line_no)
    if not operand.is_literal and operand.bank not in WORD_BANKS:
        raise ParseError(line_no, f"{token} is not a word operand")
    return operand


def _bit_operand(token: str, line_no: int) -> Operand:
    operand = _parse_operand(token, line_no)
    if operand.is_literal or operand.bank not in BIT_BANKS + ("SC",):
        raise ParseError(line_no, f"{token} is not a bit operand")
    return operand


def parse_program(text: str) -> Program:
    main: list[Network] = []
    subroutines: dict[str, list[Network]] = {}
    current_list = main
    network: Network | None = None

    def close_network(line_no: int) -> None:
        nonlocal network
        if network is None:
            return
        if not network.instructions:
            raise ParseError(line_no, f"network {network.number} is empty")
        first = network.instructions[0]
        if first.op not in STARTERS and first.op != "RT":
            raise ParseError(first.line_no,
                             f"network {network.number} does not start with a rung condition")
        current_list.append(network)
        network = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        op, args = tokens[0], tokens[1:]

        if op == "NETWORK":
            close_network(line_no)
            if len(args) != 1 or not args[0].isdigit():
                raise ParseError(line_no, "NETWORK needs a number")
            network = Network(int(args[0]))
            continue
        if op == "SBR":
            close_network(line_no)
            if len(args) != 1:
                raise ParseError(line_no, "SBR needs a name")
            name = args[0]
            if name in subroutines:
                raise ParseError(line_no, f"duplicate subroutine {name!r}")
            subroutines[name] = []
            current_list = subroutines[name]
            continue

        if network is None:
            raise ParseError(line_no, f"instruction {op} outside any network")

        if op == "STR":
            if len(args) != 1:
                raise ParseError(line_no, "STR takes one bit operand")
            instr = Instruction("STR", (_bit_operand(args[0], line_no),), line_no=line_no)
        elif op in ("STRE", "STRNE", "STRGE"):
            if len(args) != 2:
                raise ParseError(line_no, f"{op} takes two word operands")
            instr = Instruction(op, (_word_operand(args[0], line_no),
                                     _word_operand(args[1], line_no)), line_no=line_no)
        elif op == "OUT":
            if len(args) != 1:
                raise ParseError(line_no, "OUT takes one bit operand")
            target = _bit_operand(args[0], line_no)
            if target.bank == "SC":
                raise ParseError(line_no, "cannot drive SC bits")
            instr = Instruction("OUT", (target,), line_no=line_no)
        elif op == "COPY":
            if len(args) != 2:
                raise ParseError(line_no, "COPY takes source and destination")
            dst = _word_operand(args[1], line_no)
            if dst.is_literal:
                raise ParseError(line_no, "COPY destination must be a cell")
            instr = Instruction("COPY", (_word_operand(args[0], line_no), dst),
                                line_no=line_no)
        elif op == "CALL":
            if len(args) != 1:
                raise ParseError(line_no, "CALL takes a subroutine name")
            instr = Instruction("CALL", (), call_target=args[0], line_no=line_no)
        elif op == "RT":
            if args:
                raise ParseError(line_no, "RT takes no operands")
            instr = Instruction("RT", (), line_no=line_no)
        else:
            raise ParseError(line_no, f"unknown opcode {op!r}")

        if instr.op in STARTERS and network.instructions:
            raise ParseError(line_no, f"{op} must start a network")
        network.instructions.append(instr)

    close_network(len(text.splitlines()) + 1)

    program = Program(main, subroutines)
    for networks in [main, *subroutines.values()]:
        for net in networks:
            for instr in net.instructions:
                if instr.op == "CALL" and instr.call_target not in subroutines:
                    raise ParseError(instr.line_no,
                                     f"unknown subroutine {instr.call_target!r}")
    return program


def _word_value(logic: LogicTable, operand: Operand) -> int:
    if operand.is_literal:
        return operand.value
    return logic.get_word(operand.bank, operand.value)


def _run_networks(networks: list[Network], program: Program,
                  logic: LogicTable, depth: int) -> None:
    if depth > MAX_CALL_DEPTH:
        raise RuntimeFault("subroutine call depth exceeded")
    for net in networks:
        rung = True
        for instr in net.instructions:
            if instr.op == "STR":
                operand = instr.operands[0]
                rung = logic.get_bit(operand.bank, operand.value)
            elif instr.op == "STRE":
                rung = _word_value(logic, instr.operands[0]) == _word_value(logic, instr.operands[1])
            elif instr.op == "STRNE":
                rung = _word_value(logic, instr.operands[0]) != _word_value(logic, instr.operands[1])
            elif instr.op == "STRGE":
                rung = _word_value(logic, instr.operands[0]) >= _word_value(logic, instr.operands[1])
            elif instr.op == "OUT":
                operand = instr.operands[0]
                logic.set_bit(operand.bank, operand.value, rung)
            elif instr.op == "COPY":
                if rung:
                    src, dst = instr.operands
                    logic.set_word(dst.bank, dst.value, _word_value(logic, src))
            elif instr.op == "CALL":
                if rung:
                    _run_networks(program.subroutines[instr.call_target],
                                  program, logic, depth + 1)
            elif instr.op == "RT":
                return


def scan_cycle(program: Program, logic: LogicTable) -> None:
    """One full scan: every main network in order, subroutines as called."""
    _run_networks(program.main, program, logic, depth=0)
