"""Attack toolkit: command parsing, frame factories, scans, scenarios."""

import itertools
from importlib import resources
from pathlib import Path

import pytest

import tankbed
from tankbed import attack, codec
from tankbed.attack import (
    AttackEnv,
    ExchangeRecord,
    ModpollError,
    SCENARIOS,
    build_modpoll_request,
    format_transcript,
    iter_scenarios,
    match_personality,
    parse_modpoll,
)
from tankbed.honeypot import parse_fingerprint_db, parse_honeyd_config
from tankbed.netsim import Network
from tankbed.sim import Scheduler, spawn
from tankbed.slave import ModbusTcpServer, SlaveLogic, SlaveService
from tankbed.table import DataTable, Space


def data_dir() -> Path:
    return Path(tankbed.__file__).parent / "data"


def data_text(name: str) -> str:
    return resources.files("tankbed.data").joinpath(name).read_text()


def shipped_personalities() -> dict:
    return parse_fingerprint_db(data_text("nmap-os.db"))


class Lab:
    """Slave at 10.0.0.4 behind the shipped honeypot front at 10.0.0.5."""

    def __init__(self, seed: int = 0):
        self.sched = Scheduler()
        self.net = Network(self.sched)
        self.logic = SlaveLogic(DataTable())
        self.net.add_host("10.0.0.4")
        self.net.add_service("10.0.0.4", 502, SlaveService(self.logic))
        personalities = shipped_personalities()
        config = parse_honeyd_config(data_text("honeyd.config"))
        nodes = config.build_nodes(personalities, seed=seed,
                                   script_dir=data_dir())
        self.net.bind_honeypot("10.0.0.5", nodes["10.0.0.5"])
        self.env = AttackEnv(net=self.net, seed=seed,
                             personalities=personalities)

    def set_holding(self, address: int, value: int) -> None:
        self.logic.table.write_words(Space.HOLDING_REGISTER, address,
                                     [value], privileged=True)

    def holding(self, address: int) -> int:
        return self.logic.table.read_words(Space.HOLDING_REGISTER,
                                           address, 1)[0]

    def run(self, gen, t_max: float = 600.0):
        proc = spawn(self.sched, gen)
        self.sched.run_while(lambda: not proc.done, t_max)
        assert proc.done, "process did not finish in simulated time"
        return proc.result


# --- command line parsing --------------------------------------------------

def test_parse_write_with_explicit_values():
    args = parse_modpoll("modpoll -0 -r 32210 10.0.0.5 -- 200")
    assert args.host == "10.0.0.5"
    assert args.zero_based and args.reference == 32210
    assert args.values == (200,)
    assert not args.single_poll
    assert args.is_write


def test_parse_trailing_minus_one_after_host_is_a_value():
    args = parse_modpoll("modpoll -0 -r 32210 10.0.0.5 -1")
    assert args.values == (-1,)
    assert not args.single_poll


def test_parse_minus_one_before_host_is_the_single_poll_flag():
    args = parse_modpoll("modpoll -0 -1 -r 42212 10.0.0.5 120")
    assert args.single_poll
    assert args.reference == 42212
    assert args.values == (120,)


def test_parse_flood_command_with_bare_poll_flag():
    args = parse_modpoll("modpoll -m enc -t 3 -l -0 -r 32210 -l 1 10.0.0.5")
    assert args.mode == "enc"
    assert args.reg_type == 3
    assert args.read_function == codec.FN_READ_INPUT_REGISTERS
    assert args.zero_based and args.reference == 32210
    # the first -l is followed by -0, so it consumes nothing; the second
    # takes the 1
    assert args.poll_ms == 1
    assert args.values == ()


def test_parse_poll_interval_eats_positive_integers_only():
    assert parse_modpoll("-l 500 -0 -r 10 h").poll_ms == 500
    assert parse_modpoll("-l -0 -r 10 h").poll_ms == 1000


def test_parse_one_based_reference_shifts_down():
    assert parse_modpoll("-r 100 h").reference == 99
    assert parse_modpoll("h").reference == 99
    assert parse_modpoll("-0 -r 100 h").reference == 100


def test_parse_negative_value_after_double_dash():
    args = parse_modpoll("modpoll -0 -1 -r 42210 10.0.0.5 -- -50")
    assert args.values == (-50,)


def test_parse_accepts_token_lists():
    args = parse_modpoll(["-0", "-r", "7", "-p", "1502", "-a", "3", "host"])
    assert (args.reference, args.port, args.unit_id) == (7, 1502, 3)


def test_parse_rejections():
    bad = [
        "-0 -r 10",                    # no host
        "-t 2 h",                      # no such register type
        "-x h",                        # unknown option
        "-m udp h",                    # unknown transport
        "-0 -r 65536 h",               # reference too high
        "-r 0 h",                      # one-based 0 shifts below zero
        "-0 -r 10 h 70000",            # value out of range
        "-0 -t 1 -r 10 h 5",           # write to a read-only type
        "-r h",                        # option argument not a number
        "-m",                          # option without argument
    ]
    for line in bad:
        with pytest.raises(ModpollError):
            parse_modpoll(line)


# --- frame building --------------------------------------------------------

def test_write_frame_matches_known_encoding():
    # -5 encodes as fffb; the whole frame is checkable by hand
    args = parse_modpoll("modpoll -0 -r 32210 10.0.0.5 -- -5")
    frame = build_modpoll_request(args, 1)
    assert frame == bytes.fromhex("00010000000901107dd2000102fffb")


def test_write_frame_two_complement():
    args = parse_modpoll("modpoll -0 -r 32210 10.0.0.5 -- -200")
    frame = build_modpoll_request(args, 7)
    decoded = codec.decode_adu(frame)
    assert decoded.adu.function == codec.FN_WRITE_MULTIPLE_REGISTERS
    assert decoded.adu.payload == bytes.fromhex("7dd2000102ff38")
    assert decoded.adu.transaction_id == 7


def test_read_frame_encoding():
    args = parse_modpoll("modpoll -0 -r 42210 -c 2 10.0.0.5")
    frame = build_modpoll_request(args, 1)
    assert frame == bytes.fromhex("0001000000060103a4e20002")


def test_coil_write_frame():
    args = parse_modpoll("modpoll -0 -t 0 -r 10 h 1 0 1")
    frame = build_modpoll_request(args, 1)
    decoded = codec.decode_adu(frame)
    assert decoded.adu.function == codec.FN_WRITE_MULTIPLE_COILS
    assert codec.parse_bit_response(decoded.adu.payload[4:], 3) \
        == [True, False, True]


def test_enc_frame_and_checksum_corruption():
    args = parse_modpoll("modpoll -m enc -t 3 -0 -r 32210 10.0.0.5")
    good = build_modpoll_request(args)
    bad = build_modpoll_request(args, corrupt_crc=True)
    assert codec.decode_rtu(good).crc_ok
    assert not codec.decode_rtu(bad).crc_ok
    assert good[:-2] == bad[:-2]
    # both land on the serial path of the framing heuristic
    assert codec.detect_framing(good) == "rtu"
    assert codec.detect_framing(bad) == "rtu"


def test_transcript_formatting():
    records = [
        ExchangeRecord(0.5, b"\x01\x02", b"\x03", "ok"),
        ExchangeRecord(1.0, b"\x01", None),
        ExchangeRecord(2.0, b"", None, "note only"),
    ]
    text = format_transcript(records)
    lines = text.splitlines()
    assert lines[0] == "t=0.500000 req=0102 resp=03 ok"
    assert lines[1] == "t=1.000000 req=01 resp=-"
    assert lines[2] == "t=2.000000 note only"


# --- catalog shape ---------------------------------------------------------

def test_catalog_codes_and_alarm_map():
    codes = sorted(SCENARIOS)
    assert codes == ["CI-01", "CI-02", "CI-03", "CI-04", "CI-05", "CI-06",
                     "CI-07", "CI-08", "CI-09", "DOS-01", "DOS-02",
                     "REC-01", "REC-02", "REC-03", "REC-04"]
    alarmed = {c for c, s in SCENARIOS.items() if s.expected_alarm}
    assert alarmed == {"CI-03", "CI-04", "CI-05", "CI-06"}
    assert [s.code for s in iter_scenarios()] == codes
    for scenario in SCENARIOS.values():
        assert scenario.category in ("reconnaissance", "command-injection",
                                     "denial-of-service")
        assert scenario.note


# --- scans against the simulated lab ---------------------------------------

def test_port_scan_sees_honeypot_port_set():
    lab = Lab()
    found = lab.run(attack.port_scan(lab.env, "10.0.0.5",
                                     attack.QUICK_SCAN_PORTS), 60.0)
    open_ports = sorted(p for p, r in found.items() if r.status == "open")
    assert open_ports == [21, 23, 80, 111, 502, 47808]


def test_fingerprint_match_names_the_shipped_personality():
    lab = Lab()

    def prober():
        reply = yield lab.net.probe(lab.env.attacker_ip, "10.0.0.5", 502)
        return reply

    reply = lab.run(prober(), 5.0)
    names = match_personality(reply, lab.env.personalities)
    assert names == ["Motorola SURFboard SB5100E cable modem (VxWorks 5.4)"]


def test_function_scan_recovers_server_support():
    lab = Lab()
    records = []

    def driver():
        conn = yield lab.net.open(lab.env.attacker_ip, "10.0.0.5", 502, 1.0)
        txn = itertools.count(1)
        verdicts = yield from attack.function_scan(lab.env, conn, records,
                                                   txn)
        conn.close()
        return verdicts

    verdicts = lab.run(driver(), 120.0)
    supported = {f for f, v in verdicts.items() if v == "supported"}
    assert supported == set(codec.SUPPORTED_FUNCTIONS)
    assert all(v == "unsupported" for f, v in verdicts.items()
               if f not in codec.SUPPORTED_FUNCTIONS)
    assert len(records) == 127


def test_unit_scan_single_hit():
    lab = Lab()
    records = []

    def driver():
        conn = yield lab.net.open(lab.env.attacker_ip, "10.0.0.5", 502, 1.0)
        txn = itertools.count(1)
        hits = yield from attack.unit_scan(lab.env, conn, records, txn)
        conn.close()
        return hits

    assert lab.run(driver(), 300.0) == [1]


def test_memory_scan_sees_live_values_and_boundaries():
    lab = Lab()
    lab.set_holding(42210, 37)
    lab.set_holding(42211, 64)
    records = []

    def driver():
        txn = itertools.count(1)
        return (yield from attack.memory_scan(lab.env, records, txn,
                                              detail=False))

    words, bits, boundaries = lab.run(driver(), 120.0)
    assert words[42210] == 37 and words[42211] == 64
    assert len(words) == 65500          # the overrunning tail is rejected
    assert len(bits) == 64000
    assert boundaries == [("holding", 65500, 125), ("coil", 64000, 2000)]
    assert records[-1].note.startswith("memory scan: 65500 registers")


# --- scenarios -------------------------------------------------------------

def test_rec01_quick_scan_reports_hosts_and_ports():
    lab = Lab()
    records = lab.run(SCENARIOS["REC-01"].build(lab.env), 300.0)
    notes = [r.note for r in records]
    assert notes[0] == "hosts up: 10.0.0.4 10.0.0.5"
    assert "10.0.0.4 open: 502" in notes
    assert "10.0.0.5 open: 21 23 80 111 502 47808" in notes


def test_rec02_full_sweep_fingerprint_and_banners():
    lab = Lab()
    records = lab.run(SCENARIOS["REC-02"].build(lab.env), 4000.0)
    notes = [r.note for r in records]
    assert any(n.startswith("10.0.0.5 open: 21 23 80 111 502 47808")
               for n in notes)
    assert ("stack fingerprint: Motorola SURFboard SB5100E cable modem "
            "(VxWorks 5.4)") in notes
    assert any(n.startswith("port 23:") and "login" in n for n in notes)
    assert "udp 161: open" in notes
    assert "udp 17185: open" in notes


def test_rec03_function_and_unit_sweep_summary():
    lab = Lab()
    records = lab.run(SCENARIOS["REC-03"].build(lab.env), 300.0)
    notes = [r.note for r in records]
    assert "functions supported: 1 2 3 4 5 6 8 15 16 17 43" in notes
    assert "unit ids answering: 1" in notes


def test_rec04_dump_sees_tank_levels():
    lab = Lab()
    lab.set_holding(42210, 41)
    lab.set_holding(42211, 77)
    records = lab.run(SCENARIOS["REC-04"].build(lab.env), 120.0)
    assert records[-1].note == "tank levels seen in dump: " \
        "{42210: 41, 42211: 77}"


def test_ci01_wrong_unit_frames_go_unanswered():
    lab = Lab()
    records = lab.run(SCENARIOS["CI-01"].build(lab.env), 30.0)
    exchanges = [r for r in records if r.request]
    assert len(exchanges) == 4
    assert all(r.response is None for r in exchanges)
    assert exchanges[1].request == bytes.fromhex("000100000009") + b"\x11" * 9


def test_ci02_length_mismatch_draws_exceptions_without_executing():
    lab = Lab()
    records = lab.run(SCENARIOS["CI-02"].build(lab.env), 30.0)
    exchanges = [r for r in records if r.request]
    assert len(exchanges) == 5
    for record in exchanges:
        adu = codec.decode_adu(record.response).adu
        assert adu.is_exception
        assert adu.exception_code == codec.EXC_ILLEGAL_DATA_VALUE
    # the embedded write of -5 to the pump register never took effect
    assert lab.holding(32210) == 0


def test_ci03_out_of_range_writes_land():
    lab = Lab()
    records = lab.run(SCENARIOS["CI-03"].build(lab.env), 30.0)
    writes = [r for r in records if r.request]
    assert len(writes) == 2
    for record in writes:
        adu = codec.decode_adu(record.response).adu
        assert adu.function == codec.FN_WRITE_MULTIPLE_REGISTERS
    assert lab.holding(32210) == (-200) & 0xFFFF


def test_ci05_slow_write_of_minus_one():
    lab = Lab()
    records = lab.run(SCENARIOS["CI-05"].build(lab.env), 120.0)
    assert lab.holding(32210) == 0xFFFF
    assert records[-1].note == "pump speed := -1"


def test_ci06_threshold_flood_counts():
    lab = Lab()
    records = lab.run(SCENARIOS["CI-06"].build(lab.env), 60.0)
    sent = [r for r in records if r.note == "sent"]
    assert len(sent) == 480             # 240 pairs over twelve seconds
    assert records[0].note == "setup: pump on"
    # without ladder logic running, the last injected limit persists
    assert lab.holding(42212) == 120
    assert lab.holding(42214) == 120


def test_ci08_masks_after_alarm_hook_reports():
    lab = Lab()
    flips = []

    def alarm_active():
        # first checks say no, then the alarm "comes up"
        flips.append(None)
        return len(flips) > 3

    lab.env.alarm_active = alarm_active
    marks = []
    lab.env.mark_attack_start = lambda: marks.append(lab.sched.now)
    records = lab.run(SCENARIOS["CI-08"].build(lab.env), 60.0)
    assert len(marks) == 1
    notes = [r.note for r in records]
    assert any(n.startswith("setup: full alarm up") for n in notes)
    assert "mask writes sent: 2000" in notes
    assert lab.holding(42210) == 50 and lab.holding(42211) == 50


def test_ci09_negative_mask_values():
    lab = Lab()
    lab.env.alarm_active = lambda: True
    records = lab.run(SCENARIOS["CI-09"].build(lab.env), 60.0)
    assert lab.holding(42210) == (-50) & 0xFFFF
    assert "mask writes sent: 2000" in [r.note for r in records]


def test_dos01_parallel_sweeps_complete():
    lab = Lab()
    records = lab.run(SCENARIOS["DOS-01"].build(lab.env), 300.0)
    summaries = [r for r in records if "memory scan:" in r.note]
    assert len(summaries) == 16         # eight workers, two sweeps each
    assert lab.logic.message_count == 16 * (525 + 33)


def test_dos02_flood_is_discarded_by_checksum():
    lab = Lab()
    records = lab.run(SCENARIOS["DOS-02"].build(lab.env), 60.0)
    assert lab.logic.crc_error_count == 10_000
    assert records[-1].note == "sent 10000 frames with broken checksums"
    # the flood frame reads input register 32210 through the serial wrap
    frame = records[-1].request
    assert frame[:2] == b"\x01\x04"


def test_scenario_replay_is_byte_identical():
    lab_a, lab_b = Lab(seed=5), Lab(seed=5)
    run_a = lab_a.run(SCENARIOS["CI-03"].build(lab_a.env), 30.0)
    run_b = lab_b.run(SCENARIOS["CI-03"].build(lab_b.env), 30.0)
    assert run_a == run_b
    lab_c = Lab(seed=6)
    run_c = lab_c.run(SCENARIOS["CI-03"].build(lab_c.env), 30.0)
    assert [r.request for r in run_a] != [r.request for r in run_c]


def test_seed_spreads_transaction_ids():
    assert AttackEnv(net=None, seed=0).txn_start() != \
        AttackEnv(net=None, seed=1).txn_start()
    for seed in range(50):
        start = AttackEnv(net=None, seed=seed).txn_start()
        assert 1 <= start <= 0x8000


# --- live TCP client -------------------------------------------------------

def test_run_modpoll_against_real_server():
    logic = SlaveLogic(DataTable())
    logic.table.write_words(Space.HOLDING_REGISTER, 42210, [750],
                            privileged=True)
    server = ModbusTcpServer(logic, "127.0.0.1", 0)
    server.start()
    try:
        host, port = server.address
        read = attack.run_modpoll(f"modpoll -0 -r 42210 -p {port} {host}")
        adu = codec.decode_adu(read[0].response).adu
        assert codec.parse_register_response(adu.payload) == [750]

        write = attack.run_modpoll(f"modpoll -0 -r 32210 -p {port} {host} 7")
        assert write[0].response is not None
        assert logic.table.read_words(Space.HOLDING_REGISTER, 32210, 1) == [7]
    finally:
        server.stop()
