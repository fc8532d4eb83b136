"""Master poller: config parsing, cadence, data flow, fault handling."""
import struct
from importlib import resources

import pytest

from tankbed import codec
from tankbed.master import ConfigError, MasterPoller, parse_client_config
from tankbed.netsim import Network
from tankbed.sim import Scheduler, spawn
from tankbed.slave import SlaveLogic, SlaveService
from tankbed.table import DataTable, Space


SHIPPED = resources.files("tankbed").joinpath("data/mbclient.config").read_text()


def build_rig(plan=None, phase=0.03):
    """Master at 10.0.0.3 polling a slave at 10.0.0.4 on one scheduler."""
    sched = Scheduler()
    net = Network(sched)
    slave_table = DataTable()
    slave = SlaveLogic(slave_table)
    net.add_service("10.0.0.4", 502, SlaveService(slave))
    net.add_host("10.0.0.3")
    master_table = DataTable()
    plan = plan or parse_client_config(SHIPPED)
    poller = MasterPoller(sched, net, master_table, plan, "10.0.0.3", phase=phase)
    return sched, net, slave, master_table, poller


def test_shipped_config_parses_to_expected_plan():
    plan = parse_client_config(SHIPPED)
    assert plan.name == "Get_Tank_Level"
    assert (plan.host, plan.port) == ("10.0.0.4", 502)
    assert (plan.repeat_time, plan.cmd_time, plan.retry_time) == (0.1, 0.1, 5.0)
    assert (plan.fault_coil, plan.fault_reset) == (1340, 65283)
    names = [c.name for c in plan.commands]
    assert names == ["&readholdingreg1", "&readholdingreg2",
                     "&readthresholds", "&readpumpspeed"]
    first = plan.commands[0]
    assert (first.function, first.unit_id, first.local_addr,
            first.remote_addr, first.qty) == (3, 1, 42210, 42210, 1)
    assert plan.commands[2].qty == 4


def test_config_errors():
    with pytest.raises(ConfigError):
        parse_client_config("[X]\nport = 502\n")          # no host
    with pytest.raises(ConfigError):
        parse_client_config("[X]\nhost = h\n")            # no port
    with pytest.raises(ConfigError):
        parse_client_config(
            "[X]\nhost = h\nport = 1\n&c = function=99, uid=1, memaddr=0, qty=1, remoteaddr=0\n")
    with pytest.raises(ConfigError):
        parse_client_config(
            "[X]\nhost = h\nport = 1\n&c = function=3, uid=1, qty=1, remoteaddr=0\n")
    with pytest.raises(ConfigError):
        parse_client_config(
            "[X]\nhost = h\nport = 1\n&c = function=3, uid=1, memaddr=0, qty=0, remoteaddr=0\n")


def test_section_without_commands_is_legal():
    plan = parse_client_config("[X]\nhost = h\nport = 1\n")
    assert plan.commands == ()


def test_poll_copies_remote_registers_to_local_table():
    sched, net, slave, table, poller = build_rig()
    slave.table.write_words(Space.HOLDING_REGISTER, 42210, [73, 27], privileged=True)
    slave.table.write_words(Space.HOLDING_REGISTER, 42212, [80, 20, 95, 5], privileged=True)
    slave.table.write_words(Space.HOLDING_REGISTER, 32210, [0xFFFB], privileged=True)
    poller.start()
    sched.run_until(1.0)
    assert table.read_words(Space.HOLDING_REGISTER, 42210, 2) == [73, 27]
    assert table.read_words(Space.HOLDING_REGISTER, 42212, 4) == [80, 20, 95, 5]
    assert table.read_words(Space.HOLDING_REGISTER, 32210, 1) == [0xFFFB]
    assert not poller.fault


def test_poll_cadence_steady_state_each_register_every_round():
    sched, net, slave, table, poller = build_rig()
    poller.start()
    sched.run_until(2.0)
    for name in ("&readholdingreg1", "&readholdingreg2",
                 "&readthresholds", "&readpumpspeed"):
        times = [r.t_sent for r in poller.records if r.name == name]
        steady = times[4:]
        assert len(steady) >= 10
        gaps = [b - a for a, b in zip(steady, steady[1:])]
        # one poll per round; jitter stays far below the round period
        assert all(abs(g - 0.1) < 0.005 for g in gaps)
        # the whole batch transmits just after its round boundary
        for t in steady:
            offset = (t - 0.03) % 0.1
            assert offset < 0.005 or offset > 0.095
    failed = [r for r in poller.records if not r.ok]
    assert failed == []


def test_remote_value_change_visible_within_two_rounds():
    sched, net, slave, table, poller = build_rig()
    poller.start()
    sched.run_until(1.0)
    slave.table.write_words(Space.HOLDING_REGISTER, 42210, [55], privileged=True)
    sched.run_until(1.25)
    assert table.read_words(Space.HOLDING_REGISTER, 42210, 1) == [55]


def test_listen_only_slave_raises_fault_and_recovery_latches():
    sched, net, slave, table, poller = build_rig()
    poller.start()
    sched.run_until(0.5)
    assert not poller.fault
    slave.listen_only = True
    sched.run_until(1.5)
    assert poller.fault
    assert table.read_bits(Space.COIL, 1340, 1) == [True]
    assert table.read_bits(Space.DISCRETE_INPUT, 1340, 1) == [True]
    # slave recovers; polls resume after the retry interval; fault stays latched
    slave.listen_only = False
    sched.run_until(8.0)
    recent = [r for r in poller.records if r.t_sent > 7.0]
    assert recent and all(r.ok for r in recent)
    assert poller.fault
    assert table.read_bits(Space.COIL, 1340, 1) == [True]
    # operator pulses the reset coil
    table.write_bits(Space.COIL, 65283, [True], privileged=True)
    sched.run_until(8.5)
    assert not poller.fault
    assert table.read_bits(Space.COIL, 1340, 1) == [False]
    assert table.read_bits(Space.COIL, 65283, 1) == [False]


def test_retry_interval_honored_during_outage():
    sched, net, slave, table, poller = build_rig()
    poller.start()
    sched.run_until(0.5)
    slave.listen_only = True
    sched.run_until(20.0)
    failures = [r.t_sent for r in poller.records if not r.ok]
    assert len(failures) >= 3
    gaps = [round(b - a, 6) for a, b in zip(failures[1:], failures[2:])]
    # after the first failed command, retries march at retry_time + patience
    for g in gaps:
        assert g == pytest.approx(5.1, abs=0.01)


def test_exception_response_sets_fault():
    # a poll range running off the end of the address space draws exception 02
    plan = parse_client_config(
        "[P]\nhost = 10.0.0.4\nport = 502\nrepeattime = 100\ncmdtime = 100\n"
        "retrytime = 5000\n"
        "&bad = function=3, uid=1, memaddr=0, qty=125, remoteaddr=65500\n")
    sched, net, slave, table, poller = build_rig(plan=plan)
    poller.start()
    sched.run_until(1.0)
    assert poller.fault
    assert any(not r.ok and r.latency is not None for r in poller.records)


def test_send_write_reaches_slave_between_polls():
    sched, net, slave, table, poller = build_rig()
    poller.start()
    sched.run_until(0.5)
    acks = []
    poller.send_write(32210, 0xFFF7, done=acks.append)
    sched.run_until(1.0)
    assert acks == [True]
    assert slave.table.read_words(Space.HOLDING_REGISTER, 32210, 1) == [0xFFF7]
    # the slave's new value rides back on the next pump-speed poll
    assert table.read_words(Space.HOLDING_REGISTER, 32210, 1) == [0xFFF7]


def test_fault_never_self_clears_under_random_failures():
    import random
    rng = random.Random(4242)
    sched, net, slave, table, poller = build_rig()
    poller.start()
    outages = 0
    t = 0.5
    saw_fault_without_reset = False
    while t < 60.0:
        sched.run_until(t)
        if rng.random() < 0.3:
            slave.listen_only = not slave.listen_only
            if slave.listen_only:
                outages += 1
        if poller.fault:
            saw_fault_without_reset = True
        if saw_fault_without_reset:
            # no reset pulse was ever written, so the latch must hold
            assert poller.fault
        t += rng.uniform(1.0, 4.0)
    assert outages >= 3
    assert saw_fault_without_reset
