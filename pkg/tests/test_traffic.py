"""Traffic generation: periodic arrivals, phases, packet construction."""

import pytest
from hypothesis import given, strategies as st

from priomac.errors import ConfigError
from priomac.kernel import RngStream
from priomac.traffic import (
    PriorityClass,
    TrafficParams,
    TrafficSpec,
    arrivals,
    draw_phase,
    make_packet,
    stress_traffic,
)


def spec(klass=PriorityClass.NORMAL, interval=10_000_000, phase=0):
    return TrafficSpec(klass=klass, interval_us=interval, phase_us=phase)


def enumeration_oracle(phase, interval, horizon):
    out = []
    t = phase
    while t < horizon:
        out.append(t)
        t += interval
    return out


def test_arrivals_arithmetic_progression():
    s = spec(interval=10_000_000, phase=0)
    assert arrivals(s, 35_000_000) == [0, 10_000_000, 20_000_000, 30_000_000]


def test_urgent_arrival_count_over_full_horizon():
    # 5000 s horizon at one message per 120 s: ceil(5000/120) = 42 arrivals.
    s = spec(klass=PriorityClass.URGENT, interval=120_000_000, phase=0)
    got = arrivals(s, 5_000_000_000)
    assert got == enumeration_oracle(0, 120_000_000, 5_000_000_000)
    assert len(got) == 42


def test_zero_horizon_yields_no_arrivals():
    assert arrivals(spec(), 0) == []


@given(
    interval=st.integers(min_value=1, max_value=10_000),
    phase_frac=st.integers(min_value=0, max_value=9999),
    horizon=st.integers(min_value=1, max_value=200_000),
)
def test_arrival_count_within_one_of_rate(interval, phase_frac, horizon):
    phase = phase_frac % interval
    s = spec(interval=interval, phase=phase)
    got = arrivals(s, horizon)
    assert got == enumeration_oracle(phase, interval, horizon)
    assert abs(len(got) - horizon / interval) <= 1


def test_make_packet_deadline_rules():
    params = TrafficParams()
    urgent = make_packet(
        spec(klass=PriorityClass.URGENT, interval=120_000_000), src=3, at=100_000, params=params
    )
    assert urgent.deadline_at == 200_000  # generation + 100 ms
    assert urgent.length_bytes == 34

    normal = make_packet(spec(), src=4, at=777, params=params)
    assert normal.deadline_at is None


def test_packet_length_override():
    params = TrafficParams(packet_bytes=68)
    pkt = make_packet(spec(), src=1, at=0, params=params)
    assert pkt.length_bytes == 68


def test_phase_is_deterministic_and_in_range():
    for node in range(20):
        a = draw_phase(RngStream(seed=5, stream=node), 10_000_000)
        b = draw_phase(RngStream(seed=5, stream=node), 10_000_000)
        assert a == b
        assert 0 <= a < 10_000_000


def test_spec_rejects_bad_phase():
    with pytest.raises(ConfigError):
        TrafficSpec(klass=PriorityClass.NORMAL, interval_us=10, phase_us=10)


def test_stress_preset_raises_urgent_pressure():
    base = TrafficParams()
    stressed = stress_traffic(base)
    assert stressed.urgent_interval_us == 2_000_000
    assert stressed.urgent_deadline_us < base.urgent_deadline_us
    assert stressed.normal_interval_us == base.normal_interval_us


def test_params_validation():
    with pytest.raises(ConfigError):
        TrafficParams(urgent_interval_us=0).validate()
    with pytest.raises(ConfigError):
        TrafficParams(queue_capacity=0).validate()
