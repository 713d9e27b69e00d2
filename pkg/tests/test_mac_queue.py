"""Transmit queue: class priority, capacity, removal."""

from hypothesis import given, strategies as st

from priomac.mac import TxQueue
from priomac.traffic import Packet, PriorityClass


def pkt(pid, klass):
    return Packet(id=pid, klass=klass, src=1, length_bytes=34, generated_at=0)


def test_fifo_within_class():
    q = TxQueue()
    a, b = pkt(1, PriorityClass.NORMAL), pkt(2, PriorityClass.NORMAL)
    assert q.push(a) is None and q.push(b) is None
    assert q.pop() is a and q.pop() is b


def test_urgent_served_before_normal():
    q = TxQueue()
    n = pkt(1, PriorityClass.NORMAL)
    u = pkt(2, PriorityClass.URGENT)
    q.push(n)
    q.push(u)
    assert q.peek() is u
    assert q.pop() is u
    assert q.pop() is n


def test_capacity_drops_the_arriving_packet():
    q = TxQueue(capacity_per_class=10)
    for i in range(10):
        assert q.push(pkt(i, PriorityClass.NORMAL)) is None
    eleventh = pkt(99, PriorityClass.NORMAL)
    assert q.push(eleventh) is eleventh
    # the other class still has room
    assert q.push(pkt(100, PriorityClass.URGENT)) is None


def test_remove():
    q = TxQueue()
    a = pkt(1, PriorityClass.URGENT)
    q.push(a)
    assert q.remove(a) is True
    assert q.remove(a) is False
    assert len(q) == 0


@given(st.lists(st.sampled_from([PriorityClass.URGENT, PriorityClass.NORMAL]), max_size=40))
def test_pop_never_returns_normal_while_urgent_pending(classes):
    q = TxQueue(capacity_per_class=100)
    for i, klass in enumerate(classes):
        q.push(pkt(i, klass))
    while True:
        urgent_pending = q.pending(PriorityClass.URGENT)
        got = q.pop()
        if got is None:
            break
        if urgent_pending:
            assert got.klass is PriorityClass.URGENT
