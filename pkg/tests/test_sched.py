import pytest
from hypothesis import given, strategies as st

from dumbolab.sched import Clock, Deadlock, Dfs, MinTime, Scheduler, Seeded, Sleep, WaitFor


def _worker(log, tid, sleeps):
    for ns in sleeps:
        log.append((tid, ns))
        yield Sleep(ns)


def test_min_time_runs_earliest_clock_first():
    log = []
    clock = Clock(2, tick_ns=1)
    s = Scheduler(clock, MinTime(0))
    s.spawn(0, _worker(log, 0, [100, 100]))
    s.spawn(1, _worker(log, 1, [10, 10, 10]))
    s.run()
    # thread 1 finishes its cheap steps before thread 0's second step
    assert [t for t, _ in log] == [0, 1, 1, 1, 0] or [t for t, _ in log] == [1, 0, 1, 1, 0]
    assert clock.time(0) >= 200


def test_waitfor_blocks_until_predicate_holds():
    flag = []
    order = []

    def waiter():
        yield WaitFor(lambda: bool(flag), "flag")
        order.append("waiter")

    def setter():
        yield None
        flag.append(1)
        order.append("setter")

    s = Scheduler(Clock(2), Seeded(3))
    s.spawn(0, waiter())
    s.spawn(1, setter())
    s.run()
    assert order == ["setter", "waiter"]


def test_deadlock_is_reported():
    def stuck():
        yield WaitFor(lambda: False, "never")

    s = Scheduler(Clock(1), MinTime())
    s.spawn(0, stuck())
    with pytest.raises(Deadlock):
        s.run()


def test_dfs_trail_enumerates_all_interleavings():
    def two_steps():
        yield None
        yield None

    seen = set()
    prefix: list[int] = []
    while True:
        log = []
        ch = Dfs(prefix)
        s = Scheduler(Clock(2, strict=True), ch, inline_sleep=True)

        def traced(tid):
            for _ in range(2):
                log.append(tid)
                yield None

        s.spawn(0, traced(0))
        s.spawn(1, traced(1))
        s.run()
        seen.add(tuple(log))
        trail = ch.trail
        i = len(trail) - 1
        while i >= 0 and trail[i][0] + 1 >= trail[i][1]:
            i -= 1
        if i < 0:
            break
        prefix = [c for c, _ in trail[:i]] + [trail[i][0] + 1]
    # C(4,2) interleavings of two 2-step threads
    assert len(seen) == 6


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 50)), max_size=60))
def test_now_is_strictly_increasing_and_globally_unique(ops):
    c = Clock(4, tick_ns=10)
    last = [-1] * 4
    seen = []
    for tid, adv in ops:
        c.advance(tid, adv)
        ts = c.now(tid)
        assert ts > last[tid]
        last[tid] = ts
        seen.append(ts)
    assert len(set(seen)) == len(seen)
    assert seen == sorted(seen)


def test_skewed_clock_stays_monotonic_per_thread():
    c = Clock(2, skew_ns=[0, 1000])
    a = [c.now(0) for _ in range(5)]
    b = [c.now(1) for _ in range(5)]
    assert a == sorted(set(a)) and b == sorted(set(b))
    assert b[0] >= 1000
