import pytest
from hypothesis import given
from hypothesis import strategies as st

from kvtier.errors import InsufficientBuffer, NothingReclaimable
from kvtier.scheduler import Admitted, BufferGrant, Queued, Scheduler, SchedulerConfig, proportional_split, scaled
from kvtier.core import SparseConfig


def test_admission_threshold():
    mandatory = SparseConfig(0.0156, 8, 8).budget_partitions(32768)
    assert mandatory == 64
    s = Scheduler(SchedulerConfig(384, 5.0))
    assert s.requirement(64) == 384
    res = s.try_admit("a", 64, 32768)
    assert isinstance(res, Admitted) and res.grant.total == 384
    s2 = Scheduler(SchedulerConfig(383, 5.0))
    res = s2.try_admit("a", 64, 32768)
    assert isinstance(res, Queued) and res.short_pages == 1


def test_proportional_reclaim_by_length():
    s = Scheduler(SchedulerConfig(10_000, 1.0))
    s.grants["a"] = BufferGrant("a", 10, 200, 32 * 1024)
    s.grants["b"] = BufferGrant("b", 10, 200, 96 * 1024)
    assert s.reclaim(40) == {"a": 10, "b": 30}


def test_largest_remainder_ties_by_id():
    assert proportional_split(7, [1, 1, 2], ["x", "y", "z"]) == [2, 2, 3]
    assert proportional_split(1, [1, 1], [5, 3]) == [0, 1]
    assert proportional_split(40, [32, 96]) == [10, 30]


def test_split_respects_caps():
    assert proportional_split(10, [1, 1], caps=[2, 100]) == [2, 8]
    assert proportional_split(10, [1, 1], caps=[2, 3]) == [2, 3]


def test_nothing_reclaimable_at_min_ratio():
    s = Scheduler(SchedulerConfig(1000, 5.0))
    s.try_admit("a", 10, 100)
    with pytest.raises(NothingReclaimable):
        s.reclaim(1)


def test_buffer_target_never_shrinks_buffering():
    s = Scheduler(SchedulerConfig(1000, 2.0))
    s.try_admit("a", 100, 1000)
    s.try_admit("b", 100, 1000)
    g, _ = s.buffer_target("a", 50, 1000)
    assert g.mandatory_pages == 50 and g.buffering_pages == 200
    assert s.surplus(g) == 100 and s.reclaimable(("b",)) == 100


def test_buffer_target_reclaims_then_fails():
    s = Scheduler(SchedulerConfig(600, 2.0))
    s.try_admit("a", 100, 1000)
    s.buffer_target("a", 50, 1000)  # a holds 50 + 200, surplus 100
    s.try_admit("b", 100, 1000)
    assert s.free_pages == 50
    g, rec = s.buffer_target("b", 150, 1000)
    assert rec == {"a": 100} and g.mandatory_pages == 150 and g.buffering_pages == 300
    assert s.used_pages == 600
    with pytest.raises(InsufficientBuffer):
        s.buffer_target("b", 600, 1000)


def test_idle_request_grant_is_unchanged():
    s = Scheduler(SchedulerConfig(1000, 5.0))
    s.try_admit("a", 10, 100)
    before = BufferGrant(**vars(s.grants["a"]))
    s.try_admit("b", 10, 100)
    assert vars(s.grants["a"]) == vars(before)


def test_window_is_outside_the_ratio():
    s = Scheduler(SchedulerConfig(1000, 2.0))
    s.try_admit("a", 10, 100)
    g, _ = s.buffer_target("a", 10, 100, window_pages=7)
    assert g.buffering_pages == 20 and g.total == 37


def test_preempt_youngest_and_release():
    s = Scheduler(SchedulerConfig(1000, 1.0))
    for r in "abc":
        s.try_admit(r, 10, 100)
    assert s.youngest() == "c"
    s.preempt("c")
    s.release("a")
    assert list(s.grants) == ["b"]
    kinds = [e["event"] for e in s.drain_events()]
    assert kinds == ["admit", "admit", "admit", "preempt", "finish"] and s.events == []


def test_scaled_is_exact():
    assert scaled(64, 5.0) == 320
    assert scaled(10, 0.3) == 3
    assert scaled(7, 1.5) == 11


def _admit_fifo(budget, queue, ratio=1.0):
    s = Scheduler(SchedulerConfig(budget, ratio))
    out = []
    for rid, m in enumerate(queue):
        if isinstance(s.try_admit(rid, m, 100), Queued):
            break
        out.append(rid)
    return set(out)


@given(st.lists(st.integers(1, 50), max_size=12), st.integers(0, 400), st.integers(0, 200))
def test_admission_monotone_in_free_pages(queue, budget, more):
    assert _admit_fifo(budget, queue) <= _admit_fifo(budget + more, queue)


@given(st.integers(0, 500), st.lists(st.integers(0, 50), min_size=1, max_size=8),
       st.lists(st.one_of(st.none(), st.integers(0, 100)), min_size=8, max_size=8))
def test_split_conserves(total, weights, caps):
    caps = caps[:len(weights)]
    out = proportional_split(total, weights, caps=caps)
    room = sum(c if c is not None else total for w, c in zip(weights, caps) if w > 0)
    assert sum(out) == min(total, room)
    for o, w, c in zip(out, weights, caps):
        assert o >= 0 and (c is None or o <= c) and (w > 0 or o == 0)


@given(st.lists(st.tuples(st.sampled_from(["admit", "target", "release"]), st.integers(0, 5),
                          st.integers(1, 60)), max_size=40))
def test_global_conservation(ops):
    s = Scheduler(SchedulerConfig(500, 2.0))
    for op, rid, m in ops:
        if op == "admit" and rid not in s.grants:
            s.try_admit(rid, m, m * 10)
        elif op == "target" and rid in s.grants:
            try:
                s.buffer_target(rid, m, m * 10, window_pages=m % 3)
            except InsufficientBuffer:
                s.preempt(rid)
        elif op == "release":
            s.release(rid)
        assert s.used_pages <= 500
        for g in s.grants.values():
            assert g.buffering_pages >= 0
