import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kvtier.core import HeadKey, ModelShape, SparseConfig, TierParams, validate_config
from kvtier.errors import (
    DeviceCapacityExceeded,
    DoubleFree,
    HostCapacityExceeded,
    NotOffloaded,
    OverlappingSpec,
    PoolExhausted,
    UnknownPartition,
)
from kvtier.metadata import (
    DPT_FIELDS,
    MetadataStore,
    PartitionSpec,
    Residency,
    SegmentPool,
    TwoLevelTable,
    segment_alloc,
    segment_free,
)

from conftest import make_config

K = HeadKey(0, 0, 0)


def store_for(n_max=32768, g=8, page=8, **kw):
    budget = kw.pop("budget", 0.0156 if g != "variable" else 64)
    return MetadataStore(make_config(n_max=n_max, g=g, page=page, budget=budget), **kw)


def test_uniform_registration_is_host_only():
    s = store_for()
    ids = s.register_partitions(K, PartitionSpec.uniform(32768, 8))
    assert ids == list(range(4096))
    rows = s.lookup_meta(K, ids)
    assert all(r == (8, Residency.HostOnly, 1) for r in rows)


def test_empty_spec_maps_nothing():
    s = store_for()
    assert s.register_partitions(K, PartitionSpec.uniform(0, 8)) == []
    assert all(r.physical_bytes == 0 for r in s.footprint().rows if r.table != "directory")


def test_pinned_outliers_and_window():
    s = store_for()
    pinned = list(range(48)) + list(range(4096 - 64, 4096))
    s.register_partitions(K, PartitionSpec.uniform(32768, 8, pinned))
    res = [r[1] for r in s.lookup_meta(K, range(4096))]
    assert res.count(Residency.DeviceResident) == 112
    assert res.count(Residency.HostOnly) == 3984
    assert s.head(K).capacity == 112
    with pytest.raises(NotOffloaded):
        s.cpu_pages_of(K, 0)


def test_lookup_page_counts_and_unknown():
    s = store_for(n_max=4096, g="variable")
    s.register_partitions(K, PartitionSpec.variable([(0, 37), (37, 45)]))
    assert s.lookup_meta(K, [0, 1]) == [(37, Residency.HostOnly, 5), (8, Residency.HostOnly, 1)]
    with pytest.raises(UnknownPartition):
        s.lookup_meta(K, [2])
    with pytest.raises(UnknownPartition):
        s.lookup_meta(HeadKey(9, 0, 0), [0])


def test_cpu_pages():
    s = store_for(n_max=4096, g="variable")
    s.register_partitions(K, PartitionSpec.variable([(0, 8), (8, 45)]))
    assert s.cpu_pages_of(K, 0) == [0]
    pages = s.cpu_pages_of(K, 1)
    assert len(pages) == 5 and len(set(pages)) == 5
    assert s.cpu_pages_many(K, [1, 0]) == [pages, [0]]


def test_spec_must_continue_the_context():
    s = store_for(n_max=4096)
    s.register_partitions(K, PartitionSpec.uniform(64, 8))
    with pytest.raises(OverlappingSpec):
        s.register_partitions(K, PartitionSpec.uniform(64, 8, start=32))
    s.register_partitions(K, PartitionSpec.uniform(64, 8, start=64))
    assert s.head(K).context_tokens == 128
    with pytest.raises(OverlappingSpec):
        PartitionSpec.variable([(0, 8), (4, 16)])


def test_host_capacity_exceeded():
    cfg = make_config(n_max=4096, host=4096 * 10)
    s = MetadataStore(cfg)
    with pytest.raises(HostCapacityExceeded):
        s.register_partitions(K, PartitionSpec.uniform(4096, 8))


def test_pool_lowest_first_reuse_and_exhaustion():
    pool = SegmentPool(8, 4, DPT_FIELDS)
    t = TwoLevelTable(pool, 32)
    assert [segment_alloc(t) for _ in range(3)] == [0, 1, 2]
    segment_free(t, 1)
    assert segment_alloc(t) == 1
    for _ in range(5):
        segment_alloc(t)
    with pytest.raises(PoolExhausted):
        segment_alloc(t)
    segment_free(t, 3)
    with pytest.raises(DoubleFree):
        segment_free(t, 3)


def test_empty_store_footprint_is_zero():
    s = store_for()
    assert all(r.physical_bytes == 0 for r in s.footprint().rows if r.table != "directory")


def test_flat_device_page_table_size():
    cfg = validate_config(ModelShape(80, 8, 128, 2, 131072), SparseConfig(0.0156, 8, 8),
                          TierParams(80 << 30, 1 << 40, 2e12, 32e9))
    s = MetadataStore(cfg, max_batch=32)
    row = next(r for r in s.footprint().rows if r.table == "device_page_table")
    # 32 * 16384 * 80 * 8 entries of 8 bytes
    assert row.logical_bytes == 32 * 16384 * 80 * 8 * 8 == 2_684_354_560


def test_partial_occupancy_bound():
    s = store_for(n_max=131072, max_batch=1)
    s.register_partitions(K, PartitionSpec.uniform(131072, 8))
    logical = 16384
    cap = int(0.094 * logical)
    s.resize_device(K, cap)
    dpt = next(r for r in s.footprint().rows if r.table == "device_page_table")
    assert dpt.physical_bytes <= 0.094 * dpt.logical_bytes + s.eps * s.dpt_entry_bytes


def test_resize_shrink_evicts_tail_and_moves_pinned():
    from kvtier.replacement import BucketedLRU

    s = store_for(n_max=4096)
    s.register_partitions(K, PartitionSpec.uniform(256, 8, pinned=[31]))
    s.resize_device(K, 8)
    BucketedLRU(s).replace(K, [0, 1, 2, 3, 4, 5, 6], 0)
    assert s.head(K).capacity == 8
    evicted = s.resize_device(K, 4)
    assert 31 not in evicted and s.is_resident(K, 31)
    assert s.device_pages_of(K, 31)[0] < 4
    assert len(s.resident_ids(K)) == 4
    with pytest.raises(DeviceCapacityExceeded):
        s.resize_device(K, 0)
    before = [p for p in s.resident_ids(K) if p != 31]
    assert s.flush_device(K) == before
    assert s.resident_ids(K) == [31]


def test_release_returns_pages():
    s = store_for(n_max=4096)
    s.register_partitions(K, PartitionSpec.uniform(4096, 8, pinned=[0]))
    s.resize_device(K, 64)
    s.release(K)
    assert s.device_pages_used == 0 and s.host_pages_used == 0
    assert s.meta_pool.mapped == s.dpt_pool.mapped == s.offset_pool.mapped == s.host_pool.mapped == 0


# -- properties -----------------------------------------------------------------

@given(st.lists(st.tuples(st.integers(0, 199), st.integers(-1000, 1000)), max_size=80),
       st.integers(1, 16))
def test_two_level_table_matches_flat_array(ops, eps):
    pool = SegmentPool(200, eps, {"v": (np.int32, 0)})
    t = TwoLevelTable(pool, 200)
    flat = np.zeros(200, dtype=np.int32)
    hi = 0
    for i, v in ops:
        t.ensure(max(hi, i + 1))
        hi = max(hi, i + 1)
        t.set("v", i, v)
        flat[i] = v
    assert np.array_equal(t.gather("v", hi), flat[:hi])
    assert t.mapped_segments == -(-hi // eps)


@given(st.lists(st.one_of(st.just(None), st.integers(0, 15)), max_size=60))
def test_allocator_soundness(ops):
    pool = SegmentPool(16, 2, {"v": (np.int32, 0)})
    live = set()
    for op in ops:
        if op is None:
            if len(live) == 16:
                with pytest.raises(PoolExhausted):
                    pool.alloc()
                continue
            lowest = min(set(range(16)) - live)
            assert pool.alloc() == lowest
            live.add(lowest)
        elif op in live:
            pool.free(op)
            live.remove(op)
        else:
            with pytest.raises(DoubleFree):
                pool.free(op)
        assert pool.mapped == pool.used_bits() == len(live)


@given(st.lists(st.integers(1, 40), min_size=1, max_size=30), st.integers(1, 8))
def test_tiling_and_distinct_host_pages(counts, page):
    s = MetadataStore(make_config(n_max=4096, g="variable", page=page, budget=64))
    pos, chunks = 0, []
    i = 0
    while i < len(counts):
        chunk = counts[i:i + 7]
        chunks.append(PartitionSpec(tuple(chunk), start=pos))
        pos += sum(chunk)
        i += 7
    for c in chunks:
        s.register_partitions(K, c)
    st_ = s.head(K)
    assert st_.context_tokens == sum(counts)
    rows = s.lookup_meta(K, range(len(counts)))
    assert [r[0] for r in rows] == counts
    pages = s.cpu_pages_many(K, list(range(len(counts))))
    flat = [p for ps in pages for p in ps]
    assert len(flat) == len(set(flat)) == sum(-(-c // page) for c in counts)
