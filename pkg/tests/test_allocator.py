import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctomp.core.allocator import (
    AllocationStats,
    MemoryPool,
    OsEntropySource,
    PoolAllocator,
    RegionTable,
    SeededEntropySource,
    order_sizes,
    overlaps,
    shellcode_feasible_starts,
)
from ctomp.models.base import AllocationOrder
from ctomp.utils.exceptions import InvalidAllocationSizeError, RegionNotFoundError

from .conftest import POOL_BASE

TABLE_SIZES = [144, 304, 64, 64, 112, 1024]


def _blocked_pool_except(table: RegionTable, pool: MemoryPool, slot_offset: int, slot_size: int) -> int:
    """Fill the pool with two regions leaving exactly one free window"""
    table.add(pool.base, slot_offset)
    table.add(pool.base + slot_offset + slot_size, pool.size - slot_offset - slot_size)
    return pool.base + slot_offset


def test_table_sizes_fit_in_empty_pool(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(5), RegionTable(), retry_budget=64)

    regions = allocator.alloc_cycle_set(order_sizes(TABLE_SIZES, AllocationOrder.DESCENDING))

    assert regions is not None
    assert allocator.table.allocated_regions_num == 6
    for i, a in enumerate(regions):
        assert pool.base <= a.start_address and a.end_address <= pool.end
        assert (a.start_address - pool.base) % 8 == 0
        for b in regions[i + 1 :]:
            assert not overlaps(a.interval, b.interval)


def test_mem_alloc_on_full_table_returns_none(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(1), RegionTable(max_allocate_num=2))
    allocator.table.add(pool.base, 8)
    allocator.table.add(pool.base + 8, 8)

    before = allocator.table.export()
    assert allocator.mem_alloc(16) is None
    assert allocator.table.export() == before
    assert allocator.stats.failures == 1


@pytest.mark.parametrize("size", [0, -8, 5633])
def test_mem_alloc_rejects_invalid_sizes(allocator, size):
    with pytest.raises(InvalidAllocationSizeError):
        allocator.mem_alloc(size)


@pytest.mark.parametrize("seed", [0, 1, 7, 42, 2022])
def test_single_slot_placement_matches_replayed_draws(pool, seed):
    table = RegionTable()
    slot = _blocked_pool_except(table, pool, 0x800, 64)
    allocator = PoolAllocator(pool, SeededEntropySource(seed), table)

    replay = SeededEntropySource(seed)
    draws = [replay.next_address(pool, 64, pool.alignment) for _ in range(3)]
    expected = slot if slot in draws else None

    region = allocator.mem_alloc(64)

    if expected is None:
        assert region is None
        assert allocator.last_retries == 3
    else:
        assert region.start_address == slot
        assert allocator.last_retries == draws.index(slot)


def test_full_pool_fails_after_exactly_three_retries(pool):
    table = RegionTable()
    table.add(pool.base, pool.size)
    allocator = PoolAllocator(pool, SeededEntropySource(3), table)

    assert allocator.mem_alloc(8) is None
    assert allocator.stats.realloc_retries == 3
    assert allocator.stats.retry_histogram == {3: 1}
    assert table.allocated_regions_num == 1


def test_retry_counter_resets_between_allocations(pool):
    table = RegionTable()
    table.add(pool.base, pool.size)
    allocator = PoolAllocator(pool, SeededEntropySource(3), table)

    allocator.mem_alloc(8)
    allocator.mem_alloc(8)

    assert allocator.stats.retry_histogram == {3: 2}
    assert allocator.stats.mean_retries == 3


def test_single_start_draw_rate_is_one_in_577(pool):
    source = SeededEntropySource(99)
    slot = pool.base + 0x400
    draws = source.sample_addresses(pool, 1024, pool.alignment, 1_000_000)

    rate = np.mean(draws == slot)

    assert shellcode_feasible_starts(pool.size, 1024, pool.alignment) == 577
    assert rate == pytest.approx(1 / 577, rel=0.10)


@pytest.mark.slow
def test_single_start_success_over_retry_budget_matches_closed_form(pool):
    table = RegionTable()
    _blocked_pool_except(table, pool, 0x400, 1024)
    allocator = PoolAllocator(pool, SeededEntropySource(2021), table)

    trials = 300_000
    successes = 0
    for _ in range(trials):
        region = allocator.mem_alloc(1024)
        if region is not None:
            successes += 1
            allocator.mem_free(region.handle)

    expected = 1 - (576 / 577) ** 3
    assert successes / trials == pytest.approx(expected, rel=0.10)


def test_free_only_region_empties_table(allocator):
    region = allocator.mem_alloc(64)
    allocator.mem_free(region.handle)
    assert allocator.table.allocated_regions_num == 0


def test_double_free_raises_not_found(allocator):
    region = allocator.mem_alloc(64)
    allocator.mem_free(region.handle)
    with pytest.raises(RegionNotFoundError) as exc_info:
        allocator.mem_free(region.handle)
    assert exc_info.value.details == {"handle": region.handle}


def test_alloc_six_free_six_in_any_order(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(11), RegionTable(), retry_budget=64)
    regions = allocator.alloc_cycle_set(TABLE_SIZES)
    order = np.random.default_rng(0).permutation(len(regions))

    for index in order:
        allocator.mem_free(regions[index].handle)

    assert allocator.table.allocated_regions_num == 0
    assert allocator.mem_alloc(pool.size).start_address == pool.base


def test_alloc_cycle_set_rolls_back_on_failure(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(4), RegionTable(max_allocate_num=3))
    kept = allocator.mem_alloc(32)

    assert allocator.alloc_cycle_set([16, 16, 16]) is None
    assert allocator.table.regions == [kept]


def test_alloc_cycle_set_needs_sizes(allocator):
    with pytest.raises(ValueError):
        allocator.alloc_cycle_set([])


def test_overlaps_closed_interval_edges():
    assert overlaps((0, 10), (10, 20))
    assert not overlaps((0, 9), (10, 20))
    assert overlaps((5, 5), (0, 10))


@given(
    a=st.tuples(st.integers(0, 200), st.integers(0, 50)),
    b=st.tuples(st.integers(0, 200), st.integers(0, 50)),
)
def test_overlaps_matches_set_intersection(a, b):
    first = (a[0], a[0] + a[1])
    second = (b[0], b[0] + b[1])
    shared = set(range(first[0], first[1] + 1)) & set(range(second[0], second[1] + 1))
    assert overlaps(first, second) == bool(shared)
    assert overlaps(first, second) == overlaps(second, first)


@given(
    size=st.integers(1, 5632),
    alignment=st.sampled_from([1, 2, 4, 8, 16, 32]),
    seed=st.integers(0, 2**32 - 1),
)
def test_entropy_addresses_are_always_feasible(size, alignment, seed):
    pool = MemoryPool(POOL_BASE, 5632, alignment)
    source = SeededEntropySource(seed)
    for _ in range(5):
        start = source.next_address(pool, size, alignment)
        assert (start - pool.base) % alignment == 0
        assert pool.base <= start and start + size - 1 <= pool.end


@given(
    operations=st.lists(
        st.one_of(
            st.tuples(st.just("alloc"), st.integers(1, 2048)),
            st.tuples(st.just("free"), st.integers(0, 7)),
        ),
        max_size=60,
    ),
    seed=st.integers(0, 1000),
)
def test_random_operation_sequences_keep_table_consistent(operations, seed):
    pool = MemoryPool(POOL_BASE)
    allocator = PoolAllocator(pool, SeededEntropySource(seed), RegionTable())
    for op, arg in operations:
        if op == "alloc":
            allocator.mem_alloc(arg)
        elif allocator.table.regions:
            region = allocator.table.regions[arg % len(allocator.table.regions)]
            allocator.mem_free(region.handle)
        regions = allocator.table.regions
        assert len(regions) <= allocator.table.max_allocate_num
        for i, a in enumerate(regions):
            assert pool.base <= a.start_address and a.end_address <= pool.end
            assert all(not overlaps(a.interval, b.interval) for b in regions[i + 1 :])


@pytest.mark.slow
def test_hundred_thousand_seeded_operations_keep_invariants():
    pool = MemoryPool(POOL_BASE)
    allocator = PoolAllocator(pool, SeededEntropySource(77), RegionTable())
    ops = np.random.default_rng(78)
    violations = 0

    for _ in range(100_000):
        regions = allocator.table.regions
        if regions and ops.random() < 0.45:
            allocator.mem_free(regions[int(ops.integers(len(regions)))].handle)
            continue
        region = allocator.mem_alloc(int(ops.integers(1, 1025)))
        if region is None:
            continue
        if not (pool.base <= region.start_address and region.end_address <= pool.end):
            violations += 1
        others = [r for r in allocator.table.regions if r.handle != region.handle]
        violations += sum(overlaps(region.interval, r.interval) for r in others)
        assert allocator.table.allocated_regions_num <= allocator.table.max_allocate_num

    assert violations == 0


def test_table_export_is_bit_exact():
    table = RegionTable()
    table.add(0x20010000, 144)
    table.add(0x20010400, 1024)

    reference = (
        b"\x01\x00\x00\x00" b"\x00\x00\x01\x20" b"\x90\x00\x00\x00"
        b"\x02\x00\x00\x00" b"\x00\x04\x01\x20" b"\x00\x04\x00\x00"
    ) + bytes(48)

    image = table.export()
    assert len(image) == 72
    assert image == reference
    assert struct.unpack_from("<III", image, 12) == (2, 0x20010400, 1024)


def test_freed_slots_compact_in_export():
    table = RegionTable()
    first = table.add(0x20010000, 8)
    table.add(0x20010010, 8)
    table.remove(first.handle)
    assert struct.unpack_from("<III", table.export(), 0) == (2, 0x20010010, 8)
    assert table.export()[12:] == bytes(60)


def test_stack_base_spread_over_ten_thousand_cycles(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(20221), RegionTable())
    starts = []
    for _ in range(10_000):
        region = allocator.mem_alloc(1024)
        starts.append(region.start_address)
        allocator.mem_free(region.handle)

    collisions = sum(a == b for a, b in zip(starts, starts[1:]))

    assert len(set(starts)) >= 0.5 * 577
    assert collisions / (len(starts) - 1) <= 0.005


def test_order_sizes_is_stable():
    items = [("a", 64), ("b", 304), ("c", 64)]
    assert order_sizes(items, AllocationOrder.DESCENDING, key=lambda i: i[1]) == [
        ("b", 304),
        ("a", 64),
        ("c", 64),
    ]
    assert order_sizes(items, AllocationOrder.ASCENDING, key=lambda i: i[1])[0] == ("a", 64)
    assert order_sizes(items, AllocationOrder.AS_DECLARED) == items


def test_stats_merge():
    a, b = AllocationStats(), AllocationStats()
    a.record(2, success=True)
    b.record(3, success=False)
    a.merge(b)
    assert (a.successes, a.failures, a.realloc_retries) == (1, 1, 5)
    assert a.retry_histogram == {2: 1, 3: 1}


def test_os_entropy_addresses_are_aligned_and_inside_the_pool(pool):
    source = OsEntropySource()
    addresses = source.sample_addresses(pool, 1024, 8, 2000)
    assert ((addresses - pool.base) % 8 == 0).all()
    assert addresses.min() >= pool.base
    assert (addresses + 1024 - 1).max() <= pool.end
    assert len(set(addresses.tolist())) > 100


def test_os_entropy_drives_the_allocator(pool):
    allocator = PoolAllocator(pool, OsEntropySource(), RegionTable(), retry_budget=64)
    granted = allocator.alloc_cycle_set([1024, 304, 144])
    assert granted is not None
    assert not any(
        overlaps(a.interval, b.interval)
        for i, a in enumerate(granted)
        for b in granted[i + 1 :]
    )


def test_sampled_cycle_placements_never_overlap(pool):
    sizes = order_sizes(TABLE_SIZES, AllocationOrder.DESCENDING)
    allocator = PoolAllocator(pool, SeededEntropySource(21), RegionTable(), retry_budget=8)
    placements = allocator.sample_cycle_placements(sizes, 5000, attempts=3)

    assert placements.shape == (5000, len(sizes))
    assert allocator.table.allocated_regions_num == 0
    placed = placements[placements[:, 0] >= 0]
    assert len(placed) > 4900
    assert ((placed - pool.base) % pool.alignment == 0).all()
    for column, size in enumerate(sizes):
        assert placed[:, column].min() >= pool.base
        assert (placed[:, column] + size - 1).max() <= pool.end
    for row in placed[:200]:
        intervals = [(int(start), int(start) + size - 1) for start, size in zip(row, sizes)]
        assert not any(
            overlaps(a, b) for i, a in enumerate(intervals) for b in intervals[i + 1 :]
        )


def test_first_sampled_placement_is_uniform_over_feasible_starts(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(8), RegionTable(), retry_budget=8)
    first = allocator.sample_cycle_placements([1024, 304, 144], 57_700)[:, 0]
    counts = np.bincount((first - pool.base) // pool.alignment, minlength=577)
    assert len(counts) == 577
    assert counts.mean() == pytest.approx(100.0)
    assert counts.max() < 160


def test_sampled_placements_fail_like_alloc_cycle_set(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(4), RegionTable(), retry_budget=1)
    sizes = [2048, 2048, 1024]
    once = allocator.sample_cycle_placements(sizes, 4000, attempts=1)
    thrice = allocator.sample_cycle_placements(sizes, 4000, attempts=3)

    failed_once = (once == -1).all(axis=1)
    assert ((once == -1).any(axis=1) == failed_once).all()
    assert 0 < failed_once.mean() < 1
    assert (thrice == -1).all(axis=1).mean() < failed_once.mean()


def test_sampled_placements_respect_table_capacity(pool):
    allocator = PoolAllocator(pool, SeededEntropySource(4), RegionTable(2))
    assert (allocator.sample_cycle_placements([64, 64, 64], 10) == -1).all()
