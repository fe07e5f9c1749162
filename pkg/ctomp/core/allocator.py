# ctomp/core/allocator.py
"""Randomized placement in a fixed memory pool for the secure process stack
and the per-cycle buffers.

Each request draws a start address from an entropy source and is rejected
when it overlaps a region already in the table; a rejected draw counts as one
re-allocation retry. After ``retry_budget`` rejected draws the request fails
and the table is left untouched.
"""

import secrets
import struct
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from ..models.base import AllocationOrder
from ..utils.exceptions import InvalidAllocationSizeError, RegionNotFoundError
from ..utils.logging_manager import LoggingManager
from .memory_model import Address

logger = LoggingManager.get_logger(__name__)

DEFAULT_POOL_SIZE = 5632
DEFAULT_MAX_ALLOCATE_NUM = 6
DEFAULT_ALIGNMENT = 8
DEFAULT_RETRY_BUDGET = 3

T = TypeVar("T")

# handle, start_address, size; all little-endian uint32
REGION_RECORD = struct.Struct("<III")


def overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Closed-interval overlap of (start, end) pairs; a single shared byte counts"""
    return max(a[0], b[0]) <= min(a[1], b[1])


@dataclass(frozen=True, slots=True)
class MemoryPool:
    base: Address
    size: int = DEFAULT_POOL_SIZE
    alignment: int = DEFAULT_ALIGNMENT

    @property
    def end(self) -> Address:
        return self.base + self.size - 1

    def feasible_starts(self, size: int) -> int:
        """Number of aligned start addresses at which `size` bytes fit in the pool"""
        if size > self.size:
            return 0
        return (self.size - size) // self.alignment + 1


@dataclass(frozen=True, slots=True)
class AllocatedRegion:
    handle: int
    start_address: Address
    size: int

    @property
    def end_address(self) -> Address:
        return self.start_address + self.size - 1

    @property
    def interval(self) -> tuple[int, int]:
        return self.start_address, self.end_address


class RegionTable:
    """Fixed-capacity record of live pool allocations"""

    def __init__(self, max_allocate_num: int = DEFAULT_MAX_ALLOCATE_NUM):
        self.max_allocate_num = max_allocate_num
        self.regions: list[AllocatedRegion] = []
        self._next_handle = 1

    @property
    def allocated_regions_num(self) -> int:
        return len(self.regions)

    @property
    def is_full(self) -> bool:
        return self.allocated_regions_num >= self.max_allocate_num

    def conflicts(self, start: Address, size: int) -> bool:
        candidate = (start, start + size - 1)
        return any(overlaps(r.interval, candidate) for r in self.regions)

    def add(self, start: Address, size: int) -> AllocatedRegion:
        region = AllocatedRegion(self._next_handle, start, size)
        self._next_handle = self._next_handle % 0xFFFFFFFF + 1
        self.regions.append(region)
        return region

    def remove(self, handle: int) -> AllocatedRegion:
        for i, region in enumerate(self.regions):
            if region.handle == handle:
                return self.regions.pop(i)
        raise RegionNotFoundError(handle)

    def find(self, handle: int) -> Optional[AllocatedRegion]:
        return next((r for r in self.regions if r.handle == handle), None)

    def snapshot(self) -> tuple[tuple[AllocatedRegion, ...], int]:
        return tuple(self.regions), self._next_handle

    def restore(self, state: tuple[tuple[AllocatedRegion, ...], int]) -> None:
        regions, next_handle = state
        self.regions[:] = regions
        self._next_handle = next_handle

    def export(self) -> bytes:
        """Bit-exact table image: one 12-byte record per slot, unused slots zeroed"""
        image = bytearray(REGION_RECORD.size * self.max_allocate_num)
        for slot, region in enumerate(self.regions):
            REGION_RECORD.pack_into(
                image, slot * REGION_RECORD.size, region.handle, region.start_address, region.size
            )
        return bytes(image)


class EntropySource(ABC):
    """Supplies candidate start addresses, always aligned and inside the pool"""

    @abstractmethod
    def next_raw(self) -> int:
        """Next raw 32-bit draw"""

    def next_address(self, pool: MemoryPool, size: int, alignment: int) -> Address:
        # Modular mapping of the raw draw onto the feasible aligned starts.
        candidates = (pool.size - size) // alignment + 1
        return pool.base + (self.next_raw() % candidates) * alignment

    def sample_addresses(
        self, pool: MemoryPool, size: int, alignment: int, count: int
    ) -> np.ndarray:
        return np.fromiter(
            (self.next_address(pool, size, alignment) for _ in range(count)),
            dtype=np.int64,
            count=count,
        )


class SeededEntropySource(EntropySource):
    """Deterministic numpy-backed generator for tests and reproducible experiments"""

    def __init__(self, seed: Optional[int] = None, generator: Optional[np.random.Generator] = None):
        self.seed = seed
        self.generator = generator if generator is not None else np.random.default_rng(seed)

    def next_raw(self) -> int:
        return int(self.generator.integers(0, 1 << 32))

    def sample_addresses(
        self, pool: MemoryPool, size: int, alignment: int, count: int
    ) -> np.ndarray:
        candidates = (pool.size - size) // alignment + 1
        raw = self.generator.integers(0, 1 << 32, size=count, dtype=np.int64)
        return pool.base + (raw % candidates) * alignment


class OsEntropySource(EntropySource):
    """Operating-system randomness, standing in for the MCU's hardware TRNG"""

    def next_raw(self) -> int:
        return secrets.randbits(32)


@dataclass(slots=True)
class AllocationStats:
    attempts: int = 0
    successes: int = 0
    failures: int = 0
    realloc_retries: int = 0
    retry_histogram: Counter = field(default_factory=Counter)

    def record(self, retries: int, success: bool) -> None:
        self.realloc_retries += retries
        self.retry_histogram[retries] += 1
        if success:
            self.successes += 1
        else:
            self.failures += 1

    @property
    def mean_retries(self) -> float:
        logical = self.successes + self.failures
        return self.realloc_retries / logical if logical else 0.0

    def merge(self, other: "AllocationStats") -> None:
        self.attempts += other.attempts
        self.successes += other.successes
        self.failures += other.failures
        self.realloc_retries += other.realloc_retries
        self.retry_histogram.update(other.retry_histogram)


def order_sizes(
    items: Sequence[T], order: AllocationOrder, key: Callable[[T], int] = int
) -> list[T]:
    """Arrange allocation requests; sorting is stable so equal sizes keep their order"""
    if order == AllocationOrder.ASCENDING:
        return sorted(items, key=key)
    if order == AllocationOrder.DESCENDING:
        return sorted(items, key=key, reverse=True)
    return list(items)


class PoolAllocator:
    """mem_alloc / mem_realloc / mem_free over one RegionTable and MemoryPool"""

    def __init__(
        self,
        pool: MemoryPool,
        rng: EntropySource,
        table: Optional[RegionTable] = None,
        retry_budget: int = DEFAULT_RETRY_BUDGET,
    ):
        if retry_budget < 1:
            raise ValueError("retry_budget must be at least 1")
        self.pool = pool
        self.rng = rng
        self.table = table or RegionTable()
        self.retry_budget = retry_budget
        self.stats = AllocationStats()
        self._retries = 0

    def mem_alloc(self, size: int) -> Optional[AllocatedRegion]:
        if size <= 0 or size > self.pool.size:
            raise InvalidAllocationSizeError(size, self.pool.size)
        self.stats.attempts += 1
        if self.table.is_full:
            self.stats.record(0, success=False)
            logger.debug("Region table full", capacity=self.table.max_allocate_num)
            return None
        self._retries = 0
        region = self._place(size)
        self.stats.record(self._retries, success=region is not None)
        return region

    def _place(self, size: int) -> Optional[AllocatedRegion]:
        start = self.rng.next_address(self.pool, size, self.pool.alignment)
        if self.table.conflicts(start, size):
            return self.mem_realloc(size)
        return self.table.add(start, size)

    def mem_realloc(self, size: int) -> Optional[AllocatedRegion]:
        """One more placement draw for the allocation in progress"""
        self._retries += 1
        if self._retries >= self.retry_budget:
            return None
        return self._place(size)

    def mem_free(self, handle: int) -> None:
        self.table.remove(handle)

    def alloc_cycle_set(self, sizes: Sequence[int]) -> Optional[list[AllocatedRegion]]:
        """Allocate every size in the given order, or nothing at all"""
        if not sizes:
            raise ValueError("alloc_cycle_set needs at least one size")
        granted: list[AllocatedRegion] = []
        for size in sizes:
            region = self.mem_alloc(size)
            if region is None:
                for done in granted:
                    self.table.remove(done.handle)
                logger.debug(
                    "Cycle set rolled back", failed_size=size, granted=len(granted)
                )
                return None
            granted.append(region)
        return granted

    def sample_cycle_placements(
        self, sizes: Sequence[int], count: int, attempts: int = 1
    ) -> np.ndarray:
        """Start addresses `count` independent cycles would be granted for `sizes`.

        Replays alloc_cycle_set, with up to `attempts` whole-set tries, against an
        empty pool. The live table is not touched. Row i holds one cycle's starts
        in request order; a row whose set could not be placed is all -1.
        """
        placements = np.full((count, len(sizes)), -1, dtype=np.int64)
        if not sizes or len(sizes) > self.table.max_allocate_num:
            return placements
        if max(sizes) > self.pool.size:
            raise InvalidAllocationSizeError(max(sizes), self.pool.size)

        pending = np.arange(count)
        for _ in range(max(1, attempts)):
            if not pending.size:
                break
            trial = np.full((pending.size, len(sizes)), -1, dtype=np.int64)
            alive = np.ones(pending.size, dtype=bool)
            for column, size in enumerate(sizes):
                placed = np.zeros(pending.size, dtype=bool)
                for _ in range(self.retry_budget):
                    todo = np.flatnonzero(alive & ~placed)
                    if not todo.size:
                        break
                    starts = self.rng.sample_addresses(self.pool, size, self.pool.alignment, todo.size)
                    clash = np.zeros(todo.size, dtype=bool)
                    for earlier in range(column):
                        other = trial[todo, earlier]
                        clash |= np.maximum(starts, other) <= np.minimum(
                            starts + size - 1, other + sizes[earlier] - 1
                        )
                    trial[todo[~clash], column] = starts[~clash]
                    placed[todo[~clash]] = True
                alive &= placed
            placements[pending[alive]] = trial[alive]
            pending = pending[~alive]
        return placements

    def release_all(self) -> None:
        self.table.regions.clear()

    @property
    def last_retries(self) -> int:
        return self._retries


def shellcode_feasible_starts(pool_size: int, stack_size: int, alignment: int) -> int:
    return (pool_size - stack_size) // alignment + 1
