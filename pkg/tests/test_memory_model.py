import itertools

import pytest
from hypothesis import given, strategies as st

from ctomp.core.memory_model import (
    Allowed,
    FaultEvent,
    MPU_RBAR_ADDRESS,
    MemoryMap,
    MpuConfig,
    MpuRegion,
    Segment,
    evaluate_access,
)
from ctomp.models.base import Access, FaultKind, PrivilegeMode, SegmentKind, StackKind
from ctomp.utils.exceptions import (
    CapacityExceededError,
    InvalidStackError,
    PrivilegeViolationError,
)

from .conftest import DATA_BASE, POOL_BASE, PPB_BASE

MODES = [PrivilegeMode.PRIVILEGED, PrivilegeMode.UNPRIVILEGED, PrivilegeMode.HANDLER]
ACCESSES = list(Access)


def test_privileged_read_allowed_under_empty_config(make_machine):
    machine = make_machine()
    assert isinstance(machine.check_access(DATA_BASE, Access.READ), Allowed)


def test_unprivileged_write_to_private_peripheral_faults(make_machine):
    machine = make_machine()
    machine.configure_mpu(MpuRegion.build(PPB_BASE, 0x10000, "rw", "", name="ppb"))
    machine.mode = PrivilegeMode.UNPRIVILEGED

    result = machine.check_access(PPB_BASE + 0xE400, Access.WRITE)

    assert isinstance(result, FaultEvent)
    assert result.kind == FaultKind.MPU_FAULT
    assert result.mode == PrivilegeMode.UNPRIVILEGED
    assert result.region == "ppb"


def test_first_covering_region_decides():
    config = MpuConfig()
    config.append(MpuRegion.build(0x1000, 0x100, "rw", "r"))
    config.append(MpuRegion.build(0x1000, 0x1000, "rw", "rw"))

    assert not evaluate_access(config, PrivilegeMode.UNPRIVILEGED, 0x1010, Access.WRITE)
    assert evaluate_access(config, PrivilegeMode.UNPRIVILEGED, 0x1200, Access.WRITE)


def test_cycle_regions_shadow_background():
    config = MpuConfig()
    config.append_background(MpuRegion.build(0x0, 0x10000, "rwx", "rwx"))
    config.append(MpuRegion.build(0x2000, 0x100, "rw", ""))

    assert not evaluate_access(config, PrivilegeMode.UNPRIVILEGED, 0x2000, Access.READ)
    assert evaluate_access(config, PrivilegeMode.UNPRIVILEGED, 0x3000, Access.READ)


def _oracle(regions, mode, addr, access):
    for region in regions:
        if region.base <= addr < region.base + region.size:
            return access in region.allowed(mode)
    return mode != PrivilegeMode.UNPRIVILEGED


def test_all_mode_access_pairs_against_brute_force_oracle():
    regions = [
        MpuRegion.build(0x0000, 0x400, "rx", "rx"),
        MpuRegion.build(0x0200, 0x400, "rw", ""),
        MpuRegion.build(0x1000, 0x100, "rwx", "r"),
    ]
    config = MpuConfig()
    for region in regions:
        config.append(region)

    for mode, access, addr in itertools.product(
        MODES, ACCESSES, [0x0, 0x1FF, 0x200, 0x5FF, 0x600, 0x1000, 0x10FF, 0x1100]
    ):
        expected = _oracle(regions, mode, addr, access)
        assert bool(evaluate_access(config, mode, addr, access)) is expected


perm_strings = st.sets(st.sampled_from("rwx")).map("".join)


@given(
    base=st.integers(0, 0xFFFF).map(lambda v: v * 8),
    size=st.integers(1, 0x1000),
    privileged=perm_strings,
    narrow=perm_strings,
    extra=perm_strings,
    offset=st.integers(0, 0xFFF),
    access=st.sampled_from(ACCESSES),
)
def test_adding_permissions_never_revokes_access(base, size, privileged, narrow, extra, offset, access):
    addr = base + offset % size
    narrow_config, wide_config = MpuConfig(), MpuConfig()
    narrow_config.append(MpuRegion.build(base, size, privileged, narrow))
    wide_config.append(MpuRegion.build(base, size, privileged, narrow + extra))

    if evaluate_access(narrow_config, PrivilegeMode.UNPRIVILEGED, addr, access):
        assert evaluate_access(wide_config, PrivilegeMode.UNPRIVILEGED, addr, access)


def test_configure_mpu_charges_t_mpu(make_machine):
    machine = make_machine()
    machine.configure_mpu(MpuRegion.build(DATA_BASE, 64))
    assert machine.clock_us == 9.0
    assert machine.charged("mpu") == 9.0


def test_configure_mpu_rejects_seventeenth_region(make_machine):
    machine = make_machine()
    for i in range(16):
        machine.configure_mpu(MpuRegion.build(DATA_BASE + i * 64, 64))
    with pytest.raises(CapacityExceededError) as exc_info:
        machine.configure_mpu(MpuRegion.build(DATA_BASE + 0x1000, 64))
    assert exc_info.value.details == {"requested": 17, "capacity": 16}


def test_configure_mpu_in_unprivileged_mode_is_a_privilege_violation(make_machine, pool, allocator):
    machine = make_machine()
    machine.allocator = allocator
    region = allocator.mem_alloc(1024)
    machine.drop_to_unprivileged(region.start_address + 1016)

    with pytest.raises(PrivilegeViolationError):
        machine.configure_mpu(MpuRegion.build(DATA_BASE, 64))
    fault = machine.faults[-1]
    assert fault.kind == FaultKind.PRIVILEGE_VIOLATION
    assert fault.mode == PrivilegeMode.UNPRIVILEGED
    assert fault.address == MPU_RBAR_ADDRESS
    with pytest.raises(PrivilegeViolationError):
        machine.clear_regions()
    assert [f.kind for f in machine.faults] == [FaultKind.PRIVILEGE_VIOLATION] * 2


def test_svc_returns_to_privileged_on_main_stack(make_machine, allocator):
    machine = make_machine()
    machine.allocator = allocator
    region = allocator.mem_alloc(1024)
    machine.drop_to_unprivileged(region.start_address + 1016)
    assert machine.stacks.active == StackKind.PROCESS

    machine.svc_call()

    assert machine.mode == PrivilegeMode.PRIVILEGED
    assert machine.stacks.active == StackKind.MAIN
    reasons = [t.reason for t in machine.transitions]
    assert reasons == ["control_write", "svc", "exception_return"]
    assert machine.transitions[1].target == PrivilegeMode.HANDLER


def test_drop_to_unprivileged_charges_stack_and_switch(make_machine, allocator):
    machine = make_machine()
    machine.allocator = allocator
    region = allocator.mem_alloc(1024)
    machine.drop_to_unprivileged(region.start_address + 1016)
    assert machine.charged("stack") == 10.0
    assert machine.charged("switch") == 1.0


def test_drop_to_unprivileged_rejects_stack_outside_allocations(make_machine, allocator):
    machine = make_machine()
    machine.allocator = allocator
    with pytest.raises(InvalidStackError):
        machine.drop_to_unprivileged(POOL_BASE + 100)
    assert machine.mode == PrivilegeMode.PRIVILEGED


def test_drop_from_unprivileged_is_refused(make_machine, allocator):
    machine = make_machine()
    machine.allocator = allocator
    region = allocator.mem_alloc(256)
    machine.drop_to_unprivileged(region.start_address + 248)
    with pytest.raises(PrivilegeViolationError):
        machine.drop_to_unprivileged(region.start_address + 248)


def test_unprivileged_task_runs_on_process_stack(make_machine, allocator):
    machine = make_machine()
    machine.allocator = allocator
    region = allocator.mem_alloc(512)
    machine.drop_to_unprivileged(region.start_address + 504)
    machine.execute_task("t", 5.0)
    step = machine.task_steps[-1]
    assert step.mode == PrivilegeMode.UNPRIVILEGED
    assert step.stack == StackKind.PROCESS


def test_snapshot_restore_round_trips_state(make_machine, allocator):
    machine = make_machine()
    machine.allocator = allocator
    before = machine.digest()
    snapshot = machine.snapshot()

    allocator.mem_alloc(128)
    machine.write(DATA_BASE + 0x100, b"\xff" * 4)
    machine.configure_mpu(MpuRegion.build(DATA_BASE, 64))

    machine.restore(snapshot)
    assert machine.digest() == before
    assert allocator.table.allocated_regions_num == 0
    assert machine.mpu.regions == []


def test_memory_map_rejects_overlapping_segments():
    with pytest.raises(ValueError, match="overlap"):
        MemoryMap(
            [
                Segment(SegmentKind.DATA, 0x1000, 0x100, "a"),
                Segment(SegmentKind.DATA, 0x1080, 0x100, "b"),
            ]
        )


def test_memory_map_rejects_unaligned_segment():
    with pytest.raises(ValueError, match="aligned"):
        MemoryMap([Segment(SegmentKind.DATA, 0x1004, 0x100, "a")])


def test_check_access_outside_address_space_raises(make_machine):
    machine = make_machine()
    with pytest.raises(ValueError):
        machine.check_access(1 << 32, Access.READ)
