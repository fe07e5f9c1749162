from enum import Enum


class SegmentKind(str, Enum):
    CODE = "code"
    DATA = "data"
    PERIPHERAL = "peripheral"
    PRIVATE_PERIPHERAL = "private_peripheral"
    POOL = "pool"


class PrivilegeMode(str, Enum):
    PRIVILEGED = "privileged"
    UNPRIVILEGED = "unprivileged"
    HANDLER = "handler"


class Access(str, Enum):
    READ = "r"
    WRITE = "w"
    EXECUTE = "x"

    @classmethod
    def parse_set(cls, spec: str) -> frozenset["Access"]:
        """Parse a permission string such as "rwx" or "r-x" into a set of accesses"""
        accesses = set()
        for char in spec.strip().lower():
            if char == "-":
                continue
            try:
                accesses.add(cls(char))
            except ValueError:
                raise ValueError(f"Unknown access flag '{char}' in '{spec}'") from None
        return frozenset(accesses)


class StackKind(str, Enum):
    MAIN = "main"
    PROCESS = "process"


class FaultKind(str, Enum):
    MPU_FAULT = "mpu_fault"
    PRIVILEGE_VIOLATION = "privilege_violation"


class Verdict(str, Enum):
    SUCCEEDED = "succeeded"
    BLOCKED_BY_PRIVILEGE = "blocked_by_privilege"
    BLOCKED_BY_MPU = "blocked_by_mpu"
    DEFEATED_BY_RANDOMIZATION = "defeated_by_randomization"


class AllocationOrder(str, Enum):
    ASCENDING = "ascending"
    DESCENDING = "descending"
    AS_DECLARED = "as_declared"


class SchemeVariant(str, Enum):
    NONE = "none"
    TASK_ORIENTED = "task_oriented"
    CYCLE_ORIENTED = "cycle_oriented"


class StackMode(str, Enum):
    SHARED = "shared"
    PER_TASK = "per_task"


class AttackType(str, Enum):
    RETURN2LIBC = "return2libc"
    RETURN2SHELLCODE = "return2shellcode"
    ROP = "rop"


class StackKnowledge(str, Enum):
    EXACT = "exact"
    GUESS = "guess"
