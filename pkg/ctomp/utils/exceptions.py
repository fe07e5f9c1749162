"""Custom exceptions for the CToMP simulator"""


class CToMPError(Exception):
    """Base exception for simulator errors"""

    def __init__(self, message: str, details: dict = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)


class PrivilegeViolationError(CToMPError):
    """Raised when unprivileged code touches a privileged-only facility (MPU registers)"""

    def __init__(self, operation: str, mode: str):
        self.operation = operation
        self.mode = mode
        message = f"Privilege violation: '{operation}' is not permitted in {mode} mode"
        super().__init__(message, details={"operation": operation, "mode": mode})


class CapacityExceededError(CToMPError):
    """Raised when the MPU would hold more regions than it has slots"""

    def __init__(self, requested: int, capacity: int):
        self.requested = requested
        self.capacity = capacity
        message = f"MPU capacity exceeded: {requested} regions requested, capacity is {capacity}"
        super().__init__(
            message, details={"requested": requested, "capacity": capacity}
        )


class InvalidStackError(CToMPError):
    """Raised when a process stack pointer lies outside every allocated region"""

    def __init__(self, psp: int, reason: str = None):
        self.psp = psp
        message = f"Invalid process stack pointer 0x{psp:08x}"
        if reason:
            message += f": {reason}"
        super().__init__(message, details={"psp": psp, "reason": reason})


class InvalidAllocationSizeError(CToMPError):
    """Raised when mem_alloc is asked for zero bytes or more than the pool holds"""

    def __init__(self, size: int, pool_size: int):
        self.size = size
        message = f"Invalid allocation size {size}; must be in [1, {pool_size}]"
        super().__init__(message, details={"size": size, "pool_size": pool_size})


class RegionNotFoundError(CToMPError):
    """Raised when mem_free receives a handle that is not in the region table"""

    def __init__(self, handle: int):
        self.handle = handle
        super().__init__(
            f"No allocated region carries handle {handle}", details={"handle": handle}
        )


class AllocationFailedError(CToMPError):
    """Raised when a cycle cannot obtain its buffer set from the pool"""

    def __init__(self, sizes: list, retries: int, cycle: int = None):
        self.sizes = list(sizes)
        self.retries = retries
        self.cycle = cycle
        message = f"Cycle buffer allocation failed after {retries} placement retries"
        if cycle is not None:
            message += f" (cycle {cycle})"
        super().__init__(
            message, details={"sizes": self.sizes, "retries": retries, "cycle": cycle}
        )


class BudgetUnderflowError(CToMPError):
    """Raised when fixed protection overhead alone exceeds the cycle budget"""

    def __init__(self, overhead_us: float, budget_us: float, scheme: str = None):
        self.overhead_us = overhead_us
        self.budget_us = budget_us
        message = (
            f"Fixed protection overhead {overhead_us:.1f} us exceeds the "
            f"cycle budget of {budget_us:.1f} us"
        )
        super().__init__(
            message,
            details={"overhead_us": overhead_us, "budget_us": budget_us, "scheme": scheme},
        )


class MemoryFaultError(CToMPError):
    """Raised when an operation that is required to succeed hits an MPU fault"""

    def __init__(self, fault, operation: str = None):
        self.fault = fault
        message = (
            f"{fault.kind.value} on {fault.access.value} at 0x{fault.address:08x} "
            f"in {fault.mode.value} mode"
        )
        if operation:
            message = f"{operation}: {message}"
        super().__init__(
            message,
            details={
                "kind": fault.kind.value,
                "address": fault.address,
                "access": fault.access.value,
                "mode": fault.mode.value,
                "operation": operation,
            },
        )


class InvalidScriptError(CToMPError):
    """Raised when an attack script or gadget chain references unusable addresses"""

    def __init__(self, script: str, reason: str):
        self.script = script
        self.reason = reason
        super().__init__(
            f"Invalid attack script '{script}': {reason}",
            details={"script": script, "reason": reason},
        )


class ScenarioError(CToMPError):
    """Base class for scenario ingestion failures"""


class ScenarioParseError(ScenarioError):
    """Raised when a scenario file cannot be parsed"""

    def __init__(self, path: str, reason: str, line: int = None, column: int = None):
        self.path = path
        self.line = line
        self.column = column
        location = f"{path}:{line}:{column}" if line is not None else path
        super().__init__(
            f"Failed to parse scenario {location}: {reason}",
            details={"path": path, "line": line, "column": column, "reason": reason},
        )


class ScenarioValidationError(ScenarioError):
    """Raised when a parsed scenario violates an invariant"""

    def __init__(self, field: str, reason: str, value=None):
        self.field = field
        self.reason = reason
        self.value = value
        message = f"Validation error for field '{field}': {reason}"
        super().__init__(
            message, details={"field": field, "value": value, "reason": reason}
        )


class ConfigurationError(CToMPError):
    """Raised when there's a configuration issue"""

    def __init__(self, setting: str, message: str):
        self.setting = setting
        full_message = f"Configuration error for '{setting}': {message}"
        super().__init__(full_message, details={"setting": setting})
