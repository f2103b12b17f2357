"""Exception hierarchy shared by every kvtier module."""
from __future__ import annotations


class KVTierError(Exception):
    """Base class for all kvtier errors."""


class InvalidConfig(KVTierError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration: " + ", ".join(self.violations))


class UnknownPartition(KVTierError):
    def __init__(self, partition_id: int, key=None):
        self.partition_id = partition_id
        self.key = key
        super().__init__(f"unknown partition {partition_id} for {key}")


class NotOffloaded(UnknownPartition):
    """The partition exists but has no host pages (pinned, device-only)."""

    def __init__(self, partition_id: int, key=None):
        KVTierError.__init__(self, f"partition {partition_id} of {key} was never offloaded")
        self.partition_id = partition_id
        self.key = key


class HostCapacityExceeded(KVTierError):
    pass


class DeviceCapacityExceeded(KVTierError):
    pass


class OverlappingSpec(KVTierError):
    pass


class InvalidSpecParams(KVTierError):
    pass


class PoolExhausted(KVTierError):
    pass


class DoubleFree(KVTierError):
    pass


class InsufficientBuffer(KVTierError):
    """Page demand cannot be met by the evictable pages of a head's buffer."""


class NothingReclaimable(KVTierError):
    pass


class TraceExhausted(KVTierError):
    pass


class BudgetTooLarge(KVTierError):
    pass


class InstanceTooLarge(KVTierError):
    pass


class ParseError(KVTierError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")
