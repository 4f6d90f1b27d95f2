"""Arithmetic-work instrumentation.

Operators report ``(label, macs, flops)`` through :func:`record`; the report is
dropped unless a :func:`counting` block is active on the current thread.
Nested blocks each receive every entry, so an outer tally is the
concatenation of its inner ones.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

_local = threading.local()


@dataclass
class OpTally:
    macs: int = 0
    flops: int = 0
    per_op: list = field(default_factory=list)

    def add(self, label: str, macs: int, flops: int) -> None:
        self.macs += macs
        self.flops += flops
        self.per_op.append((label, macs, flops))


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active() -> bool:
    return bool(getattr(_local, "stack", None))


def record(label: str, macs: int, flops: int) -> None:
    for t in _stack():
        t.add(label, int(macs), int(flops))


@contextmanager
def counting():
    t = OpTally()
    stack = _stack()
    stack.append(t)
    try:
        yield t
    finally:
        stack.remove(t)


def tally_scope(f, *args, **kwargs):
    """Run ``f(*args, **kwargs)`` with instrumentation on; return ``(result, OpTally)``."""
    with counting() as t:
        result = f(*args, **kwargs)
    return result, t
