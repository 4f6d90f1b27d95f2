"""Reverse-mode gradients over a recorded operator trace.

There is no general tape for arbitrary Python: only operators from
:mod:`mtpn.engine.ops` record themselves, and only while a :class:`Tape`
is active. Arrays are identified by ``id``; the tape keeps every recorded
input and output alive, so ids stay unique for its lifetime.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import GradientError, ShapeError

_local = threading.local()


class Node:
    """One recorded operator application.

    Subclasses implement ``backward(grad, needs)`` returning a tuple aligned
    with ``inputs``; entries whose ``needs`` flag is false may be ``None``.
    """

    op = "op"
    differentiable = True

    def __init__(self, inputs, output):
        self.inputs = tuple(inputs)
        self.output = output

    def vjp(self, grad, needs=None):
        if not self.differentiable:
            raise GradientError(f"{self.op} has no gradient")
        if grad.shape != self.output.shape:
            raise ShapeError(f"{self.op}: upstream gradient shape {grad.shape} != output shape {self.output.shape}")
        if needs is None:
            needs = tuple(x is not None for x in self.inputs)
        return self.backward(grad, needs)

    def backward(self, grad, needs):  # pragma: no cover - abstract
        raise NotImplementedError


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def gradient(self, seeds, wrt):
        """Backpropagate ``seeds`` (pairs of output array, upstream gradient).

        Returns a list aligned with ``wrt``; an entry is ``None`` when the
        array does not influence any seeded output.
        """
        want = {id(a) for a in wrt}
        requires = set(want)
        for node in self.nodes:
            if any(x is not None and id(x) in requires for x in node.inputs):
                requires.add(id(node.output))

        grads: dict[int, np.ndarray] = {}
        for out, g in seeds:
            if id(out) not in requires:
                continue
            g = np.asarray(g, dtype=out.dtype)
            if g.shape != out.shape:
                raise ShapeError(f"seed gradient shape {g.shape} != output shape {out.shape}")
            _accumulate(grads, id(out), g)

        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            needs = tuple(x is not None and id(x) in requires for x in node.inputs)
            if not any(needs):
                continue
            in_grads = node.vjp(g, needs)
            for x, gx, need in zip(node.inputs, in_grads, needs):
                if need and gx is not None:
                    _accumulate(grads, id(x), gx)
            if id(node.output) not in want:
                del grads[id(node.output)]
        return [grads.get(id(a)) for a in wrt]


def _accumulate(grads, key, g):
    prev = grads.get(key)
    grads[key] = g if prev is None else prev + g


def current_tape():
    return getattr(_local, "tape", None)


@contextmanager
def recording():
    """Record every operator executed in the block onto a fresh :class:`Tape`."""
    prev = current_tape()
    tape = _local.tape = Tape()
    try:
        yield tape
    finally:
        _local.tape = prev


@contextmanager
def no_record():
    prev = current_tape()
    _local.tape = None
    try:
        yield
    finally:
        _local.tape = prev


def vjp(node: Node, upstream):
    """Vector-Jacobian product of a single recorded operator."""
    return node.vjp(np.asarray(upstream))
