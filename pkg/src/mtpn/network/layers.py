"""Parameterised building blocks.

A block owns parameter *specs* (name, shape, initialiser) and a forward
function that reads the concrete arrays from a flat ``{path: array}`` map.
Paths are fixed when a parent attaches a child, so names are stable across
builds and checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from .. import engine as E


class Block:
    def __init__(self):
        self.path = ""
        self._children: list[tuple[str, Block]] = []
        self._own: list[tuple[str, tuple, str, float]] = []

    def add(self, name, block):
        self._children.append((name, block))
        setattr(self, name, block)
        return block

    def param(self, name, shape, init, value=0.0):
        self._own.append((name, tuple(shape), init, value))

    def bind(self, path):
        self.path = path
        for name, child in self._children:
            child.bind(f"{path}.{name}" if path else name)
        return self

    def specs(self):
        for name, shape, init, value in self._own:
            yield f"{self.path}.{name}", shape, init, value
        for _, child in self._children:
            yield from child.specs()

    def key(self, name):
        return f"{self.path}.{name}"


class Conv(Block):
    def __init__(self, cin, cout, k, stride=1, groups=1, bias=False, bias_init=None):
        super().__init__()
        self.cin, self.cout, self.k, self.stride, self.groups = cin, cout, k, stride, groups
        self.pad = k // 2
        self.has_bias = bias
        self.param("weight", (cout, cin // groups, k, k), "he_uniform")
        if bias:
            self.param("bias", (cout,), "const" if bias_init is None else "bias", 0.0)
            self.bias_init = bias_init

    def __call__(self, P, x):
        return E.conv2d(
            x, P[self.key("weight")], P[self.key("bias")] if self.has_bias else None,
            stride=self.stride, pad=self.pad, groups=self.groups, label=self.path,
        )


class BatchNorm(Block):
    BUFFERS = ("running_mean", "running_var")

    def __init__(self, c, zero_gamma=False):
        super().__init__()
        self.c = c
        self.param("gamma", (c,), "const", 0.0 if zero_gamma else 1.0)
        self.param("beta", (c,), "const", 0.0)
        self.param("running_mean", (c,), "const", 0.0)
        self.param("running_var", (c,), "const", 1.0)

    def __call__(self, P, x):
        k = self.key
        return E.batchnorm(x, P[k("gamma")], P[k("beta")], P[k("running_mean")], P[k("running_var")], label=self.path)


_ACTS = {"relu": E.relu, "relu6": E.relu6, None: None}


class ConvBNAct(Block):
    def __init__(self, cin, cout, k, stride=1, groups=1, act="relu", zero_gamma=False):
        super().__init__()
        self.add("conv", Conv(cin, cout, k, stride, groups))
        self.add("bn", BatchNorm(cout, zero_gamma))
        self.act = act

    def __call__(self, P, x):
        y = self.bn(P, self.conv(P, x))
        f = _ACTS[self.act]
        return y if f is None else f(y, label=self.path)


def init_parameters(blocks, seed, dtype=np.float32):
    """Materialise every spec: He-uniform conv weights, constants elsewhere."""
    rng = np.random.default_rng(seed)
    params = {}
    for block in blocks:
        for name, shape, init, value in block.specs():
            if name in params:
                raise ValueError(f"duplicate parameter name {name}")
            if init == "he_uniform":
                fan_in = int(np.prod(shape[1:]))
                bound = math.sqrt(6.0 / fan_in)
                arr = rng.uniform(-bound, bound, size=shape)
            elif init == "bias":
                arr = np.asarray(_owner_bias(block, name), dtype=np.float64).reshape(shape)
            else:
                arr = np.full(shape, value)
            params[name] = np.ascontiguousarray(arr, dtype=dtype)
    return params


def _owner_bias(root, name):
    path = name.rsplit(".", 1)[0]
    stack = [root]
    while stack:
        b = stack.pop()
        if b.path == path:
            return b.bias_init
        stack.extend(c for _, c in b._children)
    raise KeyError(name)
