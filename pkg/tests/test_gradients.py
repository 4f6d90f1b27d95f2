"""vjp of every differentiable op against double-precision central differences.

Inputs are kept away from the kinks of relu, relu6 and max so the finite
differences are well defined.
"""

import numpy as np
import pytest

from mtpn import engine as E

from gradcheck import KERNEL_CASES, OP_CASES, TOL, check, worst_error

INSTANCES = 20


@pytest.mark.parametrize("name", sorted(OP_CASES.keys() - KERNEL_CASES))
def test_op(name):
    assert worst_error(name, INSTANCES) <= TOL


@pytest.mark.parametrize("name", sorted(KERNEL_CASES))
def test_kernel_op(backend, name):
    assert worst_error(name, INSTANCES) <= TOL


def test_conv2d_parameter_gradient_example():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    assert check(lambda: E.conv2d(x, w, b, pad=1), [w, b], rng) <= TOL


def test_composed_graph(backend):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(INSTANCES):
        x = rng.standard_normal((1, 3, 8, 8))
        w1 = rng.standard_normal((4, 3, 3, 3))
        w2 = rng.standard_normal((4, 1, 3, 3))
        mw = rng.uniform(0.5, 1.5, 2)

        def f():
            y = E.sigmoid(E.conv2d(x, w1, pad=1))
            z = E.conv2d(y, w2, pad=1, groups=4)
            down = E.resize_bilinear(E.avgpool(z, 2, 2), 8, 8)
            return E.softmax_channels(E.weighted_merge([z, down], mw))

        worst = max(worst, check(f, [x, w1, w2, mw], rng))
    assert worst <= TOL
