import numpy as np
import pytest

from mtpn.engine import kernels
from mtpn.network import ModelConfig, build_model

TINY = dict(input_res=(64, 96), fusion_width=16, seg_width=8, skip_width=8, num_classes=3, fusion_repeats=1)


def tiny_config(backbone="mobilenetv2", **changes):
    return ModelConfig(backbone=backbone, **{**TINY, **changes})


@pytest.fixture(params=kernels.BACKENDS)
def backend(request):
    prev = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def tiny_model():
    return build_model(tiny_config(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdict lines, filled by test_acceptance.py and echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
