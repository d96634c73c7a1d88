import logging

import numpy as np
import pytest

from phaseloc.core import ScaleConfig
from phaseloc.featio import LabeledVideo
from phaseloc.model import Model

TINY_CFG = ScaleConfig(slow_stride=2, fast_stride=1, pool_windows=(1, 2), bin_size=8)


def tiny_instance(rng, cfg=TINY_CFG):
    """Random tiny video (T <= 16, D <= 4, P <= 3) and a fully random model."""
    T = int(rng.integers(12, 17))
    D = int(rng.integers(2, 5))
    P = int(rng.integers(2, 4))
    cuts = sorted(rng.choice(np.arange(2, T - 1), P - 1, replace=False))
    b = [0, *cuts, T]
    video = LabeledVideo(rng.normal(size=(T, D)), [(b[j], b[j + 1], j) for j in range(P)], "tiny")
    model = Model.init(D, P, cfg, fast_channels=2, slow_channels=4, hidden=3, rng=rng)
    # random biases too, so no logits start out exactly tied
    for k in model.params:
        model.params[k] = rng.normal(scale=0.5, size=model.params[k].shape)
    return video, model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_logs():
    logging.getLogger("phaseloc").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    from report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(LINES):
            terminalreporter.write_line(line)
