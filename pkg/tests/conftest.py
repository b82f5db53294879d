import numpy as np
import pytest
import torch

from hetcd.config import ArchConfig

torch.set_num_threads(1)


def tiny_arch(**kwargs) -> ArchConfig:
    """Small enough for loop oracles and finite differences."""
    base = dict(channels_x=4, channels_y=2, content_widths=(2, 4, 8, 8, 8),
                style_widths=(2, 2, 4, 8), mlp_hidden=8)
    base.update(kwargs)
    return ArchConfig(**base)


@pytest.fixture
def tiny():
    return tiny_arch()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
