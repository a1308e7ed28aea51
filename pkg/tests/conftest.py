import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gradw.enhance import UNet, UNetConfig
from gradw.speaker import SpeakerNet, SpeakerNetConfig

TINY_SPK = SpeakerNetConfig(n_mels=24, first_conv_channels=4, embedding_dim=8, num_speakers=4)
TINY_UNET = UNetConfig(n_mels=24, first_conv_channels=4)


@pytest.fixture
def tiny_speaker():
    return SpeakerNet(TINY_SPK, seed=1).freeze()


@pytest.fixture
def tiny_unet():
    return UNet(TINY_UNET, seed=2)


@pytest.fixture
def feature_pair():
    rng = np.random.default_rng(3)
    clean = rng.gamma(2.0, 0.5, (2, 48, 24))
    noisy = clean + rng.gamma(1.0, 0.5, clean.shape)
    return clean, noisy, np.array([1, 3])


ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
