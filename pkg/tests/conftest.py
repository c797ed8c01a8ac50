import numpy as np
import pytest
import torch

from jointvc import config
from jointvc.audio import Waveform


def tone(freq=220.0, seconds=1.0, sr=16000, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return (amp * np.sin(2 * np.pi * freq * t)).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def toy_cfg():
    return config.build("toy").validate()


@pytest.fixture
def tiny_cfg():
    """Smaller than the toy profile, for fast unit tests."""
    cfg = config.build("toy")
    config.merge(cfg, {
        "content": {"dim": 16},
        "model": {
            "content_dim": 16, "latent_channels": 8, "hidden_channels": 16, "speaker_dim": 8,
            "speaker_hidden": 16, "enc_layers": 2, "flow_wn_layers": 1, "flow_layers": 2,
            "upsample_initial_channel": 16, "disc_channels": [4, 4, 4, 4, 4],
            "disc_scale_channels": [4, 4, 4, 4, 4, 4],
        },
        "train": {"phase1_steps": 3, "phase2_steps": 3, "batch_phase1": 2, "batch_phase2": 2,
                  "checkpoint_interval": 0},
    })
    return cfg.validate()


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    from jointvc import toydata

    root = tmp_path_factory.mktemp("toy_corpus")
    return toydata.make_corpus(root, seed=0)


def waveform(x):
    return Waveform(np.asarray(x, dtype=np.float32))


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
