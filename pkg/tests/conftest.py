import numpy as np
import pytest

from cosparse.dataset_io import SynthConfig, generate_synthetic
from cosparse.detector import TrainConfig, train

ACCEPTANCE_RESULTS = []

# the acceptance dataset: N=50, M=100, K=64; margin 40 is 10x the noise scale
ACCEPTANCE_SYNTH = SynthConfig(n_images=50, n_proposals=100, dim=64, signal=40.0, noise=4.0, seed=7)
ACCEPTANCE_TRAIN = TrainConfig(seed=7)


def record_acceptance(name, passed, detail=""):
    ACCEPTANCE_RESULTS.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    data = generate_synthetic(ACCEPTANCE_SYNTH, out)
    return out, data


@pytest.fixture(scope="session")
def trained(synth_dir):
    _, data = synth_dir
    return train(data, ACCEPTANCE_TRAIN)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    cfg = SynthConfig(n_images=6, n_proposals=20, dim=8, seed=3)
    return out, generate_synthetic(cfg, out)
