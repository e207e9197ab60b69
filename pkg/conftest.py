import pytest

from agents.agent_model import TrainConfig
from corpus.synthetic import SynthConfig, synthesize_corpus


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs (enable with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TOY_SYNTH = dict(num_records=4, n=2, d_v=4, K=2, vocab_per_topic=4, sentence_len_range=(4, 5), seed=0)


@pytest.fixture
def toy_synth():
    return SynthConfig(**TOY_SYNTH)


@pytest.fixture
def toy_corpus(toy_synth):
    return synthesize_corpus(toy_synth, "train")


@pytest.fixture
def toy_valid(toy_synth):
    return synthesize_corpus(toy_synth, "valid")


@pytest.fixture
def toy_config():
    return TrainConfig(
        K=2, n=2, d_v=4, n_h=6, n_x=5, n_f=3, n_m=4, worker_mlp_dim=6, T_max=6,
        batch_size=2, epochs=2, warmup_epochs=1, ramp_epochs=1, gamma_max=0.5, seed=0,
    )
