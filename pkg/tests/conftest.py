import numpy as np
import pytest

from selexit import pipeline
from selexit.data import gen_mixture, train_val_test_split
from selexit.dc_data import build_dc_dataset
from selexit.dc_training import train_dcs
from selexit.ec_training import TrainConfig, train_ecs
from selexit.model import MultiExitModel


@pytest.fixture(scope="session")
def blobs():
    """Well separated two-class data, no fake points."""
    return train_val_test_split(gen_mixture(4, 2, 0.0, 600, seed=3), seed=3)


@pytest.fixture(scope="session")
def toy_splits():
    ds = gen_mixture(6, 2, 0.3, 1500, seed=11, fake_fraction=0.1)
    return train_val_test_split(ds, seed=11)


@pytest.fixture(scope="session")
def trained_toy(toy_splits):
    """Model after both training phases, plus the deferral training report."""
    train, val, _ = toy_splits
    model = MultiExitModel.build(6, 32, 4, 2, seed=11)
    train_ecs(model, train, TrainConfig(epochs=20, lr=0.01, seed=11, patience=3), val=val)
    labeled = build_dc_dataset(model, train, 33)
    model, report = train_dcs(model, labeled, TrainConfig(epochs=10, lr=0.01, seed=11))
    return model, report


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    run = pipeline.Run(tmp_path_factory.mktemp("run") / "toy")
    run.root.mkdir(parents=True)
    pipeline.run_all(run, pipeline.default_config())
    return run


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
