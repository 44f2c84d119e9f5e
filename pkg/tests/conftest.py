import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ilalab import harness as hs, models  # noqa: E402
from ilalab.data import ShapeParams, make_shapes  # noqa: E402


@pytest.fixture(scope="session")
def small_zoo():
    """Four quickly trained models on an easy, high-contrast shape set.

    Only for exercising plumbing; the acceptance suite uses the pinned zoo.
    """
    ds = make_shapes(1000, 300, seed=5, params=ShapeParams(contrast=(0.5, 0.8), noise=0.02,
                                                           jitter=1.0))
    zoo = {}
    for seed in (0, 1):
        for arch, epochs in (("mlp-2", 4), ("cnn-wide", 3)):
            m = models.train(models.build(arch, seed), ds, epochs=epochs, lr=0.05)
            zoo[m.name] = m
    return hs.Zoo(ds, zoo)


@pytest.fixture(scope="session")
def zoo_dir(small_zoo, tmp_path_factory):
    d = tmp_path_factory.mktemp("zoo")
    hs.save_zoo(small_zoo, d)
    return d


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acc.LINES):
            terminalreporter.write_line(line)
