import numpy as np
import pytest

from faircompose.data import CONTINUOUS, TabularDataset, synth_biased


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_small():
    return synth_biased(600, 3, -0.3, seed=7)


def make_dataset(x, y, g, w=None, kinds=None, names=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[1]
    return TabularDataset(
        features=x,
        feature_names=tuple(names or (f"f{j}" for j in range(d))),
        labels=np.asarray(y),
        protected=np.asarray(g),
        weights=np.ones(len(y)) if w is None else np.asarray(w, dtype=float),
        feature_kinds=tuple(kinds or (CONTINUOUS,) * d),
    )


@pytest.fixture
def dataset_factory():
    return make_dataset


# -- acceptance summary: one PASS/FAIL line per criterion --------------------------

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    name = getattr(item, "originalname", item.name)
    if item.module.__name__.endswith("test_acceptance") and name.startswith("test_criterion_"):
        # parametrized cases fold into one line per criterion
        number = int(name.split("_")[2])
        doc = (item.function.__doc__ or name).strip().splitlines()[0]
        if report.when == "call" or report.failed:
            prior = _ACCEPTANCE.get(number, (doc, False))[1]
            _ACCEPTANCE[number] = (doc, prior or report.failed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        doc, failed = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'FAIL' if failed else 'PASS'}  {doc}")
