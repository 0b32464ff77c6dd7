import numpy as np
import pytest

from reverbseg.phantom import NeedleSpec, PhantomSpec, simulate

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    num, text = mark.args
    if rep.failed or rep.when == "call":
        prev = _criteria.get(num, (text, True))
        _criteria[num] = (text, prev[1] and not rep.failed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        text, ok = _criteria[num]
        terminalreporter.write_line(f"AC{num:<3} {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def one_needle_phantom():
    spec = PhantomSpec(
        height=96, width=96,
        needles=(NeedleSpec(row=20, col_start=20, length=50, count=3),),
        contrast=0.0,
    )
    return spec, simulate(spec, seed=1)
