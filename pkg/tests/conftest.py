import numpy as np
import pytest

from roler_lab.datasets import SyntheticConfig, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    cfg = SyntheticConfig(n_users=24, n_items=16, n_clusters=3, observation_noise=0.1, log_density=0.6, seed=3,
                          n_categories=4)
    return generate_synthetic(cfg)


# ------------------------------------------------- acceptance bookkeeping
#
# Tests marked ``@pytest.mark.criterion(n, "title")`` are grouped by number; a
# criterion passes only if every test carrying its number passes. The terminal
# summary prints one line per criterion.

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {n} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
                                    + (f"  [{detail}]" if detail else ""))
