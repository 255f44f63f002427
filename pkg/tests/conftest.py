import random

import pytest

from learned_sstable.record import Record


def make_records(n, seed=0, value_size=100):
    rng = random.Random(seed)
    keys = sorted({b"%020d" % rng.getrandbits(64) for _ in range(n)})
    return [Record(k, rng.randbytes(value_size)) for k in keys]


@pytest.fixture(scope="session")
def records_100k():
    return make_records(100_000, seed=11)


_criteria: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    if number in _criteria:
        _, prev_status, prev_detail = _criteria[number]
        status = "FAIL" if "FAIL" in (status, prev_status) else status
        detail = "; ".join(d for d in (prev_detail, detail) if d)
    _criteria[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_criteria):
        title, status, detail = _criteria[n]
        terminalreporter.write_line(f"[{status}] {n:2d}. {title}" + (f" -- {detail}" if detail else ""))
