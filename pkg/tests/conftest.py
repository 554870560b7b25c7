import numpy as np
import pytest

_CRITERIA: dict[int, tuple[str, list[tuple[str, str]]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        n, title = mark.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA.setdefault(n, (title, []))[1].append((status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, results = _CRITERIA[n]
        statuses = {st for st, _ in results}
        status = "FAIL" if "FAIL" in statuses else ("PASS" if statuses == {"PASS"} else "SKIP")
        details = [d for _, d in results if d]
        line = f"criterion {n:2d} {status}  {title}"
        if details:
            line += f"  [{'; '.join(details)}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture
def detail(request):
    """Attach a short measured value to the acceptance summary line."""

    def add(text):
        request.node.user_properties.append(("detail", text))

    return add

