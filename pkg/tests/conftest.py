import pytest

from ctrbid.domain import FeatureCombination, FeatureStats


def make_key(domain="example.com", device="Desktop", size="300x250", fold="1", geo="US-501", **extra):
    return FeatureCombination(domain, device, size, fold, geo, **extra)


def make_stats(imps, clicks=0, cost=0.0, **key_fields):
    return FeatureStats(make_key(**key_fields), imps, clicks, cost)


@pytest.fixture
def key():
    return make_key()


# -- acceptance summary -------------------------------------------------------

_acceptance: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    detail = getattr(item, "acceptance_detail", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.passed else "FAIL"
        _acceptance[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        status, title, detail = _acceptance[number]
        line = f"[{status}] {number:>2}. {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
