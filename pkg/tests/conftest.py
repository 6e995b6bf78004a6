import time

import pytest

RESULTS = {}


class Criterion:
    """Times one acceptance criterion and records a one-line verdict."""

    def __init__(self, number: int, title: str, budget: float):
        self.number, self.title, self.budget = number, title, budget
        self.facts = []
        self.t0 = time.perf_counter()

    def note(self, text: str):
        self.facts.append(text)

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def line(self, ok: bool) -> str:
        status = "PASS" if ok else "FAIL"
        info = "; ".join(self.facts)
        return f"criterion {self.number} [{status}] {self.title}: {info} ({self.elapsed:.2f}s / {self.budget:g}s)"


@pytest.fixture
def criterion(request):
    crit = {}

    def start(number, title, budget):
        crit["c"] = Criterion(number, title, budget)
        return crit["c"]

    yield start
    c = crit.get("c")
    if c is not None:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        line = c.line(ok)
        RESULTS[c.number] = line
        print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
