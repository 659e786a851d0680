import pytest
from hypothesis import settings

# fixed example streams so repeated runs see the same cases
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")



def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the terminal summary and return it."""
    def record(number: int, ok: bool, detail: str) -> str:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append((number, line))
        print(line)
        return line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(getattr(config, "acceptance_lines", []))
    if lines:
        terminalreporter.section("acceptance")
        for _, line in lines:
            terminalreporter.write_line(line)
