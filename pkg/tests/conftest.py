import pytest

# (criterion number, title, passed, detail) tuples reported by tests/test_acceptance.py
ACCEPTANCE_RESULTS = []


@pytest.fixture
def acceptance():
    def record(number, title, passed, detail=""):
        ACCEPTANCE_RESULTS.append((number, title, bool(passed), detail))
        line = f"[acceptance {number}] {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {number}. {title}" + (f"  [{detail}]" if detail else ""))
