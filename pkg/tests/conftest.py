import sys
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> list of (passed, description); filled by test_acceptance
ACCEPTANCE_RESULTS = defaultdict(list)


def record(criterion: int, passed: bool, text: str) -> bool:
    ACCEPTANCE_RESULTS[criterion].append((bool(passed), text))
    return bool(passed)


def acceptance_lines():
    lines = []
    for c in sorted(ACCEPTANCE_RESULTS):
        results = ACCEPTANCE_RESULTS[c]
        status = "PASS" if all(ok for ok, _ in results) else "FAIL"
        detail = "; ".join(("" if ok else "[failed] ") + text for ok, text in results)
        lines.append(f"criterion {c}: {status} | {detail}")
    return lines


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
