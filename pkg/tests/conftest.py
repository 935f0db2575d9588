# Acceptance verdicts collected during the run and echoed in the terminal summary.
VERDICTS: list[tuple[int, str, bool, str]] = []


def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
    VERDICTS.append((number, name, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{number:2d}] {name}: {detail}")
