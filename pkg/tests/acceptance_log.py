"""Collects one summary line per acceptance criterion for the terminal report."""

LINES: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    LINES.append(line)
    print(line)
