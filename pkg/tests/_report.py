"""Collects the one-line acceptance verdicts printed at the end of the session."""

LINES: list[str] = []


def record(number: int, passed: bool, summary: str) -> bool:
    LINES.append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {summary}")
    return passed
