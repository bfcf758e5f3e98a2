"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[tuple[tuple, str]] = []


def record(number: int, part: str, ok: bool, detail: str) -> None:
    tag = f"criterion {number}{part}"
    line = f"[{'PASS' if ok else 'FAIL'}] {tag:<14} {detail}"
    LINES.append(((number, part), line))
    print(line)
