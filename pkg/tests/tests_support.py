"""Shared state between the acceptance tests and the terminal summary hook."""

ACCEPTANCE_LINES = []


def record(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
