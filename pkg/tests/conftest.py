import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from distex.book import Book  # noqa: E402

DATA = os.path.join(os.path.dirname(__file__), "data")


class BookWatch:
    """Checks book invariants after every add/cancel made anywhere in the test run."""

    ops = 0
    crossed = 0
    volume_mismatch = 0


def _watch(method):
    def wrapper(self, *args, **kwargs):
        try:
            return method(self, *args, **kwargs)
        finally:
            BookWatch.ops += 1
            if self.is_crossed():
                BookWatch.crossed += 1
            # incremental tape check: prior volume plus the quantities of new trades
            seen = getattr(self, "_watch_len", 0)
            expected = getattr(self, "_watch_volume", 0) + sum(t.qty for t in self.tape[seen:])
            if expected != self.cum_volume:
                BookWatch.volume_mismatch += 1
            self._watch_len, self._watch_volume = len(self.tape), self.cum_volume
    return wrapper


Book.add_order = _watch(Book.add_order)
Book.cancel_order = _watch(Book.cancel_order)


# criterion number -> (passed, detail), filled in by the acceptance suite
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "live: opens loopback sockets and runs real processes")


def pytest_terminal_summary(terminalreporter):
    terminalreporter.write_line(
        f"book watch: {BookWatch.ops} operations, {BookWatch.crossed} crossed, "
        f"{BookWatch.volume_mismatch} volume mismatches")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"acceptance criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_sessionfinish(session, exitstatus):
    if BookWatch.crossed or BookWatch.volume_mismatch:
        session.exitstatus = 1
