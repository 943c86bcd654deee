import pytest

from availoracle import core
from availoracle.core import Block, Datum, Registration, Report, genesis_block
from availoracle.pow import MAX_TARGET, Difficulty, TargetSchedule

EASY = Difficulty(MAX_TARGET)


@pytest.fixture(autouse=True)
def _default_hash():
    core.set_hash("sha256")
    yield
    core.set_hash("sha256")


def datum(label: str) -> Datum:
    return Datum.from_payload(label.encode())


def reg(label: str, duration=4, fee=100, key="storer") -> Registration:
    return Registration.signed(datum(label).id, duration, fee, key)


def child(parent, reports=(), regs=(), key="m", nonce=0) -> Block:
    return Block(
        parent.epoch + 1,
        tuple(Report(x) for x in reports),
        tuple(regs),
        key,
        nonce,
        parent.header_hash,
    )


def linear_chain(n, regs_at=None, reports_at=None):
    """Genesis plus ``n`` blocks; ``regs_at``/``reports_at`` map epoch -> list."""
    regs_at, reports_at = regs_at or {}, reports_at or {}
    chain = [genesis_block()]
    for t in range(1, n + 1):
        chain.append(child(chain[-1], reports_at.get(t, ()), regs_at.get(t, ()), key=f"m{t}"))
    return chain


@pytest.fixture
def easy_schedule():
    return TargetSchedule(EASY)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
