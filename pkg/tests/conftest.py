import numpy as np
import pytest

from lungkit.audio_io import Recording


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq, n=60000, amp=1.0, fs=4000):
    t = np.arange(n) / fs
    return amp * np.sin(2 * np.pi * freq * t)


@pytest.fixture
def make_recording():
    def make(samples, name="rec"):
        return Recording(samples=np.asarray(samples, dtype=np.float64), name=name)

    return make


# --- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, status: str, title: str, detail: str) -> str:
    line = f"[{status}] criterion {number}: {title} :: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
