from __future__ import annotations

import pytest

from rlcat.trace import ContextSample, GeoPosition, Trace


def sample(t, x=0.0, y=0.0, *, sinr=10.0, velocity=10.0, cqi=9, ta=3, cell_id=0, rsrp=-90.0, rsrq=-10.0):
    return ContextSample(t=float(t), pos=GeoPosition(x, y), velocity=velocity, rsrp=rsrp, rsrq=rsrq,
                         sinr=sinr, cqi=cqi, ta=ta, carrier_freq=1800.0, cell_id=cell_id)


def flat_trace(n, *, sinr=10.0, step=10.0, mno="A", direction="uplink"):
    """Straight east-bound trace at constant SINR."""
    return Trace(tuple(sample(t, step * t, 0.0, sinr=sinr) for t in range(n)), mno=mno, direction=direction)


@pytest.fixture
def make_sample():
    return sample


@pytest.fixture
def make_flat_trace():
    return flat_trace


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
