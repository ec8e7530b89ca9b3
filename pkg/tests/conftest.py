import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import settings

from mpmg.hierarchy import LadderWarning

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_ladder_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LadderWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def round_fraction(q: Fraction, p: int) -> float:
    """Round an exact rational to p significand bits, ties to even.

    Independent oracle built on exact rational arithmetic.
    """
    if q == 0:
        return 0.0
    sign = -1 if q < 0 else 1
    a = abs(q)
    e = a.numerator.bit_length() - a.denominator.bit_length()
    # normalise so that 2**(p-1) <= a / 2**e < 2**p
    while a / Fraction(2) ** e >= 2**p:
        e += 1
    while a / Fraction(2) ** e < 2 ** (p - 1):
        e -= 1
    m = a / Fraction(2) ** e
    lo = m.numerator // m.denominator
    rem = m - lo
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and lo % 2 == 1):
        lo += 1
    return sign * float(Fraction(lo) * Fraction(2) ** e)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(
            f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
