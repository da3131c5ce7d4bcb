"""Decode schedule exactness and shape."""

import numpy as np
import pytest

from ctxcodec.schedule import DecodeSchedule, sinusoidal_schedule


def longdouble_oracle(n, t):
    """Same construction evaluated in extended precision."""
    pi = np.longdouble("3.141592653589793238462643383279502884")
    edges = [np.cos(pi * np.longdouble(i) / (2 * t)) for i in range(t + 1)]
    raw = [np.longdouble(n) * (edges[i] - edges[i + 1]) for i in range(t)]
    ks = [int(np.rint(v)) for v in raw[:-1]]
    ks.append(n - sum(ks))
    while min(ks) < 1:
        lo = min(range(t), key=lambda i: ks[i])
        hi = max(range(t), key=lambda i: ks[i])
        give = min(1 - ks[lo], ks[hi] - 1)
        ks[hi] -= give
        ks[lo] += give
    return tuple(ks)


def test_one_token_per_step():
    assert sinusoidal_schedule(8, 8).steps == (1,) * 8


def test_single_step():
    assert sinusoidal_schedule(37, 1).steps == (37,)


def test_matches_high_precision_oracle_256_8():
    assert sinusoidal_schedule(256, 8).steps == longdouble_oracle(256, 8)


@pytest.mark.parametrize("t", [1, 2, 4, 8])
def test_exact_cover_and_positivity(t):
    for n in range(t, 4097, 7):
        sched = sinusoidal_schedule(n, t)
        assert sum(sched.steps) == n
        assert min(sched.steps) >= 1


def test_few_early_many_late():
    for t in (2, 4, 8):
        for n in (4 * t, 64, 256, 1000):
            steps = sinusoidal_schedule(n, t).steps
            assert steps[0] <= steps[-1], (n, t, steps)


def test_oracle_agreement_t8_sweep():
    for n in range(8, 4097, 13):
        assert sinusoidal_schedule(n, 8).steps == longdouble_oracle(n, 8), n


def test_n_below_t_raises():
    with pytest.raises(ValueError):
        sinusoidal_schedule(3, 8)


def test_invalid_schedule_rejected():
    with pytest.raises(ValueError):
        DecodeSchedule((2, 2), 5)
    with pytest.raises(ValueError):
        DecodeSchedule((5, 0), 5)
