import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtslice import kpi
from dtslice.domain import KpiWeights
from dtslice.errors import OutOfRange, UnknownUser
from dtslice.physnet import PlaybackReport

LADDER = (1.5e6, 4.5e6, 15e6, 45e6)


def report(watched_by_version, stall=None, window=10.0):
    w = np.atleast_2d(np.asarray(watched_by_version, dtype=float))
    U = len(w)
    z = np.zeros(U)
    return PlaybackReport(window, np.zeros(U, int), w, z if stall is None else np.asarray(stall, float),
                          z, z, z, np.zeros((U, 1), int), np.zeros((U, 1), int),
                          np.zeros(1), np.zeros(1), np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)))


def test_satisfaction_examples():
    assert kpi.user_satisfaction(report([0, 0, 0, 10]), 0, LADDER) == 1.0
    assert kpi.user_satisfaction(report([0, 0, 0, 0]), 0, LADDER) == 0.0
    got = kpi.user_satisfaction(report([10, 0]), 0, (4.5e6, 45e6))
    assert got == pytest.approx(math.log1p(4.5e6) / math.log1p(45e6))
    assert got == pytest.approx(0.870, abs=1e-3)
    with pytest.raises(UnknownUser):
        kpi.user_satisfaction(report([0, 0, 0, 1]), 1, LADDER)


def test_satisfaction_stall_penalty():
    assert kpi.user_satisfaction(report([0, 0, 0, 10], [2.0]), 0, LADDER, 0.5) == pytest.approx(0.9)
    assert kpi.user_satisfaction(report([10, 0, 0, 0], [10.0]), 0, LADDER, 1.0) == 0.0


@given(st.lists(st.integers(0, 5), min_size=4, max_size=4), st.integers(0, 2), st.floats(0, 5))
def test_satisfaction_monotone(counts, v, stall):
    if counts[v] == 0:
        return
    up = list(counts)
    up[v] -= 1
    up[v + 1] += 1
    base = kpi.user_satisfaction(report(counts, [stall]), 0, LADDER)
    assert kpi.user_satisfaction(report(up, [stall]), 0, LADDER) >= base
    assert kpi.user_satisfaction(report(counts, [stall + 1.0]), 0, LADDER) <= base


def test_system_utility_examples():
    assert kpi.system_utility([1, 1, 1], 0.0, 10.0, 0.0, 5.0) == 1.0
    assert kpi.system_utility([0.2, 0.6], 3.0, 10.0, 5.0, 5.0, gamma_r=0.0) == pytest.approx(0.4)
    assert kpi.system_utility([0.7, 0.9], 5.0, 10.0, 1.5, 5.0, 0.25) == pytest.approx(0.7)
    assert kpi.system_utility([1.0], 6.0, 10.0, 1.0, 5.0, 0.25) < kpi.system_utility([1.0], 5.0, 10.0, 1.0, 5.0, 0.25)
    with pytest.raises(OutOfRange):
        kpi.system_utility([1.0], 0.0, 0.0, 0.0, 1.0)


def test_operation_cost_examples():
    assert kpi.operation_cost(0) == 0.0
    assert all(kpi.operation_cost(L, 0.0) == 0.0 for L in range(4))
    assert kpi.operation_cost(3, 0.1) == pytest.approx(0.3)
    with pytest.raises(OutOfRange):
        kpi.operation_cost(4)


def test_holistic_value_examples():
    assert kpi.holistic_dt_value(KpiWeights(0, 0, 0), 0.5, 0.3, 2.0) == 0.0
    assert kpi.holistic_dt_value(KpiWeights(1, 0, 0), 1.0, 0.3, 2.0) == 1.0
    assert kpi.holistic_dt_value(KpiWeights(0.5, 1, 0.1), 0.8, 0.6, 2.0) == pytest.approx(0.8)
    with pytest.raises(OutOfRange):
        kpi.holistic_dt_value(KpiWeights(), 1.5, 0.0, 0.0)


def test_holistic_value_exact_and_linear():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b, g = rng.uniform(0, 2, 3)
        f, Q, R = rng.uniform(0, 1), rng.uniform(-1, 1), rng.uniform(0, 1)
        w = KpiWeights(a, b, g)
        v = kpi.holistic_dt_value(w, f, Q, R)
        assert v == a * f + b * Q - g * R
        h = 2.0 ** -10  # exact in binary, so differences are exact up to rounding of the sum
        assert (kpi.holistic_dt_value(w, f * 0.5, Q + h, R) - kpi.holistic_dt_value(w, f * 0.5, Q, R)) / h \
            == pytest.approx(b, abs=1e-9)
        assert (kpi.holistic_dt_value(w, f, Q, R + h) - v) / h == pytest.approx(-g, abs=1e-9)
        assert (kpi.holistic_dt_value(w, f * 0.5 + h, Q, R) - kpi.holistic_dt_value(w, f * 0.5, Q, R)) / h \
            == pytest.approx(a, abs=1e-9)


def test_window_kpis_consistent():
    r = report([[0, 0, 0, 10], [0, 10, 0, 0]])
    k = kpi.window_kpis(r, LADDER, 10.0, 5.0, 0.9, KpiWeights(), 2)
    assert k.Q == pytest.approx(k.satisfaction.mean())
    assert k.V == pytest.approx(0.9 + k.Q - 0.2)
