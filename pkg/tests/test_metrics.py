import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lattice_sar.lattice import neighbor_template
from lattice_sar.metrics import mae, recovery_frequency, rmse, support_stats
from lattice_sar.simulate import WeightScheme, scheme_vector

T24 = neighbor_template(24)
QUEEN = scheme_vector(WeightScheme("queen", 0.5), T24)
ANISO = scheme_vector(WeightScheme("anisotropic", 0.9), T24)

vec24 = arrays(np.float64, 24, elements=st.floats(-1, 1, allow_subnormal=False))


def test_mae_examples():
    assert mae(QUEEN, QUEEN) == 0
    assert mae(np.zeros(24), QUEEN) == pytest.approx(0.5 / 24, abs=1e-15)
    assert mae([0.4, 0.5], [0.45, 0.45]) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        mae([1, 2], [1, 2, 3])


@given(vec24, vec24, vec24)
def test_mae_is_a_metric(a, b, c):
    assert mae(a, b) == mae(b, a) >= 0
    assert mae(a, c) <= mae(a, b) + mae(b, c) + 1e-12


def test_support_stats_examples():
    zero = support_stats(np.zeros(24), QUEEN)
    assert zero.specificity == 1 and zero.sensitivity == 0
    exact = support_stats(QUEEN * 1.3, QUEEN)
    assert exact.specificity == exact.sensitivity == 1
    hat = np.zeros(24)
    hat[T24.position((0, 1))] = 0.4
    hat[T24.position((-2, 0))] = 0.1
    ev = support_stats(hat, ANISO)
    assert ev.sensitivity == 0.5
    assert ev.specificity == pytest.approx(21 / 22)


def test_support_stats_undefined_rates():
    ev = support_stats(np.ones(4), np.zeros(4))
    assert np.isnan(ev.sensitivity) and ev.specificity == 0


@given(vec24, vec24, st.floats(0.01, 100))
def test_rates_bounded_and_scale_invariant(a, b, s):
    ev = support_stats(a, b, zero_tol=0)
    for v in (ev.specificity, ev.sensitivity):
        assert np.isnan(v) or 0 <= v <= 1
    ev2 = support_stats(s * a, s * b, zero_tol=0)
    assert ev2.specificity == ev.specificity or (np.isnan(ev2.specificity) and np.isnan(ev.specificity))
    assert ev2.sensitivity == ev.sensitivity or (np.isnan(ev2.sensitivity) and np.isnan(ev.sensitivity))


def test_recovery_frequency_examples():
    full = recovery_frequency([np.ones(24)] * 5, T24)
    assert np.all(full.counts == 5) and full.total == 5
    assert np.all(recovery_frequency([np.zeros(24)] * 3).counts == 0)
    a, b = np.zeros(24), np.zeros(24)
    a[2], b[7] = 0.1, 0.2
    fm = recovery_frequency([a, b])
    assert fm.counts.sum() == 2 and fm.counts[2] == fm.counts[7] == 1
    g = fm.grid()
    assert g.shape == (5, 5) and g[2, 2] == -1


@given(st.lists(vec24, min_size=1, max_size=10))
def test_recovery_frequency_identity(fits):
    fm = recovery_frequency(fits, T24)
    expect = sum((np.abs(f) > 1e-10).astype(int) for f in fits)
    np.testing.assert_array_equal(fm.counts, expect)


def test_rmse_examples():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert rmse(y, y) == 0
    assert rmse(y + 1, y) == 1
    assert rmse(y - 2.5, y) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])
