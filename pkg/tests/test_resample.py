import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lattice_sar.lattice import build_lattice, interior_sites, neighbor_template, window_indices
from lattice_sar.resample import (
    FIRST_STEP,
    SECOND_STEP,
    ResamplePlan,
    build_first_step,
    build_second_step,
    eligible_sites,
    instrument_matrix,
    predict_endogenous,
    replication_counts,
    sample_sites,
)
from lattice_sar.simulate import SarDataset, WeightScheme, simulate_dataset

LAT = build_lattice(25, 25)
T24 = neighbor_template(24)


@pytest.fixture(scope="module")
def ds():
    return simulate_dataset(LAT, WeightScheme("queen", 0.5), k=2, rng=np.random.default_rng(0))


def test_replication_counts():
    assert replication_counts(625, 24) == (30, 215, 400)
    assert replication_counts(625, 48) == (30, 177, 324)
    with pytest.raises(ValueError):
        replication_counts(100, 48)


def test_eligible_counts():
    assert len(eligible_sites(LAT, T24, FIRST_STEP)) == 441
    assert len(eligible_sites(LAT, T24, SECOND_STEP)) == 289
    first = set(eligible_sites(LAT, T24, FIRST_STEP).tolist())
    assert set(eligible_sites(LAT, T24, SECOND_STEP).tolist()) <= first


def test_sample_sites():
    e = eligible_sites(LAT, T24, FIRST_STEP)
    full = sample_sites(e, len(e), np.random.default_rng(0), template=T24)
    assert sorted(full.sites.tolist()) == e.tolist()
    a = sample_sites(e, 400, np.random.default_rng(5), template=T24)
    b = sample_sites(e, 400, np.random.default_rng(5), template=T24)
    assert np.array_equal(a.sites, b.sites)
    assert a.r == 400 == len(set(a.sites.tolist()))
    assert set(a.sites.tolist()) <= set(e.tolist())
    with pytest.raises(ValueError):
        sample_sites(e, 442, np.random.default_rng(0), template=T24)
    boot = sample_sites(e, 600, np.random.default_rng(0), template=T24, replace=True)
    assert boot.r == 600


@pytest.mark.parametrize("k,m,cols", [(1, 24, 25), (4, 48, 196)])
def test_first_step_width(k, m, cols):
    d = simulate_dataset(LAT, WeightScheme("queen", 0.5), k=k, rng=np.random.default_rng(1))
    t = neighbor_template(m)
    plan = sample_sites(eligible_sites(LAT, t, FIRST_STEP), 30, np.random.default_rng(2), template=t)
    fs = build_first_step(d, plan)
    assert fs.Z.shape == (30, cols)
    assert np.array_equal(fs.y, d.y[plan.sites])


def test_constant_regressor_instruments():
    d = SarDataset(LAT, np.zeros(LAT.n), np.ones((LAT.n, 1)))
    Z = instrument_matrix(d, eligible_sites(LAT, T24, FIRST_STEP), T24)
    assert np.all(Z == 1)


def test_instrument_column_layout(ds):
    site = int(eligible_sites(LAT, T24, FIRST_STEP)[7])
    Z = instrument_matrix(ds, [site], T24)[0]
    k = ds.k
    np.testing.assert_array_equal(Z[:k], ds.X[site])
    win = window_indices(LAT, site, T24)
    for j, nb in enumerate(win):
        np.testing.assert_array_equal(Z[k + j * k:k + (j + 1) * k], ds.X[nb])


def test_predict_endogenous(ds):
    l = ds.k * 25
    zero = predict_endogenous(np.zeros(l), ds, T24, intercept=0.3)
    valid = ~np.isnan(zero)
    assert valid.sum() == 441
    np.testing.assert_array_equal(zero[valid], 0.3)
    theta = np.zeros(l)
    theta[0] = 1.0
    own = predict_endogenous(theta, ds, T24)
    np.testing.assert_array_equal(own[valid], ds.X[valid, 0])
    with pytest.raises(ValueError):
        predict_endogenous(np.zeros(l + 1), ds, T24)


def test_second_step(ds):
    yb = predict_endogenous(np.zeros(ds.k * 25), ds, T24, intercept=2.0)
    e2 = eligible_sites(LAT, T24, SECOND_STEP)
    one = sample_sites(e2, 1, np.random.default_rng(0), template=T24, stage=SECOND_STEP)
    d = build_second_step(ds, yb, one)
    assert d.Ybreve.shape == (1, 24)
    plan = sample_sites(e2, 50, np.random.default_rng(0), template=T24, stage=SECOND_STEP)
    d = build_second_step(ds, yb, plan)
    w = np.full(24, 0.9 / 24)
    np.testing.assert_allclose(d.Ybreve @ w, 2.0 * 0.9)
    assert d.design.shape == (50, ds.k + 24)


def test_second_step_needs_predictions(ds):
    yb = predict_endogenous(np.zeros(ds.k * 25), ds, T24)
    site = int(eligible_sites(LAT, T24, FIRST_STEP)[0])
    with pytest.raises(ValueError, match="missing"):
        build_second_step(ds, yb, ResamplePlan(np.array([site]), T24, SECOND_STEP))


@given(st.permutations(list(range(12))))
def test_rows_follow_plan_order(perm):
    d = simulate_dataset(build_lattice(15, 15), WeightScheme("rook", 0.3), rng=np.random.default_rng(3))
    t = neighbor_template(8)
    sites = interior_sites(d.lattice, 1)[:12]
    base = build_first_step(d, ResamplePlan(sites, t, FIRST_STEP))
    permuted = build_first_step(d, ResamplePlan(sites[list(perm)], t, FIRST_STEP))
    np.testing.assert_array_equal(permuted.Z, base.Z[list(perm)])
    np.testing.assert_array_equal(permuted.y, base.y[list(perm)])


def test_design_rows_are_exchangeable():
    # interior rows of queen data share one distribution; compare the moments of two disjoint halves
    lat = build_lattice(60, 60)
    d = simulate_dataset(lat, WeightScheme("queen", 0.7), rng=np.random.default_rng(8))
    t = neighbor_template(8)
    yb = d.y.copy()
    sites = eligible_sites(lat, t, SECOND_STEP)
    left, right = sites[: len(sites) // 2], sites[len(sites) // 2:]
    a = build_second_step(d, yb, ResamplePlan(left, t, SECOND_STEP)).Ybreve
    b = build_second_step(d, yb, ResamplePlan(right, t, SECOND_STEP)).Ybreve
    # rows of nearby sites are correlated; deflate the sample sizes accordingly
    se = np.sqrt(a.var(axis=0) / (len(left) / 20) + b.var(axis=0) / (len(right) / 20))
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 5 * se)
