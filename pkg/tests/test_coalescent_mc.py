from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from coalbg import coalescent_mc as mc
from coalbg.core import ModelParams, SampleState, SelectionProfile, replicate_stream
from coalbg.identity_ode import constant_p_baseline


def _asym():
    return ModelParams(mu1=0.3, mu2=0.1, r=0.2, nu=0.2, selection=SelectionProfile.directional(1.0))


def test_rate_examples():
    prm = _asym()
    r = mc.rates(0.25, SampleState(1, 1), prm)
    assert r.coal_PP == 0.0 and r.coal_QQ == 0.0
    assert r.migrate_PtoQ == pytest.approx(0.5 * 0.1 * 3 + 0.5 * 0.2 * 0.75)
    assert r.migrate_QtoP == pytest.approx(0.5 * 0.3 / 3 + 0.5 * 0.2 * 0.25)
    assert r.total(SampleState(1, 1)) == pytest.approx(r.migrate_PtoQ + r.migrate_QtoP)
    r2 = mc.rates(0.5, SampleState(2, 0), prm)
    assert r2.coal_PP == pytest.approx(1.0)
    assert r2.total(SampleState(2, 0)) == pytest.approx(1.0 + 2 * r2.migrate_PtoQ)
    with pytest.raises(ValueError):
        mc.rates(0.0, SampleState(1, 1), prm)


def test_migration_vanishes_without_input():
    prm = ModelParams(mu1=0.3, mu2=0.0, r=0.0)
    assert mc.rates(0.4, SampleState(2, 0), prm).migrate_PtoQ == 0.0


@pytest.mark.parametrize("text,expected", [
    ("moran_exact(200)", mc.MoranExact(200)), ("euler(0.001)", mc.Euler(0.001)),
    ("euler(1e-3, em)", mc.Euler(1e-3, "em")), ("frozen(0.5)", mc.Frozen(0.5)),
])
def test_parse_engine(text, expected):
    eng = mc.parse_engine(text)
    assert eng == expected
    assert mc.parse_engine(str(eng)) == eng


@pytest.mark.parametrize("text", ["moran_exact(1)", "euler(0)", "frozen(1.0)", "gillespie(3)", "euler(0.1,rk)"])
def test_invalid_engines(text):
    with pytest.raises(ValueError):
        mc.parse_engine(text)


def test_zero_nu_gives_exact_one():
    reps = mc.run_replicates(_asym(), SampleState(1, 1), 500, 1, mc.MoranExact(20))
    est = mc.identity_estimate(reps, 0.0)
    assert est.value == 1.0 and est.std_error == 0.0


def test_identity_monotone_in_nu_on_common_replicates():
    reps = mc.run_replicates(_asym(), None, 2000, 2, mc.Euler(0.01))
    vals = [mc.identity_estimate(reps, nu).value for nu in (0.05, 0.1, 0.2, 0.4)]
    assert np.all(np.diff(vals) < 0)


def test_reproducible_and_worker_independent():
    prm = _asym()
    a = mc.run_replicates(prm, SampleState(2, 0), 1500, 7, mc.Euler(0.01), chunk=500)
    b = mc.run_replicates(prm, SampleState(2, 0), 1500, 7, mc.Euler(0.01), chunk=500, workers=2)
    c = mc.run_replicates(prm, SampleState(2, 0), 1500, 7, mc.Euler(0.01))
    for x in (b, c):
        np.testing.assert_array_equal(a.times, x.times)
        np.testing.assert_array_equal(a.p0, x.p0)
    d = mc.run_replicates(prm, SampleState(2, 0), 1500, 8, mc.Euler(0.01))
    assert not np.array_equal(a.times, d.times)


def test_replicate_prefix_is_stable():
    # replicate k always uses stream k, so a longer run extends a shorter one
    prm = _asym()
    a = mc.run_replicates(prm, None, 300, 5, mc.MoranExact(20))
    b = mc.run_replicates(prm, None, 600, 5, mc.MoranExact(20), chunk=128)
    np.testing.assert_array_equal(a.times, b.times[:300])


def test_standard_error_scaling():
    prm = ModelParams(mu1=0.025, mu2=0.025, nu=0.1)
    se = [mc.estimate_identity(prm, SampleState(2, 0), n, 3, mc.Frozen(0.5)).std_error for n in (4000, 16000)]
    assert se[0] / se[1] == pytest.approx(2.0, rel=0.2)


def test_frozen_engine_matches_constant_p_baseline():
    prm = ModelParams(mu1=0.025, mu2=0.025, nu=0.1)
    base = constant_p_baseline(0.5, prm)
    est = mc.estimate_identity(prm, SampleState(1, 1), 20_000, 4, mc.Frozen(0.5))
    assert abs(est.z_score(base.f_PQ)) < 4
    t = mc.estimate_mean_time(prm, SampleState(2, 0), 20_000, 4, mc.Frozen(0.5))
    assert abs(t.z_score(base.T_PP)) < 4


def test_euler_engine_neutral_identity():
    prm = ModelParams(mu1=0.025, mu2=0.025, nu=0.1)
    est = mc.estimate_identity(prm, None, 10_000, 6, mc.Euler(0.01))
    assert est.estimand == "fbar"
    assert abs(est.z_score(1 / 1.4)) < 4


def test_exchangeability_under_mirroring():
    prm = ModelParams(mu1=0.3, mu2=0.1, r=0.1, nu=0.1, selection=SelectionProfile.directional(1.5))
    a = mc.run_replicates(prm, SampleState(2, 0), 10_000, 10, mc.MoranExact(30))
    b = mc.run_replicates(prm.mirrored(), SampleState(0, 2), 10_000, 11, mc.MoranExact(30))
    assert stats.ks_2samp(a.times, b.times).pvalue > 1e-3
    # the unmirrored swap is a different law
    c = mc.run_replicates(prm, SampleState(0, 2), 10_000, 12, mc.MoranExact(30))
    assert stats.ks_2samp(a.times, c.times).pvalue < 1e-3


def test_empirical_cdf_and_stieltjes():
    prm = _asym()
    grid = np.linspace(0, 40, 401)
    cdf = mc.empirical_cdf_of_T(prm, None, 4000, grid, 9, mc.Euler(0.01), n_bins=10)
    assert cdf.counts.sum() == 4000
    for row, n in zip(cdf.values, cdf.counts):
        if n:
            assert row[0] == 0.0 and np.all(np.diff(row) >= 0)
    direct = mc.identity_estimate(cdf.samples, prm.nu)
    assert cdf.stieltjes(prm.nu) == pytest.approx(direct.value, abs=1e-12)
    k = 5
    lo, hi = cdf.edges[k], cdf.edges[k + 1]
    sub = cdf.samples.subset((cdf.samples.p0 >= lo) & (cdf.samples.p0 < hi))
    assert cdf.stieltjes(prm.nu, k) == pytest.approx(mc.identity_estimate(sub, prm.nu).value, abs=1e-12)


def test_p0_range_restricts_start():
    prm = _asym()
    reps = mc.run_replicates(prm, SampleState(1, 1), 300, 2, mc.Euler(0.01), p0_range=(0.5, 0.52))
    assert np.all((reps.p0 >= 0.5) & (reps.p0 < 0.52))
    assert reps.p0_range == (0.5, 0.52)
    with pytest.raises(ValueError):
        mc.run_replicates(prm, SampleState(1, 1), 10, 2, mc.Frozen(0.3), p0_range=(0.5, 0.52))


def test_single_genealogy_api():
    out = mc.simulate_coalescence(_asym(), SampleState(1, 1), "euler(0.01)", replicate_stream(1, 0))
    assert out.coalescence_time > 0 and out.initial == SampleState(1, 1)


@given(st.floats(0.0, 1.0))
def test_bin_containing(x):
    lo, hi = mc.bin_containing(x)
    assert lo <= x <= hi and hi - lo == pytest.approx(0.02)
