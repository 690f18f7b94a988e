from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse.linalg as spl
from hypothesis import given
from hypothesis import strategies as st

from coalbg import identity_ode as io
from coalbg.core import FrequencyGrid, ModelParams, SelectionProfile
from coalbg.diffusion import stationary_density


def _asym():
    return ModelParams(mu1=0.3, mu2=0.15, r=0.2, nu=0.25, selection=SelectionProfile.directional(1.5))


# manufactured solution ----------------------------------------------------------------
# a smooth triple that satisfies the dominant pairing of f_PQ at both endpoints


def _manufactured():
    c2 = np.cos(2.0)
    u = [
        (lambda p: 0.7 + 0.2 * np.cos(2 * p), lambda p: -0.4 * np.sin(2 * p), lambda p: -0.8 * np.cos(2 * p)),
        (lambda p: 0.5 + (0.2 + 0.2 * c2) * p + 0.1 * np.sin(np.pi * p),
         lambda p: (0.2 + 0.2 * c2) + 0.1 * np.pi * np.cos(np.pi * p),
         lambda p: -0.1 * np.pi**2 * np.sin(np.pi * p)),
        (lambda p: 0.5 + 0.3 * p**2, lambda p: 0.6 * p, lambda p: 0.6 + 0 * p),
    ]
    return u


def _continuous_operator(prm, u, p, nu):
    """(L - 2 nu) u at interior p, written out from the backward rates."""
    mu1, mu2, r = prm.mu1, prm.mu2, prm.r
    q = 1 - p
    s = prm.selection.s0 if prm.selection.kind == "directional" else prm.selection.s0 * (prm.selection.p0 - p)
    drift = 0.5 * (s * p * q - mu1 * p + mu2 * q)
    dif = 0.25 * p * q
    m_pq = mu2 * q / p + r * q
    m_qp = mu1 * p / q + r * p
    v = [f(p) for f, _, _ in u]
    gen = [dif * dd(p) + drift * d(p) for _, d, dd in u]
    return np.array([
        gen[0] - v[0] / (2 * p) + m_pq * (v[1] - v[0]) - 2 * nu * v[0],
        gen[1] + 0.5 * m_qp * (v[0] - v[1]) + 0.5 * m_pq * (v[2] - v[1]) - 2 * nu * v[1],
        gen[2] - v[2] / (2 * q) + m_qp * (v[1] - v[2]) - 2 * nu * v[2],
    ])


def _manufactured_error(prm, n_interior, enrich):
    nu = prm.nu
    sysm = io.assemble_system(prm, n_interior, enrich=enrich)
    u = _manufactured()
    x = sysm.nodes
    M = len(x) - 1
    rhs = np.zeros(sysm.size)
    L = _continuous_operator(prm, u, x[1:-1], nu)
    for c in range(3):
        rhs[3 * np.arange(1, M) + c] = L[c]
    for rel in io.boundary_conditions(prm):
        e = rel.endpoint
        vals = [f(float(e)) for f, _, _ in u]
        rhs[3 * (0 if e == 0 else M) + rel.component] = rel.residual(vals, u[rel.component][1](float(e)), nu) - rel.constant
    if enrich:
        rhs[-2] = -2 * nu * u[1][0](0.0) + 0.5 * prm.mu2 * u[2][1](0.0)
        rhs[-1] = -2 * nu * u[1][0](1.0) - 0.5 * prm.mu1 * u[0][1](1.0)
    y = spl.spsolve(sysm.operator(nu), rhs)
    exact = np.array([f(x) for f, _, _ in u])
    return float(np.max(np.abs(sysm.expand(y) - exact)))


@pytest.mark.parametrize("enrich", [False, True])
def test_manufactured_solution_converges_at_second_order(enrich):
    prm = _asym()
    errs = [_manufactured_error(prm, n, enrich) for n in (49, 99, 199)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), (errs, orders)


def test_constant_vector_has_zero_residual_without_mutation_clock():
    prm = _asym()
    sysm = io.assemble_system(prm, 99)
    res = sysm.operator(0.0) @ sysm.ones() + sysm.b
    assert np.max(np.abs(res)) < 1e-10


def test_zero_nu_gives_identity_one():
    f = io.solve_direct(_asym().with_(nu=0.0), 99)
    np.testing.assert_allclose(f.values(), 1.0, atol=1e-10)


@pytest.mark.parametrize("pairing", ["dominant", "printed"])
def test_assembly_commutes_with_reflection(fig2, pairing):
    sysm = io.assemble_system(fig2.with_(selection=SelectionProfile.balancing(3.0, 0.5)), 49, pairing=pairing)
    M = sysm.n_nodes - 1
    perm = np.empty(sysm.size, dtype=int)
    k = np.repeat(np.arange(M + 1), 3)
    c = np.tile(np.arange(3), M + 1)
    perm[: 3 * (M + 1)] = 3 * (M - k) + (2 - c)
    perm[-2:] = [sysm.size - 1, sysm.size - 2]
    for mat in (sysm.A, sysm.mass):
        d = mat.toarray()
        np.testing.assert_allclose(d[np.ix_(perm, perm)], d, atol=1e-12 * np.max(np.abs(d)))
    np.testing.assert_allclose(sysm.b[perm], sysm.b, atol=1e-12)


def test_symmetric_solutions(fig2):
    f = io.solve_direct(fig2)
    np.testing.assert_allclose(f.f_PP, f.f_QQ[::-1], atol=1e-8)
    np.testing.assert_allclose(f.f_PQ, f.f_PQ[::-1], atol=1e-8)
    T = io.mean_coalescence_times(fig2)
    np.testing.assert_allclose(T.T_PP, T.T_QQ[::-1], rtol=1e-8)


def test_identity_range_and_coalescence_bound(fig2):
    f = io.solve_direct(fig2)
    v = f.values()
    assert np.all((v > 0) & (v <= 1 + 1e-12))
    T = io.mean_coalescence_times(fig2)
    assert np.all(T.T_PQ >= np.maximum(T.T_PP, T.T_QQ) - 1e-9)


@pytest.mark.parametrize("prm", [_asym(), ModelParams(mu1=0.025, mu2=0.025, nu=0.1, selection=SelectionProfile.balancing(0.16))])
def test_identity_decreases_in_nu(prm):
    sysm = io.assemble_system(prm, 199)
    fs = [io.solve_direct(prm.with_(nu=nu), system=sysm).values() for nu in (0.05, 0.1, 0.2)]
    assert np.all(fs[0] > fs[1]) and np.all(fs[1] > fs[2])


def test_dominant_pairing_endpoint_relations(fig2):
    f = io.solve_direct(fig2)
    v0, v1 = f.endpoint_values(0), f.endpoint_values(1)
    assert v0[io.PQ] == pytest.approx(v0[io.QQ], abs=1e-10)
    assert v1[io.PQ] == pytest.approx(v1[io.PP], abs=1e-10)
    mu2 = fig2.mu2
    assert (1 + 2 * mu2) * v0[io.PP] == pytest.approx(1 + 2 * mu2 * v0[io.PQ], abs=1e-10)
    assert v0[io.PP] < 1.0


def test_printed_pairing_forces_unit_identity_at_boundary(fig2):
    # combining f_PQ(0) = f_PP(0) with the PP closure leaves f_PP(0) = 1 for any nu
    f = io.solve_direct(fig2, pairing="printed")
    assert f.endpoint_values(0)[io.PP] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        io.assemble_system(fig2, 49, pairing="printed", enrich=True)
    with pytest.raises(ValueError):
        io.boundary_conditions(fig2, pairing="other")


def test_large_mu2_limit_of_closure():
    prm = ModelParams(mu1=0.1, mu2=1e9, nu=0.1)
    rel = io.boundary_conditions(prm)[0]
    assert rel.solve_for_component([0.0, 0.37, 0.0], 0.0) == pytest.approx(0.37, rel=1e-8)


def test_iterative_scheme(fig2):
    res = io.solve_iterative(fig2, 199, keep_iterates=True)
    assert res.monotone
    assert res.iterates[1][io.PP, 0] == pytest.approx(1 / (1 + 2 * fig2.mu2), rel=1e-12)
    direct = io.solve_direct(fig2, 199)
    np.testing.assert_allclose(res.field.values(), direct.values(), atol=1e-8)
    with pytest.raises(RuntimeError):
        io.solve_iterative(fig2, 99, n_max=3)


def test_neutral_mean_time_is_two(neutral):
    T = io.mean_coalescence_times(neutral, FrequencyGrid(1599))
    assert io.average_over_stationarity(T, neutral) == pytest.approx(2.0, abs=1e-6)


def test_neutral_identity_average(neutral):
    f = io.solve_direct(neutral)
    assert io.average_over_stationarity(f, neutral) == pytest.approx(1 / (1 + 4 * neutral.nu), abs=1e-6)


def test_average_over_stationarity_inputs(fig2):
    dens = stationary_density(fig2)
    assert io.average_over_stationarity(lambda p: 0 * p + 3.0, dens) == pytest.approx(3.0)
    x = np.linspace(0, 1, 51)
    assert io.average_over_stationarity(x, dens, nodes=x) == pytest.approx(0.5, abs=1e-10)
    with pytest.raises(ValueError):
        io.average_over_stationarity(x, dens, nodes=x[:-1])


def test_time_dependent_cdf(fig2):
    cdf = io.solve_time_dependent(fig2, dt=0.02, horizon=60.0, laplace_nu=(fig2.nu,))
    v = cdf.values
    assert np.all(v[0] == 0.0)
    assert np.min(np.diff(v, axis=0)) > -1e-10
    assert np.all(v[-1] > 0.99)
    direct = io.solve_direct(fig2)
    assert np.max(np.abs(cdf.laplace[fig2.nu] - direct.values())) < 5e-3
    assert np.max(np.abs(cdf.stieltjes(fig2.nu) - direct.values())) < 2e-2


def test_coarse_grid_cdf_undershoot_is_bounded(fig2):
    # the enriched operator is not an M-matrix, so a coarse grid may dip
    # slightly below zero on the first step next to an endpoint
    cdf = io.solve_time_dependent(fig2, 99, dt=0.02, horizon=1.0)
    assert -1e-3 < np.min(np.diff(cdf.values, axis=0)) < 0


def test_baseline_closed_form():
    prm = ModelParams(mu1=0.025, mu2=0.025, nu=0.1)
    b = io.constant_p_baseline(0.5, prm)
    assert (b.f_PP, b.f_PQ, b.fbar) == pytest.approx((9 / 11, 1 / 11, 5 / 11), abs=1e-14)
    assert (b.T_PP, b.T_PQ, b.Tbar) == pytest.approx((2.0, 42.0, 22.0), rel=1e-13)
    with pytest.raises(ValueError):
        io.constant_p_baseline(1.0, prm)


@given(p0=st.floats(0.01, 0.99), mu1=st.floats(0.001, 1), mu2=st.floats(0.001, 1), nu=st.floats(0.001, 2))
def test_baseline_mirror_and_range(p0, mu1, mu2, nu):
    prm = ModelParams(mu1=mu1, mu2=mu2, nu=nu)
    b = io.constant_p_baseline(p0, prm)
    m = io.constant_p_baseline(1 - p0, prm.mirrored())
    assert b.f_PP == pytest.approx(m.f_QQ, rel=1e-9) and b.T_PQ == pytest.approx(m.T_PQ, rel=1e-9)
    assert 0 < b.f_PQ < min(b.f_PP, b.f_QQ) + 1e-12 <= 1 + 1e-12


def test_selection_sweep_monotone():
    prm = ModelParams(mu1=0.025, mu2=0.025, nu=0.1, selection=SelectionProfile.balancing(0.0))
    pts = io.selection_sweep(prm, [0.0, 1.0, 10.0], 199)
    f = [pt.avg_fbar for pt in pts]
    assert f[0] == pytest.approx(1 / 1.4, abs=1e-5)
    assert f[0] > f[1] > f[2]


def test_closures_hold_for_constant_one_without_mutation_clock(fig2):
    for rel in io.boundary_conditions(fig2.with_(nu=0.0)):
        assert rel.residual([1.0, 1.0, 1.0], 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_cdf_tends_to_one(fig2):
    cdf = io.solve_time_dependent(fig2, 99, dt=0.05, horizon=400.0, store_every=100)
    np.testing.assert_allclose(cdf.values[-1], 1.0, atol=1e-6)


def test_baseline_without_mutation_clock():
    b = io.constant_p_baseline(0.3, ModelParams(mu1=0.025, mu2=0.05, nu=0.0))
    assert (b.f_PP, b.f_PQ, b.f_QQ, b.fbar) == pytest.approx((1.0, 1.0, 1.0, 1.0), abs=1e-14)


def test_solution_converges_at_second_order_under_refinement(fig2):
    sols = [io.solve_direct(fig2, FrequencyGrid(n)).values() for n in (99, 199, 399, 799)]
    # nodes of the coarsest grid sit at every 2^k-th node of the finer ones
    diffs = [np.max(np.abs(sols[k][:, :: 2 ** k] - sols[k + 1][:, :: 2 ** (k + 1)])) for k in range(3)]
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    assert np.all(ratios > 3.2), (diffs, ratios)
