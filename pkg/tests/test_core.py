from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from coalbg.core import (
    FrequencyGrid,
    ModelParams,
    SampleState,
    SelectionProfile,
    eval_selection,
    load_config,
    moran_event_rates,
    params_from_mapping,
    params_to_mapping,
    replicate_stream,
    selection_integral,
    to_diffusion_scale,
    wf_generation_rates,
)


def test_wright_fisher_scale_maps_to_diffusion_units():
    p = ModelParams(mu1=0.0005, mu2=0.001, r=0.01, nu=0.002, selection=SelectionProfile.balancing(0.16), N=50,
                    scale="wright_fisher")
    d = to_diffusion_scale(p)
    assert d.scale == "diffusion"
    assert d.mu1 == pytest.approx(0.05) and d.mu2 == pytest.approx(0.1)
    assert d.r == pytest.approx(1.0) and d.nu == pytest.approx(0.1)
    assert d.selection.s0 == pytest.approx(16.0)


def test_per_generation_scale_multiplies_by_N():
    p = ModelParams(mu1=0.001, mu2=0.002, nu=0.01, selection=SelectionProfile.directional(0.1), N=100,
                    scale="moran")
    d = to_diffusion_scale(p)
    assert (d.mu1, d.mu2, d.nu, d.selection.s0) == pytest.approx((0.1, 0.2, 1.0, 10.0))


def test_scale_round_trips():
    d = ModelParams(mu1=0.3, mu2=0.2, r=0.1, nu=0.4, selection=SelectionProfile.balancing(2.0, 0.3))
    back = to_diffusion_scale(wf_generation_rates(d, 37))
    assert (back.mu1, back.mu2, back.r, back.nu, back.selection.s0) == pytest.approx((0.3, 0.2, 0.1, 0.4, 2.0))
    m = moran_event_rates(d, 20)
    assert m.scale == "per_generation" and m.mu1 == pytest.approx(0.015)
    assert to_diffusion_scale(m).mu1 == pytest.approx(0.3)


@pytest.mark.parametrize(
    "kwargs",
    [dict(mu1=-0.1, mu2=0.1), dict(mu1=0.1, mu2=float("nan")), dict(mu1=0.1, mu2=0.1, scale="wf"),
     dict(mu1=0.1, mu2=0.1, scale="bogus"), dict(mu1=0.1, mu2=0.1, N=0)],
)
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_positive_mutation_required():
    with pytest.raises(ValueError):
        ModelParams(mu1=0.0, mu2=0.1).require_positive_mutation()


def test_symmetry_and_mirroring():
    p = ModelParams(mu1=0.1, mu2=0.1, selection=SelectionProfile.balancing(3.0, 0.5))
    assert p.symmetric
    q = ModelParams(mu1=0.1, mu2=0.3, selection=SelectionProfile.balancing(3.0, 0.2))
    assert not q.symmetric
    m = q.mirrored()
    x = np.linspace(0, 1, 11)
    assert m.mu1 == 0.3 and m.mu2 == 0.1
    np.testing.assert_allclose(eval_selection(m.selection, 1 - x), -eval_selection(q.selection, x))


@given(
    s0=st.floats(-5, 5),
    p_eq=st.floats(0.01, 0.99),
    kind=st.sampled_from(["directional", "balancing"]),
    x=st.floats(0, 1),
)
def test_selection_integral_matches_quadrature(s0, p_eq, kind, x):
    prof = SelectionProfile(kind, s0, p_eq)
    ref = quad(lambda y: 2.0 * float(eval_selection(prof, y)), 0.0, x)[0]
    assert selection_integral(prof, x) == pytest.approx(ref, abs=1e-10)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-3, 3)), min_size=2, max_size=6, unique_by=lambda t: round(t[0], 3)),
       st.floats(0, 1))
def test_tabulated_selection_integral(points, x):
    pts = sorted(points)
    if pts[-1][0] - pts[0][0] < 1e-3:
        return
    prof = SelectionProfile.tabulated(pts)
    ref = quad(lambda y: 2.0 * float(eval_selection(prof, y)), 0.0, x, points=[p for p, _ in pts], limit=200)[0]
    assert selection_integral(prof, x) == pytest.approx(ref, abs=1e-9)


def test_frequency_grid():
    g = FrequencyGrid(9)
    assert g.intervals == 10 and g.h == pytest.approx(0.1)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0 and len(g.points) == 9
    assert g.refined().h == pytest.approx(0.05)
    with pytest.raises(ValueError):
        FrequencyGrid(7)


def test_replicate_streams_are_reproducible_and_distinct():
    a = replicate_stream(11, 3).random(5)
    b = replicate_stream(11, 3).random(5)
    c = replicate_stream(11, 4).random(5)
    d = replicate_stream(12, 3).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


@given(st.sampled_from(["PP", "PQ", "QQ", "P", "Q", "(2,0)", "1,1"]))
def test_sample_state_parse(text):
    s = SampleState.parse(text)
    assert s.n1 + s.n2 in (1, 2)


def test_sample_state_invalid():
    with pytest.raises(ValueError):
        SampleState(2, 1)


def test_config_nested_and_flat(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("mu1: 0.0005\nmu2: 0.0005\nnu: 0.002\nN: 50\nscale: wf\nselection:\n  kind: balancing\n  s0: 0.16\n  p0: 0.5\n")
    p = load_config(f)
    assert p.scale == "wright_fisher" and p.N == 50 and p.selection.s0 == 0.16
    g = tmp_path / "d.yaml"
    g.write_text("selection.s0: 0.32\n")
    q = load_config(g, p)
    assert q.selection.s0 == 0.32 and q.mu1 == 0.0005
    assert params_from_mapping(params_to_mapping(q)) == q
    with pytest.raises(ValueError):
        params_from_mapping({"mu1": 1, "mu2": 1, "colour": "red"})


@pytest.mark.parametrize("prof,p,expected", [
    (SelectionProfile.balancing(0.16, 0.5), 0.5, 0.0),
    (SelectionProfile.directional(0.3), 0.7, 0.3),
    (SelectionProfile.balancing(0.32, 0.5), 0.25, 0.08),
])
def test_selection_values(prof, p, expected):
    assert float(eval_selection(prof, p)) == pytest.approx(expected, abs=1e-15)


def test_diffusion_scale_is_idempotent():
    d = ModelParams(mu1=0.025, mu2=0.025, nu=0.1, selection=SelectionProfile.balancing(0.16))
    assert to_diffusion_scale(d) == d
    assert to_diffusion_scale(to_diffusion_scale(d)) == d
