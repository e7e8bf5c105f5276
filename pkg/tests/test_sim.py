from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tailwait.attributes import (
    Attribute,
    Empirical,
    Factored,
    PointMass,
    from_mapping,
    table1_attributes,
    to_mapping,
    unit_directions,
    wrap_angle,
)
from tailwait.errors import ConfigError, DataError
from tailwait.sim import (
    MsvConfig,
    SupportPoint,
    SupportPoints,
    evaluate_process,
    evaluate_running_max,
    expected_count,
    first_exceedance_times,
    kernel_value,
    render_panel,
    sample_support_points,
    simulate_panel,
    validity_floor,
)


def still(d=2):
    return PointMass(Attribute(np.zeros(d), np.eye(d)))


def point(u=1.0, xi=(0.0, 0.0), sigma=0.0, tau=10.0, v=(0.0, 0.0), L=None):
    xi = np.asarray(xi, float)
    L = np.eye(xi.size) if L is None else L
    return SupportPoint(u, xi, sigma, tau, Attribute(np.asarray(v, float), L))


def small_config(seed=0, beta=1.0, attrs=None, **kw):
    kw.setdefault("delta", 4.0)
    kw.setdefault("u_min", 0.2)
    return MsvConfig(beta=beta, box=((0.0, 0.0), (1.0, 1.0)), horizon=1.0,
                     attributes=attrs or still(), seed=seed, **kw)


# attributes

def test_attribute_rejects_bad_shape():
    with pytest.raises(ConfigError):
        Attribute([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ConfigError):
        Attribute([0.0, 0.0], np.eye(3))


def test_wrap_angle_interval():
    phi = np.array([-np.pi, np.pi, 3 * np.pi, 0.5, -7.0])
    out = wrap_angle(phi)
    assert np.all(out > -np.pi) and np.all(out <= np.pi)
    np.testing.assert_allclose(np.cos(out), np.cos(phi), atol=1e-12)


def test_unit_directions_are_unit():
    rng = np.random.default_rng(0)
    u = unit_directions(rng.uniform(-3, 3, size=(100, 2)))
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0)


def test_empirical_expectation_is_exact():
    law = Empirical((Attribute([1.0], [[1.0]]), Attribute([3.0], [[1.0]])), [0.25, 0.75])
    est = law.expect(lambda V, L: V[:, 0], 10, 0)
    assert est == (2.5, 0.0)


def test_table1_speed_mean():
    V, L = table1_attributes().sample(np.random.default_rng(0), 200_000)
    speed = np.linalg.norm(V, axis=1)
    assert abs(speed.mean() - 0.1) < 4 * speed.std() / math.sqrt(speed.size)
    assert abs(L.mean(axis=0)[0, 0] - 7.0) < 0.05


def test_mapping_round_trip():
    for law in (table1_attributes(), still(), Empirical((Attribute([1.0], [[2.0]]),))):
        again = from_mapping(to_mapping(law))
        assert to_mapping(again) == to_mapping(law)


def test_factored_stationary_variant():
    law = Factored(7, np.eye(2), None)
    V, _ = law.sample(np.random.default_rng(0), 5)
    assert law.stationary and not V.any()


# kernel and evaluation

def test_kernel_before_birth_is_zero():
    assert kernel_value([0.0, 0.0], -1.0, point()) == 0.0


def test_kernel_after_death_is_zero():
    assert kernel_value([0.0, 0.0], 10.0, point(tau=10.0)) == 0.0


def test_kernel_mode():
    p = point(sigma=1.0, v=(0.5, -1.0), xi=(1.0, 2.0))
    t = 3.0
    x = p.birth_location + p.attribute.velocity * (t - p.birth_time)
    assert kernel_value(x, t, p) == pytest.approx(1 / (2 * math.pi), rel=1e-14)


def test_kernel_one_dim_hand_value():
    p = SupportPoint(1.0, np.array([0.0]), 0.0, 5.0, Attribute([0.0], [[1.0]]))
    assert kernel_value([1.0], 1.0, p) == pytest.approx(0.241971, abs=1e-6)


def test_evaluate_empty_is_zero():
    assert evaluate_process([], [0.0, 0.0], 1.0) == 0.0


def test_evaluate_single_point_at_mode():
    assert evaluate_process([point(u=2.0)], [0.0, 0.0], 1.0) == pytest.approx(0.318310, abs=1e-6)


def test_evaluate_two_points_is_max():
    a, b = point(u=2.0), point(u=1.0, xi=(0.5, 0.0))
    x = [0.3, 0.1]
    expect = max(2.0 * kernel_value(x, 1.0, a), kernel_value(x, 1.0, b))
    assert evaluate_process([a, b], x, 1.0) == pytest.approx(expect, rel=1e-14)


def test_running_max_stationary_equals_process():
    p = point(u=3.0, xi=(0.2, 0.4), sigma=-1.0, tau=10.0)
    x = [1.0, 0.0]
    assert evaluate_running_max([p], x, 4.0) == pytest.approx(evaluate_process([p], x, 2.0), rel=1e-14)


def test_running_max_at_cpa_is_orthogonal_residual():
    p = point(u=2.0, v=(1.0, 0.0), tau=100.0)
    # CPA to (5, 2) at s = 5; residual (0, 2)
    expect = 2.0 / (2 * math.pi) * math.exp(-2.0)
    assert evaluate_running_max([p], [5.0, 2.0], 50.0) == pytest.approx(expect, rel=1e-13)
    # window closes before the CPA: value at the window end
    assert evaluate_running_max([p], [5.0, 2.0], 3.0) == pytest.approx(evaluate_process([p], [5.0, 2.0], 3.0), rel=1e-13)


def _random_points(seed, n=6):
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(n):
        A = rng.standard_normal((2, 2))
        pts.append(point(u=float(rng.uniform(0.5, 3)), xi=rng.uniform(-2, 2, 2), sigma=float(rng.uniform(-3, 3)),
                         tau=float(rng.exponential(3)), v=rng.normal(0, 1, 2), L=A @ A.T + 0.3 * np.eye(2)))
    return pts


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_running_max_monotone_and_dominant(seed, t1, t2):
    pts = _random_points(seed)
    x = [0.3, -0.2]
    lo, hi = sorted((t1, t2))
    assert evaluate_running_max(pts, x, lo) <= evaluate_running_max(pts, x, hi) * (1 + 1e-12)
    assert evaluate_process(pts, x, lo) <= evaluate_running_max(pts, x, lo) * (1 + 1e-12)


def test_running_max_matches_dense_grid():
    pts = _random_points(3)
    x = [0.1, 0.1]
    grid = np.linspace(0, 4, 40_001)
    dense = max(evaluate_process(pts, x, s) for s in grid[::10])
    assert evaluate_running_max(pts, x, 4.0) >= dense * (1 - 1e-12)


def test_render_panel_matches_pointwise():
    pts = SupportPoints.from_points(_random_points(5))
    sites = np.array([[0.0, 0.0], [1.0, -1.0]])
    times = np.linspace(0, 3, 7)
    got = render_panel(pts, sites, times)
    for i, x in enumerate(sites):
        for j, t in enumerate(times):
            assert got[i, j] == pytest.approx(evaluate_process(pts, x, t), rel=1e-12, abs=1e-300)


# support points

def test_table1_expected_count_without_padding():
    cfg = MsvConfig(beta=1 / 600, delta=1 / 120, u_min=1.0, box=((0, 0), (10, 10)), horizon=438_000,
                    attributes=table1_attributes(), birth_window=0.0, padding=None)
    assert expected_count(cfg) == pytest.approx(73_000, rel=1e-12)


def test_zero_intensity_gives_empty_panel():
    cfg = small_config(beta=1e-16)
    assert expected_count(cfg) < 1e-12
    assert len(sample_support_points(cfg)) == 0
    panel = simulate_panel(cfg, [[0.5, 0.5], [0.1, 0.9]], np.linspace(0, 1, 5))
    assert not panel.values.any()


def test_point_count_poisson_mean():
    base = MsvConfig(beta=1.0, delta=1.0, u_min=1.0, box=((0.0, 0.0), (5.0, 5.0)), horizon=2.0,
                     attributes=still(), birth_window=0.0, padding=None)
    assert expected_count(base) == pytest.approx(50.0)
    counts = [len(sample_support_points(replace(base, seed=s))) for s in range(1000)]
    assert abs(np.mean(counts) - 50.0) < 3 * math.sqrt(50 / 1000)


def test_support_points_deterministic():
    cfg = small_config(seed=7, attrs=table1_attributes())
    a, b = sample_support_points(cfg), sample_support_points(cfg)
    for name in ("magnitude", "birth_location", "birth_time", "lifetime", "velocity", "shape"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_support_points_in_window():
    cfg = small_config(seed=1)
    pts = sample_support_points(cfg)
    assert len(pts) > 0
    assert pts.birth_time.min() >= -cfg.window and pts.birth_time.max() <= cfg.horizon
    assert pts.magnitude.min() >= cfg.u_min


def test_single_cell_panel_matches_evaluate():
    cfg = small_config(seed=3)
    x, t = [0.5, 0.5], 0.4
    panel = simulate_panel(cfg, [x], [t])
    assert panel.values.shape == (1, 1)
    assert panel.values[0, 0] == pytest.approx(evaluate_process(sample_support_points(cfg), x, t), rel=1e-12)


def test_simulate_rejects_site_outside_box():
    with pytest.raises(DataError):
        simulate_panel(small_config(), [[2.0, 0.0]], [0.0])


def test_first_exceedance_matches_grid():
    pts = SupportPoints.from_points(_random_points(11, n=10))
    x = np.array([[0.0, 0.0]])
    y = 0.1
    t_hit = first_exceedance_times(pts, x, [y], horizon=6.0)[0]
    grid = np.linspace(0, 6, 60_001)
    vals = render_panel(pts, x, grid)[0]
    above = np.flatnonzero(vals > y)
    if above.size == 0:
        assert t_hit == np.inf
    else:
        assert abs(grid[above[0]] - t_hit) <= 1e-4 + 1e-9


def test_validity_floor_point_mass():
    assert validity_floor(small_config()) == pytest.approx(0.2 / (2 * math.pi))


def _cell(cfg, seed, x=(0.5, 0.5), t=0.5):
    return evaluate_process(sample_support_points(replace(cfg, seed=seed)), np.asarray(x), t)


def test_superposition_of_copies_matches_scaled_intensity():
    # the max of n copies is the process driven by n * beta
    n, reps = 4, 300
    cfg = small_config()
    big = replace(cfg, beta=n * cfg.beta)
    maxes = [max(_cell(cfg, 10_000 + n * r + k) for k in range(n)) for r in range(reps)]
    single = [_cell(big, 50_000 + r) for r in range(reps)]
    assert stats.ks_2samp(maxes, single).pvalue > 0.01


def test_max_stability():
    # (1/n) max of n copies has the law of one copy, above the truncation floor
    n, reps = 4, 300
    cfg = small_config()
    floor = validity_floor(cfg)
    scaled = [max(_cell(cfg, 70_000 + n * r + k) for k in range(n)) / n for r in range(reps)]
    single = [_cell(cfg, 90_000 + r) for r in range(reps)]
    assert stats.ks_2samp(np.maximum(scaled, floor), np.maximum(single, floor)).pvalue > 0.01
