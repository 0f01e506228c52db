import math

import numpy as np
import pytest
from scipy import stats

from perciso.cluster import origin_box_cluster
from perciso.errors import ParameterError
from perciso.percolation import Model, from_open_sites, sample_configuration
from perciso.spectral import build_walk_matrix, heat_kernel_exact
from perciso.walk import (WalkParams, averaged_lower_bound_experiment, exit_time_check,
                          fit_decay_exponent, fit_estimate, free_leakage, simulate_walks,
                          upper_bound_assembly)


def test_params_validation():
    with pytest.raises(ParameterError):
        WalkParams((2.0, 1.0), 10)
    with pytest.raises(ParameterError):
        WalkParams((1.0,), 0)
    with pytest.raises(ParameterError):
        WalkParams((1.0,), 5, mode="lazy")


def test_time_zero_is_at_origin(grid3):
    cfg = sample_configuration(Model.bond(2), 1, 1.0, 0)
    est = simulate_walks(cfg, grid3, WalkParams((0.0, 1.0), 500, seed=1))
    assert est.estimate[0] == 1.0 and est.stderr[0] == 0.0


def test_two_state_chain_relaxes(pair):
    cfg = from_open_sites([(0, 0), (1, 0)], 2)
    est = simulate_walks(cfg, pair, WalkParams((50.0, 100.0), 20000, seed=3))
    assert abs(est.estimate[-1] - 0.5) <= 3 * est.stderr[-1]


def test_matches_exact_kernel(grid3):
    cfg = sample_configuration(Model.bond(2), 1, 1.0, 0)
    est = simulate_walks(cfg, grid3, WalkParams((1.0,), 100000, seed=5))
    o = grid3.index_of((0, 0))
    exact = heat_kernel_exact(build_walk_matrix(grid3), [1.0]).values[0][o, o]
    assert abs(est.estimate[0] - exact) <= 4 * est.stderr[0]


@pytest.mark.parametrize("model,p,seed", [(Model.site2d(), 0.75, 2), (Model.bond(2), 0.6, 1),
                                          (Model.bond(3), 0.5, 0)])
def test_calibration_against_exact(model, p, seed):
    cfg = sample_configuration(model, 3, p, seed)
    c = origin_box_cluster(cfg, 3)
    times = (0.5, 2.0, 8.0, 30.0)
    est = simulate_walks(cfg, c, WalkParams(times, 40000, seed=11, config_seed=seed))
    o = c.index_of((0,) * c.d)
    exact = heat_kernel_exact(build_walk_matrix(c), times, rows=[o])
    for j, v in enumerate(exact.values):
        se = max(est.stderr[j], 1 / est.walkers)
        assert abs(est.estimate[j] - v[0, o]) <= 4 * se


def test_stationary_histogram_is_uniform():
    cfg = sample_configuration(Model.site2d(), 3, 0.8, 7)
    c = origin_box_cluster(cfg, 3)
    est = simulate_walks(cfg, c, WalkParams((2000.0,), 40000, seed=2, histogram=True))
    counts = est.histogram[0]
    assert counts.sum() == 40000
    assert stats.chisquare(counts).pvalue > 1e-4


def test_free_walk_variance():
    m, t = 210, 100.0
    cfg = sample_configuration(Model.bond(2), m, 1.0, 0)
    est = simulate_walks(cfg, None, WalkParams((t,), 10**6, seed=4, mode="free"))
    var = est.sq_disp[0] / est.walkers
    assert np.allclose(var, t / 2, rtol=0.05)
    assert est.leakage <= 1e-12


def test_free_walk_refuses_small_box():
    cfg = sample_configuration(Model.bond(2), 20, 1.0, 0)
    with pytest.raises(ParameterError):
        simulate_walks(cfg, None, WalkParams((100.0,), 10, mode="free"))
    assert free_leakage(20, 2, 0.0) == 0.0


def test_worker_count_does_not_change_results():
    cfg = sample_configuration(Model.bond(2), 8, 0.75, 0)
    c = origin_box_cluster(cfg, 8)
    params = WalkParams((1.0, 5.0, 20.0), 3 * 4096 + 17, seed=9)
    a = simulate_walks(cfg, c, params, workers=1)
    b = simulate_walks(cfg, c, params, workers=3)
    assert np.array_equal(a.returns, b.returns) and np.array_equal(a.sq_disp, b.sq_disp)


def test_exit_time_checks():
    cfg = sample_configuration(Model.bond(2), 10, 1.0, 0)
    rows = exit_time_check(cfg, 10, [0.5, 5.0, 1000.0], walkers=20000, seed=1)
    assert all(r["holds"] for r in rows)
    assert rows[0]["prob"] < 1e-10
    assert rows[-1]["bound"] > 1
    emp = [r["empirical"] for r in rows]
    assert emp == sorted(emp)


def test_fit_exact_power_law():
    t = np.geomspace(10, 1000, 9)
    assert fit_decay_exponent(t, 3.0 / t).slope == pytest.approx(-1.0, abs=1e-12)
    assert fit_decay_exponent(t, np.full(9, 0.2)).slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ParameterError):
        fit_decay_exponent(t[:4], 1 / t[:4])
    with pytest.raises(ParameterError):
        fit_decay_exponent(t, np.r_[0.0, 1 / t[1:]])


def test_fit_synthetic_noise():
    rng = np.random.default_rng(0)
    t = np.geomspace(10, 1000, 12)
    truth = 0.5 * t ** -1.5
    sigma = 0.03 * truth
    hits = 0
    for _ in range(200):
        f = fit_decay_exponent(t, truth + rng.normal(0, sigma), sigma=sigma)
        hits += abs(f.slope + 1.5) <= 2 * f.stderr
    assert hits >= 180


def test_fit_estimate_uses_standard_errors(grid3):
    cfg = sample_configuration(Model.bond(2), 1, 1.0, 0)
    est = simulate_walks(cfg, grid3, WalkParams((0.2, 0.4, 0.6, 0.8, 1.0), 20000, seed=1))
    f = fit_estimate(est)
    assert f.npoints == 5 and f.slope < 0


def test_bound_assembly():
    r = upper_bound_assembly(2, 1e4, 0.09, 1.0)
    assert r["n"] == pytest.approx(math.sqrt(1e4 * math.log(1e4) / 0.09))
    assert all(math.isfinite(v) for v in r["ratios"].values())
    assert r["far_ratio"] == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        upper_bound_assembly(2, 1e4, 0.1, 1.0)
    with pytest.raises(ParameterError):
        upper_bound_assembly(2, 1e4, 0.0, 1.0)


def test_bound_assembly_trend():
    rows = [upper_bound_assembly(2, t, 0.09, 1.0) for t in (1e4, 1e5, 1e6, 1e7, 1e8)]
    C = [r["C"] for r in rows]
    exit_ratio = [r["ratios"]["exit"] for r in rows]
    assert all(a >= b for a, b in zip(C, C[1:]))
    assert all(a > b for a, b in zip(exit_ratio, exit_ratio[1:]))
    assert exit_ratio[1] < 1
    assert all(r["ratios"]["box"] < 1 and r["ratios"]["poisson"] < 1e-100 for r in rows)


def test_averaged_lower_bound_full_lattice():
    times = np.geomspace(10, 500, 8)
    res = averaged_lower_bound_experiment(Model.site2d(), 1.0, 40, times, 2)
    c = origin_box_cluster(sample_configuration(Model.site2d(), 40, 1.0, 0), 40)
    o = c.index_of((0, 0))
    exact = heat_kernel_exact(build_walk_matrix(c), list(times), rows=[o])
    assert np.allclose(res["mean_return"], [v[0, o] for v in exact.values], rtol=1e-12, atol=0)
    assert res["fit_return"].slope == pytest.approx(-1.0, abs=0.05)


def test_averaged_lower_bound_needs_spanning():
    with pytest.raises(ParameterError):
        averaged_lower_bound_experiment(Model.bond(2), 0.0, 5, [1, 2, 3, 4, 5], 2, max_tries=5)
