import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from perciso.cluster import largest_cluster, open_vertices, origin_box_cluster
from perciso.errors import EmptyClusterError, ParameterError
from perciso.isoperimetry import iso_constant_exact
from perciso.percolation import Model, from_open_sites, sample_configuration
from perciso.spectral import (C_POISSON, build_walk_matrix, carne_varopoulos_check,
                              cheeger_inequality_check, estim_reflected_check, exit_bound,
                              exit_time_exact, full_box_gap, heat_kernel_eigen, heat_kernel_exact,
                              heat_kernel_expm, lower_bound_chain_check, spectral_gap,
                              step_distributions)

ESTIM_MARGIN_GRID3_T4 = 32.300982155107654


def cluster_of(model, p, seed, n):
    try:
        return origin_box_cluster(sample_configuration(model, n, p, seed), n)
    except EmptyClusterError:
        return None


clusters = st.builds(cluster_of, st.sampled_from([Model.site2d(), Model.bond(2), Model.bond(3)]),
                     st.sampled_from([0.6, 0.8]), st.integers(0, 10**6), st.sampled_from([2, 3]))


def test_walk_matrix_small_cases(grid3, pair):
    iso = origin_box_cluster(from_open_sites([(0, 0)], 1), 1)
    assert build_walk_matrix(iso).dense().tolist() == [[1.0]]
    assert build_walk_matrix(pair).dense().tolist() == [[0.75, 0.25], [0.25, 0.75]]
    P = build_walk_matrix(grid3).dense()
    assert np.allclose(P.sum(axis=0), 1) and np.allclose(P.sum(axis=1), 1)


def test_gap_closed_forms(grid3, pair):
    assert spectral_gap(build_walk_matrix(grid3)).gap == pytest.approx(0.25, abs=1e-14)
    assert full_box_gap(1, 2) == pytest.approx(0.25, abs=1e-15)
    assert spectral_gap(build_walk_matrix(pair)).gap == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("n,d", [(2, 2), (5, 2), (12, 2), (20, 2), (2, 3), (4, 3)])
def test_full_box_gap_formula(n, d):
    c = origin_box_cluster(sample_configuration(Model.bond(d), n, 1.0, 0), n)
    assert spectral_gap(build_walk_matrix(c)).gap == pytest.approx(full_box_gap(n, d), rel=1e-9)


def test_full_box_gap_limit():
    # lambda n^2 -> pi^2 / (8d) since the box side is 2n+1
    errs = [abs(full_box_gap(n, 2) * n * n / (math.pi**2 / 16) - 1) for n in (10, 20, 40, 80, 160)]
    assert all(a > b for a, b in zip(errs, errs[1:])) and errs[-1] < 0.01


def test_iterative_matches_dense():
    c = origin_box_cluster(sample_configuration(Model.site2d(), 12, 0.75, 3), 12)
    W = build_walk_matrix(c)
    dense, it = spectral_gap(W, "dense"), spectral_gap(W, "iterative")
    assert it.gap == pytest.approx(dense.gap, rel=1e-8)
    assert it.residual <= 1e-8


def test_gap_rejects_disconnected():
    g = open_vertices(from_open_sites([(0, 0), (2, 0)], 2), 2)
    with pytest.raises(ParameterError):
        spectral_gap(build_walk_matrix(g))


def test_kernel_examples(grid3):
    W = build_walk_matrix(grid3)
    tab = heat_kernel_exact(W, [0.0, 1.0, 1e6])
    assert np.array_equal(tab.values[0], np.eye(9))
    assert np.max(np.abs(tab.values[1] - heat_kernel_eigen(W, 1.0))) <= 1e-10
    assert np.max(np.abs(tab.values[1] - heat_kernel_expm(W, 1.0))) <= 1e-10
    assert np.max(np.abs(tab.values[2] - 1 / 9)) <= tab.error_bound
    with pytest.raises(ParameterError):
        heat_kernel_exact(W, [1.0], tol=0)


def test_selected_rows_match_full():
    c = largest_cluster(sample_configuration(Model.site2d(), 6, 0.75, 1), 6)
    W = build_walk_matrix(c)
    full = heat_kernel_exact(W, [3.0, 70.0])
    rows = heat_kernel_exact(W, [3.0, 70.0], rows=[0, 5])
    for a, b in zip(full.values, rows.values):
        assert np.max(np.abs(a[[0, 5]] - b)) <= 1e-11


def test_estim_reflected_golden(grid3):
    beta = iso_constant_exact(grid3, 4.0).beta_implied
    rows = estim_reflected_check(grid3, 1, [4.0], beta, 4.0)
    assert rows[0]["margin"] == pytest.approx(ESTIM_MARGIN_GRID3_T4, rel=1e-9)
    rows = estim_reflected_check(grid3, 1, [1.0, 2.0, 4.0, 8.0, 50.0, 400.0], beta, 4.0)
    lhs = [r["lhs"] for r in rows]
    assert all(a >= b for a, b in zip(lhs, lhs[1:])) and lhs[-1] < 1e-12


def test_carne_examples():
    cfg = sample_configuration(Model.bond(2), 3, 1.0, 0)
    c = origin_box_cluster(cfg, 3)
    W = build_walk_matrix(c, "free")
    dist = step_distributions(W, c.index_of((0, 0)), 2)
    assert dist[1][c.index_of((1, 0))] == 0.25 <= math.exp(-0.5)
    assert dist[2][c.index_of((2, 0))] == 0.0625 <= math.exp(-1)
    assert carne_varopoulos_check(cfg, 3)["violations"] == 0
    with pytest.raises(ParameterError):
        carne_varopoulos_check(cfg, 4)


def test_carne_random_configs():
    for seed in range(5):
        cfg = sample_configuration(Model.bond(2), 20, 0.7, seed)
        res = carne_varopoulos_check(cfg, 20, times=[1.0, 2.0])
        assert res["violations"] == 0 and res["worst_margin"] >= 1


def test_exit_exact():
    cfg = sample_configuration(Model.bond(2), 10, 1.0, 0)
    for r in exit_time_exact(cfg, 10, [1.0, 5.0, 200.0]):
        assert r["holds"] and 0 <= r["prob"] <= 1
    assert exit_bound(10, 2, 1.0) == pytest.approx(2 * 10 * math.exp(-25) + math.exp(-C_POISSON))


def test_chain_examples(grid3, pair):
    assert lower_bound_chain_check(grid3, 2.0)["holds"]
    res = lower_bound_chain_check(grid3, 2.0, ys=[grid3.index_of((0, 0))])
    assert res["semigroup_error"] <= 1e-12
    W = build_walk_matrix(pair)
    K = heat_kernel_exact(W, [3.0]).values[0]
    assert K[0, 0] == pytest.approx(K[1, 1], abs=1e-15)


def test_cheeger_inequality_examples(grid3, pair):
    r = cheeger_inequality_check(grid3)
    assert r["h"] == 0.25 and r["lambda"] == pytest.approx(0.25) and r["holds"]
    r = cheeger_inequality_check(pair)
    assert r["h"] == 0.25 and r["lambda"] == pytest.approx(0.5) and r["holds"]
    g = open_vertices(from_open_sites([(0, 0), (2, 0)], 2), 2)
    with pytest.raises(ParameterError):
        cheeger_inequality_check(g)


@given(clusters, st.floats(0.1, 50))
def test_kernel_properties(c, t):
    assume(c is not None and 2 <= c.size <= 400)
    W = build_walk_matrix(c)
    mu = np.linalg.eigvalsh(W.dense())
    assert mu.min() >= -1 - 1e-12 and abs(mu.max() - 1) <= 1e-12
    K = heat_kernel_exact(W, [t]).values[0]
    assert np.max(np.abs(K.sum(axis=1) - 1)) <= 1e-10
    assert K.min() >= -1e-12
    assert np.max(np.abs(K - K.T)) <= 1e-12
    assert np.max(np.abs(K - heat_kernel_eigen(W, t))) <= 1e-10


@given(clusters)
def test_return_probability_decreases(c):
    assume(c is not None and 2 <= c.size <= 400)
    W = build_walk_matrix(c)
    o = c.index_of((0,) * c.d)
    tab = heat_kernel_exact(W, [0.5, 1, 2, 4, 8, 16, 32, 64, 128], rows=[o])
    diag = [v[0, o] for v in tab.values]
    assert all(a >= b - 1e-13 for a, b in zip(diag, diag[1:]))


@given(clusters)
def test_cheeger_and_chain_hold(c):
    assume(c is not None and 2 <= c.size <= 20)
    assert cheeger_inequality_check(c)["holds"]
    assert lower_bound_chain_check(c, 3.0)["holds"]
