"""The inequality battery run by ``perciso verify`` on one configuration."""

from __future__ import annotations

import numpy as np

from .cluster import (SubsetMask, _connected_in, box_edge_boundary, edge_boundary, fill_complement,
                      open_part, origin_box_cluster)
from .errors import ContractError, EmptyClusterError
from .isoperimetry import epsilon_of_n, iso_constant_exact, nash_check, sandwich_check
from .percolation import Configuration
from .spectral import (build_walk_matrix, carne_varopoulos_check, cheeger_inequality_check,
                       exit_time_exact, heat_kernel_eigen, heat_kernel_exact, lower_bound_chain_check)

FILL_CAP = 14
ISO_EPS_SMALL_N = 4.0


def admissible_subsets(cluster):
    """Masks A with A and its complement in the cluster both nonempty and connected."""
    k = cluster.size
    for mask in range(1, (1 << k) - 1):
        bits = np.array([(mask >> i) & 1 for i in range(k)], dtype=bool)
        if _connected_in(cluster, bits) and _connected_in(cluster, ~bits):
            yield bits


def filling_identity_failures(cluster, cfg: Configuration, n: int) -> int:
    """Count admissible A for which the open part of the filled boundary differs from the cut."""
    bad = 0
    for bits in admissible_subsets(cluster):
        a = SubsetMask(cluster, bits)
        try:
            d = fill_complement(a, cfg, n)
        except ContractError:
            bad += 1
            continue
        if open_part(box_edge_boundary(d), cfg) != edge_boundary(a):
            bad += 1
    return bad


def _eps_for(n: int, d: int) -> float:
    return epsilon_of_n(n, d) if n >= 3 else ISO_EPS_SMALL_N


def run_battery(cfg: Configuration, n: int, k_max: int, exit_ns, exit_times) -> list:
    """Rows ``(check, value, holds, hard)``; only hard checks decide the exit status."""
    rows = []

    def add(check, value, holds, hard=True):
        rows.append({"check": check, "value": value, "holds": bool(holds), "hard": hard})

    try:
        c = origin_box_cluster(cfg, n)
    except EmptyClusterError:
        add("origin_open", 0, True, hard=False)
        return rows
    add("cluster_size", c.size, c.size <= (2 * n + 1) ** cfg.d)
    if c.size >= 2:
        eps = _eps_for(n, cfg.d)
        # exhaustive subset checks on C^n, or on C^1 when C^n is too large
        small, sn = (c, n) if c.size <= FILL_CAP else (origin_box_cluster(cfg, 1), 1)
        if 2 <= small.size <= FILL_CAP:
            se = _eps_for(sn, cfg.d)
            a = iso_constant_exact(small, se, "all")
            b = iso_constant_exact(small, se, "connected")
            add("iso_all_eq_connected", a.value, abs(a.value - b.value) <= 1e-12 * max(1, a.value))
            bad = filling_identity_failures(small, cfg, sn)
            add("filling_identity", bad, bad == 0)
            sw = sandwich_check(small, se, 0.5)
            add("sandwich", sw["J"], sw["holds"])
        if c.size <= 22:
            rep = iso_constant_exact(c, eps, "all")
            nc = nash_check(c, n, eps, rep.beta_implied, trials=50, rng=cfg.seed,
                            minimizer=rep.minimizing_set)
            add("nash", nc["worst_margin"], nc["holds"])
            ch = cheeger_inequality_check(c)
            add("cheeger_lower", ch["lambda"], ch["lower"])
            add("cheeger_upper", ch["lambda"], ch["upper"])
        W = build_walk_matrix(c)
        if c.size <= 400:
            K = heat_kernel_exact(W, [1.0]).values[0]
            diff = float(np.max(np.abs(K - heat_kernel_eigen(W, 1.0))))
            add("uniformization_vs_eigen", diff, diff <= 1e-10)
            add("kernel_row_sums", float(np.max(np.abs(K.sum(axis=1) - 1))),
                np.max(np.abs(K.sum(axis=1) - 1)) <= 1e-10)
            lb = lower_bound_chain_check(c, 2.0)
            add("lower_bound_chain", lb["semigroup_error"], lb["holds"])
    if cfg.m >= k_max:
        cv = carne_varopoulos_check(cfg, k_max, times=[1.0, 2.0])
        add("carne_varopoulos", cv["worst_margin"], cv["violations"] == 0)
    for en in exit_ns:
        if en <= cfg.m:
            try:
                res = exit_time_exact(cfg, en, exit_times)
            except EmptyClusterError:
                continue
            worst = min(r["bound"] - r["prob"] for r in res)
            add(f"exit_bound_n{en}", worst, all(r["holds"] for r in res))
    return rows
