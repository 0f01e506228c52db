"""End-to-end acceptance checks, one test per criterion (some split in two).

Each test records a one-line verdict in ``RESULTS``; conftest prints them in the
terminal summary so a plain ``pytest -v`` run ends with the full PASS/FAIL list.
"""

import math
import random
import warnings

import numpy as np
import pytest

from oracles import brute_good_box
from perciso.battery import filling_identity_failures
from perciso.cli import run
from perciso.cluster import components, origin_box_cluster, star_connectivity_exhaustive
from perciso.errors import EmptyClusterError
from perciso.isoperimetry import (cheeger_tail_experiment, epsilon_of_n, iso_constant_exact,
                                  nash_check)
from perciso.percolation import Model, sample_configuration
from perciso.renorm import BlockSpec, good_box, good_box_probability_experiment
from perciso.spectral import (build_walk_matrix, carne_varopoulos_check, cheeger_inequality_check,
                              exit_time_exact, lower_bound_chain_check, spectral_gap)
from perciso.channels import channel_scaling_experiment
from perciso.walk import averaged_lower_bound_experiment

from conftest import DEFAULT_CONFIG, RESULTS

FLAG_KEYS = ("has_edge", "unique_big_cluster", "long_paths_meet_K", "K_crossing_all_subboxes")


def verdict(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_c01_exact_oracle_equivalence():
    n = 3
    eps = epsilon_of_n(n, 2)
    clusters = mismatches = fill_bad = 0
    for model in (Model.site2d(), Model.bond(2)):
        for seed in range(50):
            cfg = sample_configuration(model, n, 0.55, seed)
            for c in components(cfg, n):
                if not 2 <= c.size <= 14:
                    continue
                clusters += 1
                a = iso_constant_exact(c, eps, "all").value
                b = iso_constant_exact(c, eps, "connected").value
                mismatches += not math.isclose(a, b, rel_tol=1e-12)
                fill_bad += filling_identity_failures(c, cfg, n)
    verdict("C1 iso all==connected, filling identity", clusters > 100 and mismatches == fill_bad == 0,
            f"{clusters} clusters, {mismatches} iso mismatches, {fill_bad} filling failures")


def test_c02_star_connectivity():
    res = [star_connectivity_exhaustive(s) for s in ((4, 4), (3, 3, 3))]
    verdict("C2 *-connected box boundaries", all(r["violations"] == 0 for r in res),
            ", ".join(f"{r['shape']}: {r['admissible']} sets, {r['violations']} bad" for r in res))


def test_c03_carne_varopoulos_and_exit():
    cv_viol = exit_fail = 0
    configs = [sample_configuration(Model.bond(2), 20, p, s) for p in (0.6, 0.8) for s in range(50)]
    for cfg in configs:
        cv_viol += carne_varopoulos_check(cfg, 20)["violations"]
        for n in (6, 8, 10):
            exit_fail += sum(not r["holds"] for r in exit_time_exact(cfg, n, [1, 2, 5, 10]))
    verdict("C3 Carne-Varopoulos and exit bound", cv_viol == 0 and exit_fail == 0,
            f"{len(configs)} configs, {cv_viol} step violations, {exit_fail} exit failures")


def gap_n2(model, p, n, seed):
    try:
        c = origin_box_cluster(sample_configuration(model, n, p, seed), n)
    except EmptyClusterError:
        return None
    if c.size < 2:
        return None
    return spectral_gap(build_walk_matrix(c)).gap * n * n


@pytest.mark.slow
def test_c04_gap_scaling():
    details, ok = [], True
    for model, p in ((Model.site2d(), 0.7), (Model.bond(2), 0.6)):
        med = {}
        lows = []
        for n in (8, 16, 32, 64):
            vals = [v for v in (gap_n2(model, p, n, s) for s in range(20)) if v is not None]
            med[n] = float(np.median(vals))
            lows.append(min(vals))
        spread = max(med.values()) / min(med.values())
        ok &= min(lows) >= 0.05 and spread < 4
        details.append(f"{model} p={p}: min {min(lows):.3f}, median spread x{spread:.2f}")
    verdict("C4 gap lambda n^2 bounded below", ok, "; ".join(details))


def test_c04_full_box_constant():
    d, n = 2, 32
    c = origin_box_cluster(sample_configuration(Model.bond(d), n, 1.0, 0), n)
    val = spectral_gap(build_walk_matrix(c)).gap * n * n
    target = math.pi ** 2 / (4 * d)
    rel = abs(val / target - 1)
    verdict("C4 p=1 lambda n^2 vs pi^2/(4d)", rel <= 0.05,
            f"n={n}: {val:.4f} vs {target:.4f} (rel err {rel:.3f})")


@pytest.mark.slow
def test_c05_heat_kernel_decay():
    t2 = np.geomspace(10, 1000, 12)
    r2 = averaged_lower_bound_experiment(Model.site2d(), 0.7, 40, t2, 50)
    n3 = 12
    t3 = np.geomspace(10, 0.625 * n3 * n3, 8)
    r3 = averaged_lower_bound_experiment(Model.bond(3), 0.5, n3, t3, 50)
    s2, s3 = r2["fit_sup"].slope, r3["fit_sup"].slope
    l2, l3 = r2["fit_return"].slope, r3["fit_return"].slope
    ok = (-1.25 <= s2 <= -0.75 and -1.9 <= s3 <= -1.1 and l2 >= -1.2 and l3 >= -1.7)
    verdict("C5 heat kernel decay exponents", ok,
            f"d=2 sup {s2:.3f}, d=3 sup {s3:.3f}, averaged return d=2 {l2:.3f}, d=3 {l3:.3f}")


def test_c06_nash(corpus):
    bad, worst = [], float("inf")
    for cfg, c in corpus:
        rep = iso_constant_exact(c, 4.0)
        res = nash_check(c, 2, 4.0, rep.beta_implied, trials=50, rng=cfg.seed)
        worst = min(worst, res["worst_margin"])
        if not res["holds"]:
            bad.append(f"{cfg.model} seed {cfg.seed} size {c.size}")
    verdict("C6 Nash inequality with exact beta", not bad,
            f"{len(corpus)} clusters, worst margin {worst:.4f}, failing: {bad or 'none'}")


def test_c06_cheeger_and_chain(corpus):
    cheeger_bad = chain_bad = 0
    for cfg, c in corpus:
        cheeger_bad += not cheeger_inequality_check(c)["holds"]
        chain_bad += not all(lower_bound_chain_check(c, t)["holds"] for t in (0.5, 3.0, 20.0))
    verdict("C6 Cheeger inequalities and lower-bound chain", cheeger_bad == chain_bad == 0,
            f"{len(corpus)} clusters, failures cheeger {cheeger_bad}, chain {chain_bad}")


@pytest.mark.slow
def test_c07_kesten_channels():
    sizes = (16, 32, 64)
    sup = channel_scaling_experiment(0.8, sizes, range(100))["summary"]
    mins = [sup[n]["min"] for n in sizes]
    means = [sup[n]["mean"] for n in sizes]
    stable = max(means) / min(means) - 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        zeros = channel_scaling_experiment(0.3, [64], range(100))["summary"][64]["zero_fraction"]
    ok = min(mins) >= 0.1 and stable <= 0.2 and zeros >= 0.95
    verdict("C7 Kesten channels", ok,
            f"min N/n {min(mins):.3f}, means {', '.join(f'{m:.3f}' for m in means)} "
            f"(spread {stable:.1%}), zero fraction at p=0.3 {zeros:.2f}")


@pytest.fixture(scope="module")
def good_box_frequencies():
    return good_box_probability_experiment([0.7, 0.4], [4, 8, 16], range(500))["summary"]


@pytest.mark.slow
def test_c08_good_box_monotone_and_subcritical(good_box_frequencies):
    s = good_box_frequencies
    Ns = (4, 8, 16)
    mono = all(s[(0.7, b)]["frequency"] >= s[(0.7, a)]["frequency"]
               or s[(0.7, b)]["ci"][1] >= s[(0.7, a)]["ci"][0] for a, b in zip(Ns, Ns[1:]))
    low = s[(0.4, 16)]["frequency"]
    freqs = ", ".join(f"N={N} {s[(0.7, N)]['frequency']:.3f}" for N in Ns)
    verdict("C8 good-box frequency monotone, small at p=0.4", mono and low < 0.1,
            f"p=0.7: {freqs}; "
            f"p=0.4 N=16: {low:.3f}")


@pytest.mark.slow
def test_c08_good_box_supercritical_level(good_box_frequencies):
    f = good_box_frequencies[(0.7, 16)]["frequency"]
    verdict("C8 good-box frequency > 0.9 at p=0.7, N=16", f > 0.9, f"frequency {f:.3f}")


@pytest.mark.slow
def test_c08_good_box_brute_force():
    rng = random.Random(8)
    bad = 0
    for _ in range(1000):
        N = rng.randint(2, 6)
        model = rng.choice([Model.site2d(), Model.bond(2)])
        p = rng.choice([0.5, 0.7, 0.85, 0.95, 1.0])
        idx = (rng.randint(-1, 1), rng.randint(-1, 1))
        cfg = sample_configuration(model, 3 * N + 2 + (5 * N) // 4, p, rng.randrange(10**6))
        rep = good_box(cfg, BlockSpec(N, idx))
        bad += {k: getattr(rep, k) for k in FLAG_KEYS} != brute_good_box(cfg, N, idx)
    verdict("C8 good_box vs brute force", bad == 0, f"1000 blocks, {bad} disagreements")


@pytest.mark.slow
def test_c09_cheeger_tail():
    ns = (8, 12, 16)
    s = cheeger_tail_experiment(Model.site2d(), 0.8, ns, 0.05, range(200))["summary"]
    f = [s[n]["frequency"] for n in ns]
    verdict("C9 Cheeger tail frequency nonincreasing", all(a >= b for a, b in zip(f, f[1:])),
            ", ".join(f"n={n} {x:.3f}" for n, x in zip(ns, f)))


@pytest.mark.slow
def test_c10_verify_determinism(tmp_path):
    outs = []
    for tag, workers in (("a", 1), ("b", 1), ("c", 8)):
        code = run(["verify", "--config", DEFAULT_CONFIG, "--out", str(tmp_path / tag),
                    "--workers", str(workers)])
        outs.append((code, (tmp_path / tag / "verify.csv").read_bytes()))
    same = len({b for _, b in outs}) == 1
    verdict("C10 verify byte-identical across runs and workers", same and outs[0][0] == 0,
            f"exit codes {[c for c, _ in outs]}, {len(outs[0][1])} bytes, identical={same}")
