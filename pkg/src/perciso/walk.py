"""Monte Carlo walks on clusters, exit times, decay fits and the four-term bound.

Walkers are Poissonized: between consecutive grid times each walker makes a
Poisson number of discrete steps, each picking one of the ``2d`` directions
uniformly and staying put when that edge is closed.  Random streams come from
``SeedSequence([experiment_seed, config_seed, chunk])`` over fixed-size walker
chunks, so results do not depend on how chunks are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from .cluster import ClusterGraph, origin_box_cluster
from .errors import EmptyClusterError, ParameterError
from .isoperimetry import epsilon_of_n
from .percolation import Configuration, Model, sample_configuration
from .spectral import C_POISSON, build_walk_matrix, exit_bound, exit_time_exact, heat_kernel_exact
from .stats import LineFit, weighted_line_fit

CHUNK = 4096
LEAK_TOL = 1e-12


@dataclass(frozen=True)
class WalkParams:
    times: tuple
    walkers: int
    seed: int = 0
    config_seed: int = 0
    mode: str = "reflected"
    histogram: bool = False

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ParameterError("times must be nonnegative and increasing")
        if self.walkers < 1:
            raise ParameterError("need at least one walker")
        if self.mode not in ("reflected", "free"):
            raise ParameterError(f"unknown mode {self.mode!r}")


@dataclass
class KernelEstimate:
    times: np.ndarray
    returns: np.ndarray              # walkers at the origin, per time
    walkers: int
    sq_disp: np.ndarray              # per time and axis, summed squared displacement
    histogram: np.ndarray | None = None
    leakage: float = 0.0

    @property
    def estimate(self) -> np.ndarray:
        return self.returns / self.walkers

    @property
    def stderr(self) -> np.ndarray:
        p = self.estimate
        return np.sqrt(p * (1 - p) / self.walkers)


@lru_cache(maxsize=1)
def _step_kernel():
    import numba

    @numba.njit(cache=True)
    def advance(pos, nbr, absorb, counts, dirs):
        off = 0
        for i in range(pos.shape[0]):
            p = pos[i]
            k = counts[i]
            for s in range(k):
                if absorb[p]:
                    break
                q = nbr[p, dirs[off + s]]
                if q >= 0:
                    p = q
            pos[i] = p
            off += k
        return pos

    return advance


def _run_chunk(nbr, absorb, origin, times, size, seed_key, points, hist):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed_key))))
    advance = _step_kernel()
    ndir = nbr.shape[1]
    pos = np.full(size, origin, dtype=np.int64)
    T, d = len(times), points.shape[1]
    ret = np.zeros(T, dtype=np.int64)
    sq = np.zeros((T, d))
    h = np.zeros((T, nbr.shape[0]), dtype=np.int64) if hist else None
    prev = 0.0
    for j, t in enumerate(times):
        counts = rng.poisson(t - prev, size=size).astype(np.int64)
        dirs = rng.integers(0, ndir, size=int(counts.sum()), dtype=np.int64)
        pos = advance(pos, nbr, absorb, counts, dirs)
        prev = t
        ret[j] = int((pos == origin).sum())
        sq[j] = ((points[pos] - points[origin]).astype(float) ** 2).sum(axis=0)
        if hist:
            h[j] = np.bincount(pos, minlength=nbr.shape[0])
    return ret, sq, h, (absorb[pos].sum() if absorb.any() else 0)


def _chunks(walkers: int):
    return [(c, min(CHUNK, walkers - c * CHUNK)) for c in range((walkers + CHUNK - 1) // CHUNK)]


def _simulate(cluster, origin, params: WalkParams, absorb=None, workers: int = 1):
    nbr = cluster.neighbor_table.astype(np.int64)
    absorb = np.zeros(cluster.size, dtype=bool) if absorb is None else absorb
    times = np.asarray(params.times, dtype=float)
    jobs = [(nbr, absorb, origin, times, size, (params.seed, params.config_seed, c),
             cluster.points, params.histogram) for c, size in _chunks(params.walkers)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, *zip(*jobs)))
    else:
        parts = [_run_chunk(*j) for j in jobs]
    ret = sum(p[0] for p in parts)
    sq = sum(p[1] for p in parts)
    hist = sum(p[2] for p in parts) if params.histogram else None
    return ret, sq, hist


def free_leakage(m: int, d: int, t_max: float) -> float:
    """Upper bound on the chance that the walk feels the edge of the stored box by ``t_max``."""
    if t_max <= 0:
        return 0.0
    return float(min(stats.poisson.sf(m - 1, t_max), exit_bound(m, d, t_max)))


def simulate_walks(cfg: Configuration, cluster: ClusterGraph | None, params: WalkParams,
                   workers: int = 1, leak_tol: float = LEAK_TOL) -> KernelEstimate:
    """Monte Carlo occupation statistics of walkers started at the origin.

    Reflected mode runs on ``cluster`` (default: C^m).  Free mode runs on the
    origin's cluster in the whole stored box and refuses time horizons at which
    the leakage bound exceeds ``leak_tol``.
    """
    leak = 0.0
    if params.mode == "free":
        leak = free_leakage(cfg.m, cfg.d, float(params.times[-1]))
        if leak > leak_tol:
            raise ParameterError(f"stored box too small: leakage bound {leak:.3g} > {leak_tol}")
        cluster = origin_box_cluster(cfg, cfg.m)
    elif cluster is None:
        cluster = origin_box_cluster(cfg, cfg.m)
    zero = (0,) * cluster.d
    if not cluster.contains_point(zero):
        raise ParameterError("origin not in cluster")
    origin = cluster.index_of(zero)
    ret, sq, hist = _simulate(cluster, origin, params, workers=workers)
    return KernelEstimate(np.asarray(params.times, dtype=float), ret, params.walkers, sq, hist, leak)


def exit_time_check(cfg: Configuration, n: int, times, walkers: int = 0, seed: int = 0) -> list:
    """Exit time from ``[-(n-1), n-1]^d`` against ``2t n^(d-1) exp(-n^2/4t) + exp(-ct)``.

    Always computes the exact absorbing-chain probability; with ``walkers > 0``
    a Monte Carlo frequency is added and checked within four standard errors.
    """
    exact = exit_time_exact(cfg, n, times)
    if walkers:
        cluster = origin_box_cluster(cfg, n)
        absorb = np.abs(cluster.points).max(axis=1) >= n
        origin = cluster.index_of((0,) * cluster.d)
        hit = _absorbed_counts(cluster, origin, absorb, times, walkers, seed, cfg.seed)
        for row, k in zip(exact, hit):
            p = k / walkers
            se = math.sqrt(max(p * (1 - p), 1.0 / walkers) / walkers)
            row.update({"empirical": p, "stderr": se,
                        "holds": row["holds"] and p <= row["bound"] + 4 * se})
    return exact


def _absorbed_counts(cluster, origin, absorb, times, walkers, seed, config_seed):
    nbr = cluster.neighbor_table.astype(np.int64)
    out = np.zeros(len(times), dtype=np.int64)
    advance = _step_kernel()
    for c, size in _chunks(walkers):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, config_seed, c])))
        pos = np.full(size, origin, dtype=np.int64)
        prev = 0.0
        for j, t in enumerate(times):
            counts = rng.poisson(t - prev, size=size).astype(np.int64)
            dirs = rng.integers(0, nbr.shape[1], size=int(counts.sum()), dtype=np.int64)
            pos = advance(pos, nbr, absorb, counts, dirs)
            prev = t
            out[j] += int(absorb[pos].sum())
    return out


@dataclass
class DecayFit:
    slope: float
    intercept: float
    stderr: float
    window: tuple
    npoints: int


def fit_decay_exponent(times, values, window=None, sigma=None) -> DecayFit:
    """Weighted least squares of log(value) on log(t) inside ``window``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = np.ones(len(t), dtype=bool) if window is None else (t >= window[0]) & (t <= window[1])
    sel &= t > 0
    if sel.sum() < 5:
        raise ParameterError("decay fit needs at least five grid points in the window")
    if np.any(v[sel] <= 0):
        raise ParameterError("nonpositive values inside the fit window")
    sig = None
    if sigma is not None:
        sig = np.asarray(sigma, dtype=float)[sel] / v[sel]
    fit: LineFit = weighted_line_fit(np.log(t[sel]), np.log(v[sel]), sig)
    return DecayFit(fit.slope, fit.intercept, fit.slope_stderr,
                    (float(t[sel].min()), float(t[sel].max())), int(sel.sum()))


def fit_estimate(est: KernelEstimate, window=None) -> DecayFit:
    return fit_decay_exponent(est.times, est.estimate, window, est.stderr)


def upper_bound_assembly(d: int, t: float, b: float, beta: float, eps: float | None = None,
                           c: float = C_POISSON) -> dict:
    """The four terms of the kernel bound at ``t`` with ``t log t = b n^2``.

    Each term is reported with its ratio to ``t^(-d/2)``; ``C`` is the largest ratio.
    """
    if not 0 < b < 1 / (4 * d + 2):
        raise ParameterError("b must lie strictly between 0 and 1/(4d+2)")
    if t <= math.e:
        raise ParameterError("t must exceed e")
    n = math.sqrt(t * math.log(t) / b)
    if eps is None:
        eps = epsilon_of_n(n, d)
    terms = {
        "box": n ** (-d),
        "nash": (4 * eps / beta**2) ** (eps / 2) * n ** (eps - d) * t ** (-eps / 2),
        "exit": 2 * t * n ** (d - 1) * math.exp(-n * n / (4 * t)),
        "poisson": math.exp(-c * t),
    }
    scale = t ** (d / 2)
    ratios = {k: v * scale for k, v in terms.items()}
    # far region: |x|^2 >= 2 d t log t makes the Gaussian term exactly t^(-d/2)
    far = math.exp(-2 * d * t * math.log(t) / (4 * t)) * scale
    return {"t": t, "n": n, "eps": eps, "b": b, "terms": terms, "ratios": ratios,
            "far_ratio": far, "C": max(ratios.values())}


def touches_all_faces(cluster: ClusterGraph, n: int) -> bool:
    pts = cluster.points
    return bool(np.all(pts.max(axis=0) == n) and np.all(pts.min(axis=0) == -n))


def exact_origin_rows(cluster: ClusterGraph, times) -> np.ndarray:
    """``p_t(0, .)`` for each t, reflected walk on ``cluster``."""
    W = build_walk_matrix(cluster)
    origin = cluster.index_of((0,) * cluster.d)
    tab = heat_kernel_exact(W, times, rows=[origin])
    return np.vstack([v[0] for v in tab.values]), origin


def averaged_lower_bound_experiment(model: Model, p: float, n: int, times, num_configs: int,
                                    seed0: int = 0, max_tries: int | None = None,
                                    window=None) -> dict:
    """Average exact return and sup probabilities over configurations whose C^n spans the box."""
    times = [float(t) for t in times]
    max_tries = max_tries or 20 * num_configs
    ret, sup, used = [], [], []
    seed = seed0
    while len(used) < num_configs and seed - seed0 < max_tries:
        cfg = sample_configuration(model, n, p, seed)
        seed += 1
        try:
            c = origin_box_cluster(cfg, n)
        except EmptyClusterError:
            continue
        if not touches_all_faces(c, n):
            continue
        rows, o = exact_origin_rows(c, times)
        ret.append(rows[:, o])
        sup.append(rows.max(axis=1))
        used.append(cfg.seed)
    if not used:
        raise ParameterError("no configuration satisfied the spanning condition")
    ret, sup = np.array(ret), np.array(sup)
    mean_ret, mean_sup = ret.mean(axis=0), sup.mean(axis=0)
    se_ret = ret.std(axis=0, ddof=1) / math.sqrt(len(used)) if len(used) > 1 else None
    out = {"times": np.array(times), "mean_return": mean_ret, "mean_sup": mean_sup,
           "configs": used, "per_config_return": ret, "per_config_sup": sup}
    if len(times) >= 5:
        out["fit_return"] = fit_decay_exponent(times, mean_ret, window)
        out["fit_sup"] = fit_decay_exponent(times, mean_sup, window)
    return out
