"""Walk matrices, spectral gaps and exact heat kernels on finite clusters.

The discrete-time walk picks one of the ``2d`` lattice directions uniformly
and moves if the edge is open (stays otherwise).  The continuous-time walk
jumps at rate one, so its kernel is ``exp(t (P - I))``, evaluated here by
uniformization (a Poisson mixture of powers of ``P``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats
from scipy.special import gammaln

from .cluster import ClusterGraph, origin_box_cluster
from .errors import EmptyClusterError, NumericalError, ParameterError
from .percolation import Configuration

DENSE_LIMIT = 3000
KERNEL_TOL = 1e-12
EIG_RESIDUAL = 1e-8
SLACK = 1e-9
C_POISSON = math.log(4) - 1


@dataclass
class WalkMatrix:
    host: ClusterGraph
    mode: str
    P: sp.csr_matrix

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def dense(self) -> np.ndarray:
        return self.P.toarray()


def build_walk_matrix(cluster: ClusterGraph, mode: str = "reflected") -> WalkMatrix:
    """``P(x, y) = 1/(2d)`` per open edge inside the cluster, holding on the diagonal.

    ``mode="free"`` builds the same matrix; it is meant for clusters computed on a
    box large enough that the walk cannot reach its edge within the time horizon.
    """
    if mode not in ("reflected", "free"):
        raise ParameterError(f"unknown walk mode {mode!r}")
    k, d = cluster.size, cluster.d
    if k == 0:
        raise ParameterError("empty cluster")
    w = 1.0 / (2 * d)
    u, v = cluster.edges[:, 0], cluster.edges[:, 1]
    rows = np.concatenate([u, v, np.arange(k)])
    cols = np.concatenate([v, u, np.arange(k)])
    vals = np.concatenate([np.full(2 * len(u), w), 1.0 - cluster.degree * w])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(k, k))
    return WalkMatrix(cluster, mode, P)


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray          # of P, descending (all of them for dense, a few otherwise)
    gap: float
    method: str
    residual: float = 0.0


def _require_connected(W: WalkMatrix):
    if not W.host.is_connected():
        raise ParameterError("spectral gap needs a connected cluster")


def spectral_gap(W: WalkMatrix, method: str = "auto") -> SpectralReport:
    """``lambda = 1 - mu_2`` with ``mu_2`` the second largest eigenvalue of ``P``."""
    _require_connected(W)
    k = W.size
    if k == 1:
        return SpectralReport(np.array([1.0]), math.inf, "dense")
    if method == "auto":
        method = "dense" if k <= DENSE_LIMIT else "iterative"
    if method == "dense":
        mu = np.linalg.eigvalsh(W.dense())[::-1]
        return SpectralReport(mu, float(1.0 - mu[1]), "dense")
    if method != "iterative":
        raise ParameterError(f"unknown method {method!r}")
    vals, vecs, res = _smallest_laplacian(W, 3 if k > 3 else 2)
    mu = 1.0 - vals
    return SpectralReport(mu, float(vals[1]), "iterative", res)


def _smallest_laplacian(W: WalkMatrix, nev: int):
    """Smallest eigenpairs of ``I - P`` by shift-invert Lanczos, residual checked."""
    L = (sp.identity(W.size, format="csc") - W.P.tocsc())
    v0 = np.random.default_rng(0).standard_normal(W.size)
    try:
        vals, vecs = spla.eigsh(L, k=nev, sigma=-1e-3, which="LM", v0=v0, tol=1e-12, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        raise NumericalError("eigensolver did not converge", residual=math.inf) from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    res = float(np.max(np.linalg.norm(L @ vecs - vecs * vals, axis=0)))
    if res > EIG_RESIDUAL:
        raise NumericalError(f"eigen residual {res:.3g} above {EIG_RESIDUAL}", residual=res)
    return vals, vecs, res


def second_eigenvector(W: WalkMatrix) -> np.ndarray:
    """Eigenvector of the second largest eigenvalue of ``P``."""
    if W.size <= 2:
        return np.arange(W.size, dtype=float)
    if W.size <= DENSE_LIMIT:
        _, vecs = np.linalg.eigh(W.dense())
        return vecs[:, -2]
    _, vecs, _ = _smallest_laplacian(W, 2)
    return vecs[:, 1]


# -- heat kernels -------------------------------------------------------------------

@dataclass
class KernelTable:
    times: list
    values: list                     # per time: full matrix, or array of selected rows
    error_bound: float
    rows: np.ndarray | None = None   # None means full matrices
    method: str = "uniformization"

    def at(self, t) -> np.ndarray:
        return self.values[self.times.index(t)]


def _poisson_window(t: float, tol: float):
    """(lo, hi, weights) with Poisson(t) mass outside [lo, hi] below tol."""
    if t == 0:
        return 0, 0, np.ones(1)
    k = np.arange(0, int(t + 14 * math.sqrt(t) + 60) + 1)
    w = np.exp(-t + k * math.log(t) - gammaln(k + 1))
    left = np.cumsum(w)
    right = np.cumsum(w[::-1])[::-1]
    lo = int(np.searchsorted(left, tol / 2, side="right"))
    hi = int(len(w) - 1 - np.searchsorted(right[::-1], tol / 2, side="right"))
    hi = max(hi, lo)
    return lo, hi, w[lo:hi + 1]


def _uniformize_rows(P, start: np.ndarray, t: float, tol: float) -> np.ndarray:
    """``start @ exp(t (P - I))`` for a block of row vectors (P symmetric or not)."""
    lo, hi, w = _poisson_window(t, tol)
    PT = P.T.tocsr() if sp.issparse(P) else P.T
    cur = np.array(start, dtype=float).T.copy()      # columns are the row vectors
    out = np.zeros_like(cur)
    for k in range(hi + 1):
        if k >= lo:
            out += w[k - lo] * cur
        if k < hi:
            cur = PT @ cur
    return out.T


def _uniformize_rows_multi(P, start: np.ndarray, times, tol: float) -> list:
    """Same as ``_uniformize_rows`` for several times, sharing one power sequence."""
    wins = [_poisson_window(t, tol) for t in times]
    kmax = max(hi for _, hi, _ in wins)
    PT = P.T.tocsr() if sp.issparse(P) else P.T
    cur = np.array(start, dtype=float).T.copy()
    outs = [np.zeros_like(cur) for _ in times]
    for k in range(kmax + 1):
        for out, (lo, hi, w) in zip(outs, wins):
            if lo <= k <= hi:
                out += w[k - lo] * cur
        if k < kmax:
            cur = PT @ cur
    return [o.T for o in outs]


_SQUARING_T = 64.0


def _dense_expm(P: np.ndarray, t: float, tol: float) -> np.ndarray:
    """exp(t(P - I)) by uniformization, with scaling and squaring for large t."""
    j = max(0, math.ceil(math.log2(t / _SQUARING_T))) if t > _SQUARING_T else 0
    s = t / 2**j
    base = _uniformize_rows(P, np.eye(P.shape[0]), s, max(tol / 2**j, 1e-300))
    stochastic = np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-14)
    for _ in range(j):
        base = base @ base
        if stochastic:
            # squaring doubles any row-sum defect; the exact kernel is stochastic
            base /= base.sum(axis=1, keepdims=True)
    return base


def heat_kernel_exact(W: WalkMatrix, times, tol: float = KERNEL_TOL, rows=None) -> KernelTable:
    """Exact ``exp(t(P - I))`` at each time: full matrices, or only the given rows."""
    if not tol > 0:
        raise ParameterError("tol must be positive")
    times = [float(t) for t in times]
    if any(t < 0 for t in times):
        raise ParameterError("times must be nonnegative")
    if rows is None:
        if W.size > DENSE_LIMIT:
            raise ParameterError(f"full kernel needs <= {DENSE_LIMIT} vertices; pass rows")
        P = W.dense()
        vals = [_dense_expm(P, t, tol) for t in times]
        return KernelTable(times, vals, tol, None)
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    start = np.zeros((len(rows), W.size))
    start[np.arange(len(rows)), rows] = 1.0
    vals = _uniformize_rows_multi(W.P, start, times, tol)
    return KernelTable(times, vals, tol, rows)


def heat_kernel_eigen(W: WalkMatrix, t: float) -> np.ndarray:
    """Reference kernel via the symmetric eigendecomposition of ``P``."""
    mu, V = np.linalg.eigh(W.dense())
    return (V * np.exp(t * (mu - 1.0))) @ V.T


def heat_kernel_expm(W: WalkMatrix, t: float) -> np.ndarray:
    """Reference kernel via scipy's Pade matrix exponential."""
    return sla.expm(t * (W.dense() - np.eye(W.size)))


# -- inequality checks ------------------------------------------------------------

def estim_reflected_rhs(eps: float, beta: float, n: int, d: int, t: float) -> float:
    return (4 * eps / beta**2) ** (eps / 2) * n ** (eps - d) * t ** (-eps / 2)


def estim_reflected_check(cluster: ClusterGraph, n: int, times, beta: float, eps: float) -> list:
    """Both sides of the uniform-mixing kernel bound, per t (reported, not asserted)."""
    if not beta > 0:
        raise ParameterError("beta must be positive")
    W = build_walk_matrix(cluster)
    table = heat_kernel_exact(W, times)
    out = []
    for t, K in zip(table.times, table.values):
        lhs = float(np.max(np.abs(1.0 / cluster.size - K)))
        rhs = estim_reflected_rhs(eps, beta, n, cluster.d, t) if t > 0 else math.inf
        out.append({"t": t, "lhs": lhs, "rhs": rhs, "margin": rhs / lhs if lhs > 0 else math.inf})
    return out


def step_distributions(W: WalkMatrix, origin: int, k_max: int) -> np.ndarray:
    """Rows ``P^k(origin, .)`` for k = 0..k_max."""
    out = np.zeros((k_max + 1, W.size))
    cur = np.zeros(W.size)
    cur[origin] = 1.0
    PT = W.P.T.tocsr()
    for k in range(k_max + 1):
        out[k] = cur
        cur = PT @ cur
    return out


def carne_varopoulos_check(cfg: Configuration, k_max: int, times=None, rtol: float = 1e-12) -> dict:
    """Check ``P_0[Y_k = x] <= exp(-|x|^2 / 2k)`` for all k <= k_max and all x.

    The walk is run on the origin's cluster inside ``[-k_max, k_max]^d``; a walk of
    at most ``k_max`` steps never sees the cut, so the distributions are exact.
    At each continuous time in ``times`` (those whose Poisson mass beyond k_max
    is negligible) ``p_t(0, x) <= exp(-|x|^2/4t) + exp(-(log 4 - 1) t)`` is also checked.
    """
    if cfg.m < k_max:
        raise ParameterError(f"stored half-side {cfg.m} < k_max {k_max}")
    cluster = origin_box_cluster(cfg, k_max)
    W = build_walk_matrix(cluster, "free")
    origin = cluster.index_of((0,) * cluster.d)
    dist = step_distributions(W, origin, k_max)
    r2 = (cluster.points.astype(float) ** 2).sum(axis=1)
    worst, violations = math.inf, 0
    for k in range(1, k_max + 1):
        bound = np.exp(-r2 / (2 * k))
        viol = dist[k] > bound * (1 + rtol)
        violations += int(viol.sum())
        pos = dist[k] > 0
        if pos.any():
            worst = min(worst, float(np.min(bound[pos] / dist[k][pos])))
    cont = []
    for t in times or ():
        tail = float(stats.poisson.sf(k_max, t))
        if tail > 1e-10:
            continue
        # truncated Poisson mixture plus the neglected mass is an upper bound on p_t
        pt = stats.poisson.pmf(np.arange(k_max + 1), t) @ dist + tail
        bound = np.exp(-r2 / (4 * t)) + math.exp(-C_POISSON * t)
        cont.append({"t": t, "violations": int((pt > bound * (1 + rtol)).sum()),
                     "worst_margin": float(np.min(bound / pt))})
        violations += cont[-1]["violations"]
    return {"k_max": k_max, "violations": violations, "worst_margin": worst,
            "continuous": cont, "cluster_size": cluster.size}


def exit_bound(n: int, d: int, t: float) -> float:
    return 2 * t * n ** (d - 1) * math.exp(-n * n / (4 * t)) + math.exp(-C_POISSON * t)


def exit_time_exact(cfg: Configuration, n: int, times, tol: float = KERNEL_TOL) -> list:
    """Exact ``P_0[tau <= t]`` for the exit time from ``[-(n-1), n-1]^d``.

    Vertices of the origin's cluster in ``[-n, n]^d`` at sup-distance n absorb; the
    others keep their full holding probability.
    """
    if n < 1 or cfg.m < n:
        raise ParameterError("need 1 <= n <= m")
    cluster = origin_box_cluster(cfg, n)
    W = build_walk_matrix(cluster, "free")
    inner = np.flatnonzero(np.abs(cluster.points).max(axis=1) <= n - 1)
    Q = W.P[inner][:, inner]
    origin = int(np.searchsorted(inner, cluster.index_of((0,) * cluster.d)))
    start = np.zeros((1, len(inner)))
    start[0, origin] = 1.0
    out = []
    for t in times:
        survive = float(_uniformize_rows(Q, start, float(t), tol).sum())
        prob = max(0.0, 1.0 - survive)
        bound = exit_bound(n, cluster.d, t)
        out.append({"n": n, "t": float(t), "prob": prob, "bound": bound,
                    "holds": prob <= bound * (1 + SLACK) + tol})
    return out


def lower_bound_chain_check(cluster: ClusterGraph, t: float, ys=None, origin: int | None = None,
                            rtol: float = SLACK) -> dict:
    """Semigroup identity at t/2 and the Cauchy-Schwarz step ``p_t(0,y) <= sqrt(p_t(0,0) p_t(y,y))``."""
    W = build_walk_matrix(cluster)
    if origin is None:
        origin = cluster.index_of((0,) * cluster.d) if cluster.contains_point((0,) * cluster.d) else 0
    ys = np.arange(cluster.size) if ys is None else np.asarray(ys, dtype=np.int64)
    rows = np.unique(np.concatenate([[origin], ys]))
    tab = heat_kernel_exact(W, [t / 2, t], rows=rows)
    half, full = tab.values
    pos = {int(r): i for i, r in enumerate(rows)}
    o = pos[origin]
    semigroup_err, cs_ok = 0.0, True
    for y in ys:
        i = pos[int(y)]
        conv = float(half[o] @ half[i])
        semigroup_err = max(semigroup_err, abs(conv - full[o, y]))
        if full[o, y] > math.sqrt(full[o, origin] * full[i, y]) * (1 + rtol) + 1e-15:
            cs_ok = False
    ok = cs_ok and semigroup_err <= 1e-10
    return {"holds": ok, "semigroup_error": semigroup_err, "cauchy_schwarz": cs_ok}


def cheeger_inequality_check(cluster: ClusterGraph, rtol: float = SLACK) -> dict:
    """``h^2/2 <= lambda <= 2h`` with conductance ``h = II_inf / (2d)``."""
    from .isoperimetry import cheeger_constant

    if cluster.size < 2:
        raise ParameterError("Cheeger check needs at least two vertices")
    W = build_walk_matrix(cluster)
    lam = spectral_gap(W).gap
    h = cheeger_constant(cluster, "exact").value / (2 * cluster.d)
    lower = lam >= h * h / 2 * (1 - rtol)
    upper = lam <= 2 * h * (1 + rtol)
    return {"h": h, "lambda": lam, "lower": bool(lower), "upper": bool(upper),
            "holds": bool(lower and upper)}


def full_box_gap(n: int, d: int) -> float:
    """Closed form ``(1/d)(1 - cos(pi/(2n+1)))`` for the whole box ``[-n, n]^d``."""
    return (1.0 - math.cos(math.pi / (2 * n + 1))) / d
