"""Isoperimetric and Cheeger constants of finite clusters, the Nash check, the Cheeger tail.

Boundaries count unordered open edges.  For a vertex set ``A`` of a cluster
with ``N`` vertices the quotient is ``#cut(A) / (#A)**((eps-1)/eps)``; the
Cheeger constant is the ``eps = inf`` case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterGraph, SubsetMask, origin_box_cluster
from .errors import CapExceededError, EmptyClusterError, ParameterError
from .percolation import Model, sample_configuration
from .stats import wilson_interval

ALL_SUBSETS_CAP = 22
CONNECTED_CAP = 40
MAX_ENUMERATED = 20_000_000
_CHUNK = 1 << 20


def epsilon_of_n(n: int, d: int) -> float:
    """``d + 2d log log n / log n`` (natural logarithms)."""
    if n < 3:
        raise ParameterError("epsilon_of_n needs n >= 3 so that log log n > 0")
    ln = math.log(n)
    return d + 2 * d * math.log(ln) / ln


def _gamma(eps: float) -> float:
    return 1.0 if math.isinf(eps) else (eps - 1.0) / eps


def _box_half_side(cluster: ClusterGraph) -> int:
    return (cluster.box.shape[0] - 1) // 2


@dataclass
class IsoReport:
    value: float
    minimizing_set: SubsetMask
    method: str
    eps: float
    alpha: float
    n: int
    degenerate: bool = False

    @property
    def beta_implied(self) -> float:
        if self.degenerate:
            return math.inf
        d = self.minimizing_set.host.d
        return self.value * self.n ** (1 - (0.0 if math.isinf(self.eps) else d / self.eps))

    @property
    def is_upper_bound(self) -> bool:
        return self.method == "sweep"


def _size_limit(total: int, alpha: float) -> int:
    if not 0 < alpha <= 0.5:
        raise ParameterError("alpha must lie in (0, 1/2]")
    return int(math.floor((1 - alpha) * total + 1e-9))


def _best(cand, current):
    """Lexicographic (value, size, mask) minimum."""
    if current is None or cand < current:
        return cand
    return current


# -- exhaustive over all subsets ------------------------------------------------

def _scan_all_subsets(cluster: ClusterGraph, score, lo_size: int, hi_size: int):
    """Minimise ``score(cut, size)`` over all masks with ``lo_size <= size <= hi_size``."""
    k = cluster.size
    u = cluster.edges[:, 0].astype(np.int64)
    v = cluster.edges[:, 1].astype(np.int64)
    best = None
    total = 1 << k
    for start in range(0, total, _CHUNK):
        masks = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        size = np.bitwise_count(masks).astype(np.int64)
        keep = (size >= lo_size) & (size <= hi_size)
        if not keep.any():
            continue
        masks, size = masks[keep], size[keep]
        cut = np.zeros(len(masks), dtype=np.int64)
        for a, b in zip(u, v):
            cut += ((masks >> a) ^ (masks >> b)) & 1
        val = score(cut, size)
        order = np.lexsort((masks, size, val))
        i = order[0]
        best = _best((float(val[i]), int(size[i]), int(masks[i])), best)
    return best


# -- connected subsets -------------------------------------------------------------

def _neighbor_masks(cluster: ClusterGraph) -> list:
    nb = [0] * cluster.size
    for a, b in cluster.edges.tolist():
        nb[a] |= 1 << b
        nb[b] |= 1 << a
    return nb


def _is_connected_mask(mask: int, nb: list) -> bool:
    if mask == 0:
        return False
    reach = mask & -mask
    frontier = reach
    while frontier:
        new = 0
        f = frontier
        while f:
            low = f & -f
            new |= nb[low.bit_length() - 1]
            f ^= low
        new &= mask & ~reach
        reach |= new
        frontier = new
    return reach == mask


def iter_connected_subsets(cluster: ClusterGraph, max_size: int):
    """Yield ``(mask, size, cut)`` for every connected vertex set of size <= max_size.

    Each set is produced exactly once, grown from its smallest vertex with the
    extension-set rule (only neighbours exclusive to the newest vertex and
    larger than the root may join the extension set).
    """
    nb = _neighbor_masks(cluster)
    deg = [int(x) for x in cluster.degree]
    k = cluster.size
    produced = 0
    for root in range(k):
        above = ~((1 << (root + 1)) - 1)
        start = 1 << root
        stack = [(start, nb[root] & above, nb[root] | start, 1, deg[root])]
        while stack:
            sub, ext, closed, size, cut = stack.pop()
            produced += 1
            if produced > MAX_ENUMERATED:
                raise CapExceededError("too many connected subsets to enumerate")
            yield sub, size, cut
            if size == max_size:
                continue
            while ext:
                low = ext & -ext
                ext ^= low
                w = low.bit_length() - 1
                fresh = nb[w] & ~closed & above
                new_cut = cut + deg[w] - 2 * bin(nb[w] & sub).count("1")
                stack.append((sub | low, ext | fresh, closed | nb[w], size + 1, new_cut))


def _scan_connected(cluster: ClusterGraph, score, lo_size, hi_size, both_sides: bool):
    nb = _neighbor_masks(cluster)
    full = (1 << cluster.size) - 1
    best = None
    for mask, size, cut in iter_connected_subsets(cluster, hi_size):
        if size < lo_size:
            continue
        if both_sides and not _is_connected_mask(full ^ mask, nb):
            continue
        cand = (float(score(np.array([cut]), np.array([size]))[0]), size, mask)
        best = _best(cand, best)
    return best


def _mask_to_subset(cluster: ClusterGraph, mask: int) -> SubsetMask:
    bits = np.array([(mask >> i) & 1 for i in range(cluster.size)], dtype=bool)
    return SubsetMask(cluster, bits)


def _degenerate(cluster, eps, alpha, n, method):
    return IsoReport(math.inf, cluster.mask(), method, eps, alpha, n, degenerate=True)


def iso_constant_exact(cluster: ClusterGraph, eps: float, restrict: str = "all", *,
                       alpha: float = 0.5, n: int | None = None) -> IsoReport:
    """Exact ``I_eps^(alpha)``: min of cut/size**((eps-1)/eps) over 1 <= #A <= (1-alpha)N.

    ``restrict`` is ``"all"``, ``"connected"`` or ``"connected_both"`` (A and the
    rest of the cluster both connected).
    """
    n = _box_half_side(cluster) if n is None else n
    if not math.isinf(eps) and eps <= 1:
        raise ParameterError("eps must exceed 1")
    method = {"all": "exact_all", "connected": "exact_connected",
              "connected_both": "exact_connected_both"}.get(restrict)
    if method is None:
        raise ParameterError(f"unknown restriction {restrict!r}")
    if cluster.size <= 1:
        return _degenerate(cluster, eps, alpha, n, method)
    hi = _size_limit(cluster.size, alpha)
    gamma = _gamma(eps)

    def score(cut, size):
        return cut / np.power(size.astype(float), gamma)

    if restrict == "all":
        if cluster.size > ALL_SUBSETS_CAP:
            raise CapExceededError(f"{cluster.size} vertices > {ALL_SUBSETS_CAP} for all-subsets")
        best = _scan_all_subsets(cluster, score, 1, hi)
    else:
        if cluster.size > CONNECTED_CAP:
            raise CapExceededError(f"{cluster.size} vertices > {CONNECTED_CAP} for connected enumeration")
        best = _scan_connected(cluster, score, 1, hi, restrict == "connected_both")
    if best is None:
        return _degenerate(cluster, eps, alpha, n, method)
    value, _, mask = best
    return IsoReport(value, _mask_to_subset(cluster, mask), method, eps, alpha, n)


def sweep_cut(cluster: ClusterGraph, vector: np.ndarray, eps: float = math.inf):
    """Best prefix cut of the vertex ordering by ``vector``; returns (value, SubsetMask)."""
    k = cluster.size
    order = np.argsort(vector, kind="stable")
    pos = np.empty(k, dtype=np.int64)
    pos[order] = np.arange(k)
    diff = np.zeros(k + 1, dtype=np.int64)
    if cluster.n_edges:
        pu, pv = pos[cluster.edges[:, 0]], pos[cluster.edges[:, 1]]
        lo, hi = np.minimum(pu, pv), np.maximum(pu, pv)
        np.add.at(diff, lo + 1, 1)
        np.add.at(diff, hi + 1, -1)
    cut = np.cumsum(diff)[1:k]          # cut of prefix of length j = 1..k-1
    j = np.arange(1, k)
    small = np.minimum(j, k - j)
    val = cut / np.power(small.astype(float), _gamma(eps))
    i = int(np.argmin(val))
    prefix = np.zeros(k, dtype=bool)
    prefix[order[: i + 1]] = True
    bits = prefix if (i + 1) <= k - (i + 1) else ~prefix
    return float(val[i]), SubsetMask(cluster, bits)


def cheeger_constant(cluster: ClusterGraph, method: str = "auto") -> IsoReport:
    """``II_inf``: min cut/#A over #A <= N/2.

    ``method`` is ``"exact"``, ``"sweep"`` (spectral upper bound) or ``"auto"``
    (exact under the all-subsets cap, sweep above it).
    """
    n = _box_half_side(cluster)
    if method not in ("auto", "exact", "sweep"):
        raise ParameterError(f"unknown method {method!r}")
    if cluster.size <= 1:
        return _degenerate(cluster, math.inf, 0.5, n, "exact_all")
    if method == "exact" or (method == "auto" and cluster.size <= ALL_SUBSETS_CAP):
        if cluster.size <= ALL_SUBSETS_CAP:
            return iso_constant_exact(cluster, math.inf, "all")
        return iso_constant_exact(cluster, math.inf, "connected")
    from .spectral import build_walk_matrix, second_eigenvector

    vec = second_eigenvector(build_walk_matrix(cluster))
    value, subset = sweep_cut(cluster, vec)
    return IsoReport(value, subset, "sweep", math.inf, 0.5, n)


def bar_iso_constant(cluster: ClusterGraph, eps: float) -> IsoReport:
    """``min_A Q(cut A) / (pi(A) pi(A^c))**((eps-1)/eps)`` over nonempty proper A."""
    n = _box_half_side(cluster)
    if cluster.size <= 1:
        return _degenerate(cluster, eps, 0.5, n, "exact_all")
    if cluster.size > ALL_SUBSETS_CAP:
        raise CapExceededError(f"{cluster.size} vertices > {ALL_SUBSETS_CAP}")
    k, d = cluster.size, cluster.d
    gamma = _gamma(eps)

    def score(cut, size):
        pa = size / k
        return (cut / (2 * d * k)) / np.power(pa * (1 - pa), gamma)

    value, _, mask = _scan_all_subsets(cluster, score, 1, k - 1)
    return IsoReport(value, _mask_to_subset(cluster, mask), "exact_all", eps, 0.5, n)


def normalized_iso_constant(cluster: ClusterGraph, eps: float, alpha: float) -> float:
    """``inf_{#A <= (1-alpha)N} Q(cut A) / pi(A)**((eps-1)/eps)``, by enumeration."""
    k, d = cluster.size, cluster.d
    gamma = _gamma(eps)

    def score(cut, size):
        return (cut / (2 * d * k)) / np.power(size / k, gamma)

    return _scan_all_subsets(cluster, score, 1, _size_limit(k, alpha))[0]


def sandwich_check(cluster: ClusterGraph, eps: float, alpha: float, rtol: float = 1e-9) -> dict:
    """Check ``bar_I <= alpha**(1/eps-1) J <= alpha**(1/eps-1) bar_I`` and the J-I link."""
    bar = bar_iso_constant(cluster, eps).value
    j = normalized_iso_constant(cluster, eps, alpha)
    i_alpha = iso_constant_exact(cluster, eps, "all", alpha=alpha).value
    factor = alpha ** (1.0 / eps - 1.0)
    via_i = cluster.size ** (-1.0 / eps) / (2 * cluster.d) * i_alpha
    ok = (bar <= factor * j * (1 + rtol) and j <= bar * (1 + rtol)
          and abs(via_i - j) <= rtol * max(1.0, abs(j)))
    return {"bar": bar, "J": j, "factor": factor, "J_from_I": via_i, "holds": bool(ok)}


# -- Nash inequality ------------------------------------------------------------

def dirichlet_form(cluster: ClusterGraph, g: np.ndarray) -> float:
    """``(1 / (2d N)) sum over open edges (g(x) - g(y))**2``."""
    if cluster.n_edges == 0:
        return 0.0
    u, v = cluster.edges.T
    return float(((g[u] - g[v]) ** 2).sum() / (2 * cluster.d * cluster.size))


def nash_sides(cluster: ClusterGraph, g: np.ndarray, n: int, eps: float, beta: float):
    """(LHS, RHS) of ``Var^(1+2/eps) <= 8/beta^2 n^(2(1-d/eps)) E(g,g) |g|_1^(4/eps)``."""
    d = cluster.d
    mean = g.mean()
    var = float(((g - mean) ** 2).mean())
    l1 = float(np.abs(g).mean())
    lhs = var ** (1 + 2 / eps)
    rhs = 8 / beta**2 * n ** (2 * (1 - d / eps)) * dirichlet_form(cluster, g) * l1 ** (4 / eps)
    return lhs, rhs


def nash_check(cluster: ClusterGraph, n: int, eps: float, beta: float, trials: int = 100,
               rng=None, minimizer: SubsetMask | None = None, rtol: float = 1e-9) -> dict:
    """Test the Nash inequality on random functions and on the iso minimizer indicator."""
    if not beta > 0:
        raise ParameterError("beta must be positive")
    rng = np.random.default_rng(rng)
    funcs = [rng.uniform(0.0, 1.0, cluster.size) for _ in range(trials)]
    if minimizer is None and 1 < cluster.size <= ALL_SUBSETS_CAP:
        minimizer = iso_constant_exact(cluster, eps, "all", n=n).minimizing_set
    if minimizer is not None and minimizer.count:
        funcs.append(minimizer.bits.astype(float))
        funcs.append((~minimizer.bits).astype(float))
    worst = math.inf
    holds = True
    for g in funcs:
        lhs, rhs = nash_sides(cluster, g, n, eps, beta)
        if lhs > rhs * (1 + rtol):
            holds = False
        if lhs > 0:
            worst = min(worst, rhs / lhs)
    return {"holds": holds, "worst_margin": worst, "functions": len(funcs)}


# -- Cheeger tail -----------------------------------------------------------------

def cheeger_tail_experiment(model: Model, p: float, ns, beta: float, seeds, *,
                            method: str = "auto") -> dict:
    """Frequency of ``II_inf(C^n) <= beta / n`` over seeds, per n.

    Each seed gives one configuration on ``[-max(ns), max(ns)]^d`` reused for
    every n.  Clusters with a single vertex (or a closed origin) are degenerate
    and left out of the frequency; if all are degenerate the frequency is 1.
    """
    ns = sorted(int(x) for x in ns)
    rows = []
    for seed in seeds:
        cfg = sample_configuration(model, ns[-1], p, seed)
        for n in ns:
            try:
                c = origin_box_cluster(cfg, n)
            except EmptyClusterError:
                rows.append({"seed": seed, "n": n, "size": 0, "value": math.inf,
                             "method": "none", "degenerate": True, "event": True})
                continue
            rep = cheeger_constant(c, method)
            rows.append({"seed": seed, "n": n, "size": c.size, "value": rep.value,
                         "method": rep.method, "degenerate": rep.degenerate,
                         "event": rep.degenerate or rep.value <= beta / n})
    summary = {}
    for n in ns:
        sel = [r for r in rows if r["n"] == n and not r["degenerate"]]
        k = sum(r["event"] for r in sel)
        if sel:
            freq, ci = k / len(sel), wilson_interval(k, len(sel))
        else:
            freq, ci = 1.0, (1.0, 1.0)
        summary[n] = {"frequency": freq, "ci": ci, "events": k, "samples": len(sel),
                      "degenerate": sum(r["degenerate"] for r in rows if r["n"] == n)}
    return {"rows": rows, "summary": summary}
