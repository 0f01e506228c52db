"""Block renormalization in two dimensions: good boxes and the coarse white-site field.

Block ``i`` is ``B_i = (2N+1) i + [-N, N]^2``; its enlargement ``B'_i`` has
half-extent ``floor(5N/4)``.  The radius of a vertex set is its L-infinity
circumradius, ``max_j ceil(span_j / 2)``.  A cluster crosses a box when one of
its components inside the box touches both faces in every axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cluster import SubsetMask, _BoxStructure
from .errors import ParameterError
from .percolation import Configuration, Model, sample_configuration
from .stats import wilson_interval


@dataclass(frozen=True)
class BlockSpec:
    N: int
    index: tuple

    def __post_init__(self):
        if self.N < 1:
            raise ParameterError("block scale N must be >= 1")
        object.__setattr__(self, "index", tuple(int(x) for x in self.index))

    @property
    def center(self) -> np.ndarray:
        return (2 * self.N + 1) * np.asarray(self.index, dtype=np.int64)

    @property
    def outer_half(self) -> int:
        return (5 * self.N) // 4


@dataclass
class GoodBoxReport:
    has_edge: bool
    unique_big_cluster: bool
    long_paths_meet_K: bool
    K_crossing_all_subboxes: bool
    big_clusters: int = 0
    failing_subbox: tuple | None = None

    @property
    def is_good(self) -> bool:
        return bool(self.has_edge and self.unique_big_cluster and self.long_paths_meet_K
                    and self.K_crossing_all_subboxes)

    def flags(self) -> str:
        keys = ("has_edge", "unique_big_cluster", "long_paths_meet_K", "K_crossing_all_subboxes")
        return "".join("1" if getattr(self, k) else "0" for k in keys)


def circumradius(coords: np.ndarray) -> int:
    """L-infinity circumradius over integer centers."""
    span = coords.max(axis=0) - coords.min(axis=0)
    return int(np.max((span + 1) // 2))


def subbox_stride(N: int) -> int:
    return 1 if N <= 10 else math.ceil(N / 20)


def subbox_corners(side: int, N: int) -> np.ndarray:
    """Allowed face coordinates 0..side-1: the stride lattice plus the far face."""
    pts = set(range(0, side, subbox_stride(N)))
    pts.add(side - 1)
    return np.array(sorted(pts), dtype=np.int64)


@lru_cache(maxsize=1)
def _crossing_kernel():
    import numba

    @numba.njit(cache=True)
    def first_failure(inK, ex, ey, corners, min_side):
        S = inK.shape[0]
        stamp = np.zeros((S, S), dtype=np.int64)
        stack = np.empty(S * S, dtype=np.int64)
        visit = 0
        nc = corners.shape[0]
        # corner pairs sorted by extent: small boxes fail most often, so try them first
        npairs = nc * (nc - 1) // 2
        pa = np.empty(npairs, dtype=np.int64)
        pb = np.empty(npairs, dtype=np.int64)
        ext = np.empty(npairs, dtype=np.int64)
        k = 0
        for a in range(nc):
            for b in range(a + 1, nc):
                pa[k], pb[k], ext[k] = corners[a], corners[b], corners[b] - corners[a]
                k += 1
        order = np.argsort(ext, kind="mergesort")
        for i in range(npairs):
            x0, x1 = pa[order[i]], pb[order[i]]
            if x1 - x0 <= min_side:
                continue
            for j in range(npairs):
                y0, y1 = pa[order[j]], pb[order[j]]
                if y1 - y0 <= min_side:
                    continue
                visit += 1
                found = False
                for sx in range(x0, x1 + 1):
                    if found:
                        break
                    for sy in range(y0, y1 + 1):
                        if not inK[sx, sy] or stamp[sx, sy] == visit:
                            continue
                        top = 0
                        stack[top] = sx * S + sy
                        top += 1
                        stamp[sx, sy] = visit
                        touch = 0
                        while top > 0:
                            top -= 1
                            q = stack[top]
                            x, y = q // S, q % S
                            if x == x0:
                                touch |= 1
                            if x == x1:
                                touch |= 2
                            if y == y0:
                                touch |= 4
                            if y == y1:
                                touch |= 8
                            if x < x1 and ex[x, y] and stamp[x + 1, y] != visit:
                                stamp[x + 1, y] = visit
                                stack[top] = (x + 1) * S + y
                                top += 1
                            if x > x0 and ex[x - 1, y] and stamp[x - 1, y] != visit:
                                stamp[x - 1, y] = visit
                                stack[top] = (x - 1) * S + y
                                top += 1
                            if y < y1 and ey[x, y] and stamp[x, y + 1] != visit:
                                stamp[x, y + 1] = visit
                                stack[top] = x * S + y + 1
                                top += 1
                            if y > y0 and ey[x, y - 1] and stamp[x, y - 1] != visit:
                                stamp[x, y - 1] = visit
                                stack[top] = x * S + y - 1
                                top += 1
                        if touch == 15:
                            found = True
                            break
                if not found:
                    return np.array([x0, x1, y0, y1])
        return np.array([-1, -1, -1, -1])

    return first_failure


def _check_inside(cfg: Configuration, center, half: int):
    if np.any(np.abs(center) + half > cfg.m):
        raise ParameterError("block leaves the stored box")


def good_box(cfg: Configuration, block: BlockSpec) -> GoodBoxReport:
    """Evaluate the good-box event of ``block`` (two dimensions only)."""
    if cfg.d != 2:
        raise ParameterError("renormalization is implemented for d = 2")
    N, H, c = block.N, block.outer_half, block.center
    _check_inside(cfg, c, H)
    st = _BoxStructure(cfg, H, c)
    S = 2 * H + 1
    e = cfg.box_edges(H, c)
    lo, hi = H - N, H + N
    has_edge = bool(e[0][lo:hi, lo:hi + 1].any() or e[1][lo:hi + 1, lo:hi].any())
    groups = st.component_vertex_sets()
    big = []
    for g in groups:
        coords = np.column_stack(np.divmod(g, S))
        if circumradius(coords) > N / 10:
            big.append(g)
    unique = len(big) == 1
    meet = len(big) <= 1
    crossing, failing = False, None
    if unique:
        inK = np.zeros(S * S, dtype=bool)
        inK[big[0]] = True
        inK = inK.reshape(S, S)
        ex = np.zeros((S, S), dtype=bool)
        ey = np.zeros((S, S), dtype=bool)
        ex[:-1] = e[0][:-1] & inK[:-1] & inK[1:]
        ey[:, :-1] = e[1][:, :-1] & inK[:, :-1] & inK[:, 1:]
        res = _crossing_kernel()(inK, ex, ey, subbox_corners(S, N), N / 10)
        crossing = bool(res[0] < 0)
        if not crossing:
            failing = tuple(int(x) - H for x in res)
    return GoodBoxReport(has_edge, unique, meet, crossing, len(big), failing)


def renormalized_field(cfg: Configuration, N: int, R: int) -> Configuration:
    """Site configuration on ``[-R, R]^2`` whose open sites are the good blocks."""
    H = (5 * N) // 4
    if (2 * N + 1) * R + H > cfg.m:
        raise ParameterError("region too large for the stored box")
    side = 2 * R + 1
    occ = np.zeros((side, side), dtype=bool)
    for a in range(side):
        for b in range(side):
            occ[a, b] = good_box(cfg, BlockSpec(N, (a - R, b - R))).is_good
    occ.setflags(write=False)
    return Configuration(Model.site2d(), R, float("nan"), cfg.seed, occ)


def block_of(points: np.ndarray, N: int) -> np.ndarray:
    return np.floor_divide(np.asarray(points) + N, 2 * N + 1)


def box_interaction_counts(a: SubsetMask, cfg: Configuration, N: int) -> dict:
    """Blocks touched but not filled by ``a`` (n1bar), filled (n2bar), and the good ones."""
    host = a.host
    blocks = block_of(host.points, N)
    uniq, inv = np.unique(blocks, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    total = np.bincount(inv, minlength=len(uniq))
    inside = np.bincount(inv, weights=a.bits.astype(float), minlength=len(uniq)).astype(np.int64)
    touched = inside > 0
    filled = touched & (inside == total)
    out = {"n1bar": int((touched & ~filled).sum()), "n2bar": int(filled.sum()), "n1": 0, "n2": 0}
    for k in np.flatnonzero(touched):
        if good_box(cfg, BlockSpec(N, tuple(uniq[k]))).is_good:
            out["n2" if filled[k] else "n1"] += 1
    return out


def good_box_probability_experiment(ps, Ns, seeds, model: Model | None = None) -> dict:
    """Frequency of the good event for block 0, one fresh configuration per seed."""
    model = model or Model.site2d()
    rows = []
    for p in ps:
        for N in Ns:
            H = (5 * N) // 4
            for seed in seeds:
                cfg = sample_configuration(model, H, p, seed)
                rep = good_box(cfg, BlockSpec(N, (0, 0)))
                rows.append({"p": p, "N": N, "seed": seed, "i": "0,0", "good": rep.is_good,
                             "flags": rep.flags()})
    summary = {}
    for p in ps:
        for N in Ns:
            sel = [r["good"] for r in rows if r["p"] == p and r["N"] == N]
            k = int(sum(sel))
            summary[(p, N)] = {"frequency": k / len(sel), "ci": wilson_interval(k, len(sel)),
                               "blocks": len(sel)}
    return {"rows": rows, "summary": summary}
