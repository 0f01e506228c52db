"""Disjoint open crossings of rectangles in 2D site percolation (Kesten channels).

A horizontal channel of the rectangle ``[x0, x0+m] x [y0, y0+n]`` is an open
nearest-neighbour path from the left side to the right side whose other
vertices lie strictly inside (``x0 < x < x0+m`` and ``y0 < y < y0+n``).  The
maximal number of vertex-disjoint channels is a max-flow with unit vertex
capacities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_flow

from .errors import ParameterError
from .percolation import Configuration, Model, sample_configuration
from .stats import wilson_interval

SITE_THRESHOLD_2D = 0.5927


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    m: int      # horizontal extent
    n: int      # vertical extent

    @classmethod
    def centered_square(cls, n: int) -> "Rect":
        return cls(-(n // 2), -(n // 2), n, n)


@dataclass
class ChannelSet:
    direction: str
    rect: Rect
    paths: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.paths)


def _site_grid(cfg: Configuration, rect: Rect) -> np.ndarray:
    """Open-site array indexed [x - x0, y - y0]."""
    if not cfg.model.is_site:
        raise ParameterError("channels are defined for the 2D site model")
    if rect.m < 1 or rect.n < 1:
        raise ParameterError("degenerate rectangle")
    lo = np.array([rect.x0, rect.y0]) + cfg.m
    hi = lo + np.array([rect.m, rect.n])
    if lo.min() < 0 or hi.max() > 2 * cfg.m:
        raise ParameterError("rectangle leaves the stored box")
    return np.asarray(cfg.occupancy)[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1]


def max_disjoint_channels(cfg: Configuration, rect: Rect, direction: str = "horizontal") -> ChannelSet:
    """Maximal family of vertex-disjoint open channels with witness paths."""
    grid = _site_grid(cfg, rect)
    if direction == "vertical":
        grid = grid.T
    elif direction != "horizontal":
        raise ParameterError(f"unknown direction {direction!r}")
    W, H = grid.shape[0] - 1, grid.shape[1] - 1
    xs, ys = np.nonzero(grid)
    idx = -np.ones(grid.shape, dtype=np.int64)
    idx[xs, ys] = np.arange(len(xs))
    nv = len(xs)
    S, T = 2 * nv, 2 * nv + 1
    left = xs == 0
    right = xs == W
    inner = (xs > 0) & (xs < W) & (ys > 0) & (ys < H)
    tails, heads = [], []
    # vertex split: in = 2i, out = 2i + 1
    usable = left | right | inner
    tails.extend(2 * np.flatnonzero(usable))
    heads.extend(2 * np.flatnonzero(usable) + 1)
    tails.extend([S] * int(left.sum()))
    heads.extend(2 * np.flatnonzero(left))
    tails.extend(2 * np.flatnonzero(right) + 1)
    heads.extend([T] * int(right.sum()))
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        x2, y2 = xs + dx, ys + dy
        ok = (x2 >= 0) & (x2 <= W) & (y2 >= 0) & (y2 <= H)
        a = np.flatnonzero(ok)
        b = idx[x2[a], y2[a]]
        keep = b >= 0
        a, b = a[keep], b[keep]
        # moves out of a left endpoint or an inner vertex, into an inner vertex or a right endpoint
        allowed = (left[a] | inner[a]) & (inner[b] | right[b]) & ~(left[a] & left[b])
        tails.extend(2 * a[allowed] + 1)
        heads.extend(2 * b[allowed])
    cap = sp.csr_matrix((np.ones(len(tails), dtype=np.int32), (tails, heads)), shape=(2 * nv + 2,) * 2)
    cap.sum_duplicates()
    cap.data[:] = 1
    res = maximum_flow(cap, S, T)
    flow = res.flow.tocsr()
    succ = {}
    for u in range(flow.shape[0]):
        lo_, hi_ = flow.indptr[u], flow.indptr[u + 1]
        for j in range(lo_, hi_):
            if flow.data[j] > 0:
                succ.setdefault(u, []).append(flow.indices[j])
    paths = []
    for start in succ.get(S, []):
        node, path = start, []
        while node != T:
            v = node // 2
            path.append(v)
            node = succ[2 * v + 1][0]
        pts = [(int(xs[v]), int(ys[v])) for v in path]
        if direction == "vertical":
            pts = [(y, x) for x, y in pts]
        paths.append([(x + rect.x0, y + rect.y0) for x, y in pts])
    paths.sort()
    if len(paths) != res.flow_value:
        raise RuntimeError("flow decomposition mismatch")
    return ChannelSet(direction, rect, paths)


def channel_violations(cfg: Configuration, cs: ChannelSet) -> list:
    """Direct inspection of the channel invariants; returns a list of problems."""
    r = cs.rect
    occ = np.asarray(cfg.occupancy)
    problems, seen = [], set()
    for path in cs.paths:
        if cs.direction == "horizontal":
            rel = [(x - r.x0, y - r.y0) for x, y in path]
            W, H = r.m, r.n
        else:
            rel = [(y - r.y0, x - r.x0) for x, y in path]
            W, H = r.n, r.m
        if rel[0][0] != 0 or rel[-1][0] != W:
            problems.append(("endpoints", path))
        for a, b in zip(path, path[1:]):
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                problems.append(("not adjacent", a, b))
        for x, y in rel[1:-1]:
            if not (0 < x < W and 0 < y < H):
                problems.append(("interior", path))
                break
        for p in path:
            if not occ[p[0] + cfg.m, p[1] + cfg.m]:
                problems.append(("closed", p))
            if p in seen:
                problems.append(("shared", p))
            seen.add(p)
    return problems


@dataclass
class KestenGrid:
    n: int
    C: float
    strip_height: int
    horizontal: list          # channel counts per horizontal strip
    vertical: list            # channel counts per vertical strip
    short_last: bool
    degenerate: bool

    @property
    def totals(self):
        return sum(self.horizontal), sum(self.vertical)


def _strips(n: int, h: int):
    out, lo = [], -n
    while lo <= n:
        out.append((lo, min(n, lo + h - 1)))
        lo += h
    return out


def build_kesten_grid(cfg: Configuration, n: int, C: float = 2.0) -> KestenGrid:
    """Cut ``[-n, n]^2`` into strips of ``ceil(C log n)`` rows (and columns) and count channels."""
    if n < 8 or not C > 0:
        raise ParameterError("need n >= 8 and C > 0")
    h = math.ceil(C * math.log(n))
    degenerate = h > 2 * n + 1
    if degenerate:
        h = 2 * n + 1
    strips = _strips(n, h)
    horiz, vert = [], []
    for lo, hi in strips:
        if hi - lo < 1:
            horiz.append(0)
            vert.append(0)
            continue
        horiz.append(max_disjoint_channels(cfg, Rect(-n, lo, 2 * n, hi - lo), "horizontal").count)
        vert.append(max_disjoint_channels(cfg, Rect(lo, -n, hi - lo, 2 * n), "vertical").count)
    short = (strips[-1][1] - strips[-1][0] + 1) < h
    return KestenGrid(n, C, h, horiz, vert, short, degenerate)


def channel_scaling_experiment(p: float, sizes, seeds) -> dict:
    """Exact ``N(n, n)`` on the square of side n for each (n, seed); summary per n."""
    if p <= SITE_THRESHOLD_2D:
        warnings.warn(f"p = {p} is not above the 2D site threshold", stacklevel=2)
    rows = []
    for n in sizes:
        rect = Rect.centered_square(n)
        for seed in seeds:
            cfg = sample_configuration(Model.site2d(), n - n // 2, p, seed)
            N = max_disjoint_channels(cfg, rect, "horizontal").count
            rows.append({"n": n, "seed": seed, "direction": "horizontal", "channels": N, "ratio": N / n})
    summary = {}
    for n in sizes:
        r = np.array([x["ratio"] for x in rows if x["n"] == n])
        zero = int((r == 0).sum())
        summary[n] = {"mean": float(r.mean()), "min": float(r.min()), "zero_fraction": zero / len(r),
                      "zero_ci": wilson_interval(zero, len(r))}
    return {"rows": rows, "summary": summary}
