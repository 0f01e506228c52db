"""Open clusters in boxes, edge boundaries, the filling construction and *-connectivity."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import ContractError, EmptyClusterError, ParameterError
from .percolation import Configuration


@dataclass(frozen=True)
class Box:
    """Axis-aligned box of lattice points ``lo + [0, shape)``, points in C order."""

    lo: tuple
    shape: tuple

    @classmethod
    def centered(cls, n: int, d: int, center=None) -> "Box":
        center = (0,) * d if center is None else tuple(int(c) for c in center)
        return cls(tuple(c - n for c in center), (2 * n + 1,) * d)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        grid = np.indices(self.shape).reshape(self.d, -1).T
        return grid + np.asarray(self.lo)

    @cached_property
    def strides(self) -> tuple:
        return tuple(int(np.prod(self.shape[i + 1:])) for i in range(self.d))

    def flat(self, pts) -> np.ndarray:
        rel = np.atleast_2d(np.asarray(pts)) - np.asarray(self.lo)
        return np.ravel_multi_index(tuple(rel.T), self.shape)

    def contains(self, pts) -> np.ndarray:
        rel = np.atleast_2d(np.asarray(pts)) - np.asarray(self.lo)
        return np.all((rel >= 0) & (rel < np.asarray(self.shape)), axis=1)


@dataclass(eq=False)
class ClusterGraph:
    """Vertex set with its open adjacency inside a host box.

    ``edges[k] = (u, v)`` are local ids with ``points[v] = points[u] + e_{dirs[k]}``.
    """

    points: np.ndarray
    edges: np.ndarray
    dirs: np.ndarray
    box: Box
    tag: str
    lookup: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index_of(self, point) -> int:
        """Local id of ``point`` or -1."""
        point = np.asarray(point)
        if not self.box.contains(point)[0]:
            return -1
        return int(self.lookup[self.box.flat(point)[0]])

    def contains_point(self, point) -> bool:
        return self.index_of(point) >= 0

    @cached_property
    def adjacency(self) -> csr_matrix:
        k = self.size
        u, v = self.edges.T if len(self.edges) else (np.zeros(0, int), np.zeros(0, int))
        a = coo_matrix((np.ones(2 * len(u)), (np.r_[u, v], np.r_[v, u])), shape=(k, k))
        return a.tocsr()

    @cached_property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.size)

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``table[v, 2i]`` / ``table[v, 2i+1]``: neighbour along -e_i / +e_i, or -1."""
        t = np.full((self.size, 2 * self.d), -1, dtype=np.int64)
        if len(self.edges):
            u, v = self.edges.T
            t[u, 2 * self.dirs + 1] = v
            t[v, 2 * self.dirs] = u
        return t

    def is_connected(self) -> bool:
        if self.size == 0:
            return False
        ncomp, _ = csgraph.connected_components(self.adjacency, directed=False)
        return ncomp == 1

    def mask(self, members=None) -> "SubsetMask":
        bits = np.zeros(self.size, dtype=bool)
        if members is not None:
            bits[np.asarray(list(members), dtype=int)] = True
        return SubsetMask(self, bits)

    def mask_from_points(self, pts) -> "SubsetMask":
        ids = [self.index_of(x) for x in pts]
        if min(ids, default=0) < 0:
            raise ParameterError("point outside the cluster")
        return self.mask(ids)


@dataclass(eq=False)
class SubsetMask:
    """A subset of the vertices of a ClusterGraph or of a Box."""

    host: object
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if len(self.bits) != self.host.size:
            raise ParameterError(f"mask length {len(self.bits)} != host size {self.host.size}")

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def points(self) -> np.ndarray:
        return self.host.points[self.bits]

    def complement(self) -> "SubsetMask":
        return SubsetMask(self.host, ~self.bits)

    def as_array(self) -> np.ndarray:
        """Box hosts only: the mask reshaped to the box shape."""
        return self.bits.reshape(self.host.shape)


@dataclass(eq=False)
class EdgeSet:
    """Unordered lattice edges, each stored as (lower endpoint, direction)."""

    base: np.ndarray
    dirs: np.ndarray

    def __post_init__(self):
        dirs = np.asarray(self.dirs, dtype=np.int64)
        base = np.asarray(self.base, dtype=np.int64)
        base = base.reshape(len(dirs), base.shape[-1] if base.ndim == 2 else -1)
        if len(dirs):
            keys = np.column_stack([base, dirs])
            keys = np.unique(keys, axis=0)
            base, dirs = keys[:, :-1], keys[:, -1]
        self.base, self.dirs = base, dirs

    @classmethod
    def from_pairs(cls, pairs, d=None) -> "EdgeSet":
        base, dirs = [], []
        for x, y in pairs:
            x, y = np.asarray(x), np.asarray(y)
            diff = y - x
            if np.abs(diff).sum() != 1:
                raise ParameterError(f"{tuple(x)}, {tuple(y)} are not lattice neighbours")
            i = int(np.flatnonzero(diff)[0])
            base.append(x if diff[i] > 0 else y)
            dirs.append(i)
        if not base:
            return cls(np.zeros((0, d or 2), dtype=np.int64), np.zeros(0, dtype=np.int64))
        return cls(np.array(base), np.array(dirs))

    def __len__(self):
        return len(self.dirs)

    def keys(self) -> set:
        return {tuple(b) + (int(i),) for b, i in zip(self.base.tolist(), self.dirs.tolist())}

    def __eq__(self, other):
        if not isinstance(other, EdgeSet):
            return NotImplemented
        return self.keys() == other.keys()

    def pairs(self) -> list:
        out = []
        for b, i in zip(self.base, self.dirs):
            e = np.zeros_like(b)
            e[i] = 1
            out.append((tuple(b), tuple(b + e)))
        return out

    def doubled_midpoints(self) -> np.ndarray:
        """``2 * midpoint`` as integers."""
        m = 2 * self.base.copy()
        m[np.arange(len(self.dirs)), self.dirs] += 1
        return m

    def select(self, keep) -> "EdgeSet":
        keep = np.asarray(keep, dtype=bool)
        return EdgeSet(self.base[keep], self.dirs[keep])


# -- graph construction ------------------------------------------------------

def _box_edge_list(cfg: Configuration, box: Box, n: int, center):
    """Open edges inside the box as (u, v, dir) in box-flat indices."""
    e = cfg.box_edges(n, center)
    us, vs, ds = [], [], []
    for i in range(cfg.d):
        f = np.flatnonzero(e[i])
        us.append(f)
        vs.append(f + box.strides[i])
        ds.append(np.full(len(f), i))
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ds)


def _labels(box: Box, u, v):
    a = coo_matrix((np.ones(len(u), dtype=np.int8), (u, v)), shape=(box.size, box.size))
    return csgraph.connected_components(a, directed=False)[1]


def _make_graph(box: Box, verts, u, v, dirs, tag) -> ClusterGraph:
    verts = np.sort(np.asarray(verts, dtype=np.int64))
    lookup = np.full(box.size, -1, dtype=np.int64)
    lookup[verts] = np.arange(len(verts))
    keep = (lookup[u] >= 0) & (lookup[v] >= 0)
    edges = np.column_stack([lookup[u[keep]], lookup[v[keep]]]).astype(np.int64)
    return ClusterGraph(box.points[verts], edges.reshape(-1, 2), dirs[keep].astype(np.int64),
                        box, tag, lookup)


class _BoxStructure:
    """Open structure of one box: edge list, active vertices and component labels."""

    def __init__(self, cfg: Configuration, n: int, center=None):
        self.box = Box.centered(n, cfg.d, center)
        self.u, self.v, self.dirs = _box_edge_list(cfg, self.box, n, center)
        if cfg.model.is_site:
            self.active = cfg.box_sites(n, center).reshape(-1)
        else:
            self.active = np.zeros(self.box.size, dtype=bool)
            self.active[self.u] = True
            self.active[self.v] = True
        self.labels = _labels(self.box, self.u, self.v)
        self.site = cfg.model.is_site
        self.cfg = cfg

    def graph(self, verts, tag) -> ClusterGraph:
        return _make_graph(self.box, verts, self.u, self.v, self.dirs, tag)

    def component_vertex_sets(self) -> list:
        """Vertex sets of the components of the active vertex set, ordered by min vertex."""
        ids = np.flatnonzero(self.active)
        if len(ids) == 0:
            return []
        lab = self.labels[ids]
        order = np.argsort(lab, kind="stable")
        lab_sorted, ids_sorted = lab[order], ids[order]
        cuts = np.flatnonzero(np.diff(lab_sorted)) + 1
        groups = np.split(ids_sorted, cuts)
        groups.sort(key=lambda g: g[0])
        return groups


def origin_box_cluster(cfg: Configuration, n: int) -> ClusterGraph:
    """C^n: the component of the origin using open paths inside [-n, n]^d."""
    st = _BoxStructure(cfg, n)
    o = int(st.box.flat(np.zeros(cfg.d, dtype=int))[0])
    if st.site and not st.active[o]:
        raise EmptyClusterError("origin is closed")
    verts = np.flatnonzero(st.labels == st.labels[o])
    return st.graph(verts, "origin")


def components(cfg: Configuration, n: int, center=None) -> list:
    """All open clusters of the box (isolated vertices excluded for bonds)."""
    st = _BoxStructure(cfg, n, center)
    return [st.graph(g, "component") for g in st.component_vertex_sets()]


def largest_cluster(cfg: Configuration, n: int) -> ClusterGraph:
    """L^n; ties broken by the smallest lexicographic minimal vertex."""
    st = _BoxStructure(cfg, n)
    groups = st.component_vertex_sets()
    if not groups:
        raise EmptyClusterError("no open vertex in the box")
    best = max(groups, key=lambda g: (len(g), -g[0]))
    return st.graph(best, "largest")


def open_vertices(cfg: Configuration, n: int) -> ClusterGraph:
    """G^n: open sites, or (bond) vertices with at least one open edge in the box."""
    st = _BoxStructure(cfg, n)
    return st.graph(np.flatnonzero(st.active), "open_vertices")


# -- boundaries --------------------------------------------------------------

def edge_boundary(a: SubsetMask) -> EdgeSet:
    """Open edges of the host graph with exactly one endpoint in ``a``."""
    g = a.host
    if not isinstance(g, ClusterGraph):
        raise ParameterError("edge_boundary needs a cluster-graph host; use box_edge_boundary")
    if g.n_edges == 0:
        return EdgeSet(np.zeros((0, g.d), dtype=np.int64), np.zeros(0, dtype=np.int64))
    u, v = g.edges.T
    cut = a.bits[u] != a.bits[v]
    return EdgeSet(g.points[u[cut]], g.dirs[cut])


def box_edge_boundary(dmask: SubsetMask) -> EdgeSet:
    """All lattice edges inside the box with exactly one endpoint in ``dmask``."""
    box = dmask.host
    arr = dmask.as_array()
    bases, dirs = [], []
    for i in range(box.d):
        lo = [slice(None)] * box.d
        hi = [slice(None)] * box.d
        lo[i] = slice(0, box.shape[i] - 1)
        hi[i] = slice(1, box.shape[i])
        cut = arr[tuple(lo)] ^ arr[tuple(hi)]
        idx = np.argwhere(cut)
        bases.append(idx + np.asarray(box.lo))
        dirs.append(np.full(len(idx), i))
    return EdgeSet(np.concatenate(bases), np.concatenate(dirs))


def open_part(edges: EdgeSet, cfg: Configuration) -> EdgeSet:
    """Edges of ``edges`` that are open in ``cfg`` (site: both endpoints open)."""
    if len(edges) == 0:
        return edges
    m = cfg.m
    if cfg.model.is_site:
        tip = edges.base.copy()
        tip[np.arange(len(edges)), edges.dirs] += 1
        a = cfg.occupancy[tuple((edges.base + m).T)]
        b = cfg.occupancy[tuple((tip + m).T)]
        return edges.select(a & b)
    return edges.select(cfg.occupancy[(edges.dirs,) + tuple((edges.base + m).T)])


def _connected_in(g: ClusterGraph, bits: np.ndarray) -> bool:
    ids = np.flatnonzero(bits)
    if len(ids) == 0:
        return False
    sub = g.adjacency[ids][:, ids]
    return csgraph.connected_components(sub, directed=False)[0] == 1


def _lattice_labels(arr: np.ndarray):
    return ndimage.label(arr, structure=ndimage.generate_binary_structure(arr.ndim, 1))


def fill_complement(a: SubsetMask, cfg: Configuration, n: int) -> SubsetMask:
    """D = box minus the lattice component of (box minus A) holding the rest of the cluster."""
    g = a.host
    if not (a.bits.any() and (~a.bits).any()):
        raise ContractError("A and its complement in the cluster must be nonempty")
    if not _connected_in(g, a.bits) or not _connected_in(g, ~a.bits):
        raise ContractError("A and its complement must both be connected in the cluster")
    box = Box.centered(n, cfg.d)
    if g.box != box:
        raise ParameterError("cluster does not live in the box [-n, n]^d")
    not_a = np.ones(box.size, dtype=bool)
    not_a[box.flat(a.points)] = False
    labels, _ = _lattice_labels(not_a.reshape(box.shape))
    labels = labels.reshape(-1)
    rest = np.unique(labels[box.flat(g.points[~a.bits])])
    if len(rest) != 1:
        raise ContractError("cluster complement spans several lattice components")
    dbits = labels != rest[0]
    dmask = SubsetMask(box, dbits)

    # (i)-(iv) of the construction
    if not np.array_equal(dbits[box.flat(g.points)], a.bits):
        raise ContractError("D does not meet the cluster exactly in A")
    if _lattice_labels(dmask.as_array())[1] != 1 or _lattice_labels(~dmask.as_array())[1] != 1:
        raise ContractError("D or its complement is not lattice connected")
    if edge_boundary(a) != open_part(box_edge_boundary(dmask), cfg):
        raise ContractError("cluster boundary differs from open part of box boundary")
    return dmask


def is_star_connected(f: EdgeSet) -> bool:
    """Connectivity under |mid(e) - mid(e')|_inf <= 1."""
    if len(f) <= 1:
        return True
    mids = f.doubled_midpoints()
    pairs = cKDTree(mids).query_pairs(r=2.5, p=np.inf, output_type="ndarray")
    k = len(f)
    a = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(k, k))
    return csgraph.connected_components(a, directed=False)[0] == 1


def n_of_A(a: SubsetMask, cfg: Configuration, n: int, reference: ClusterGraph) -> int:
    """Number of lattice components of box minus ``reference`` fully containing a component of A."""
    box = a.host
    if not isinstance(box, Box):
        raise ParameterError("A must be a subset of the box")
    outside = np.ones(box.size, dtype=bool)
    outside[box.flat(reference.points)] = False
    holes, _ = _lattice_labels(outside.reshape(box.shape))
    comps, ncomp = _lattice_labels(a.as_array())
    holes, comps = holes.reshape(-1), comps.reshape(-1)
    hit = set()
    for c in range(1, ncomp + 1):
        h = np.unique(holes[comps == c])
        if len(h) == 1 and h[0] != 0:
            hit.add(int(h[0]))
    return len(hit)


# -- statistics ---------------------------------------------------------------

def cluster_density_stats(cfg: Configuration, n: int) -> dict:
    """#C^n against the box volume; an origin outside G^n counts as an empty cluster."""
    volume = (2 * n + 1) ** cfg.d
    try:
        c = origin_box_cluster(cfg, n)
        size = c.size if (cfg.model.is_site or c.n_edges > 0) else 0
    except EmptyClusterError:
        size = 0
    return {"size": size, "volume": volume, "ratio": size / volume, "empty": size == 0}


def chemical_distance_stats(cfg: Configuration, n: int, rho: float, bins=None) -> dict:
    """Stretch D(0,x)/|x|_1 on the inner box, and whether C cap B^{n/rho} lies in C^n.

    The cluster of the origin in the whole stored box stands in for C.
    """
    if rho < 1:
        raise ParameterError("rho must be >= 1")
    if cfg.m <= n:
        raise ParameterError("stored box must be strictly larger than [-n, n]^d")
    big = origin_box_cluster(cfg, cfg.m)
    o = big.index_of(np.zeros(cfg.d, dtype=int))
    dist = csgraph.shortest_path(big.adjacency, unweighted=True, indices=o)
    r = int(np.floor(n / rho))
    inner = np.all(np.abs(big.points) <= r, axis=1)
    nonzero = np.abs(big.points).sum(axis=1) > 0
    sel = inner & nonzero & np.isfinite(dist)
    stretch = dist[sel] / np.abs(big.points[sel]).sum(axis=1)
    small = origin_box_cluster(cfg, n)
    contained = bool(np.all(small.lookup[small.box.flat(big.points[inner])] >= 0))
    if bins is None:
        bins = np.arange(1.0, max(2.0, float(stretch.max(initial=1.0))) + 0.25, 0.25)
    hist, edges = np.histogram(stretch, bins=bins)
    return {
        "max_stretch": float(stretch.max()) if len(stretch) else float("nan"),
        "count": int(len(stretch)),
        "histogram": hist,
        "bin_edges": edges,
        "contained": bool(contained),
        "inner_radius": r,
    }


# -- exhaustive *-connectivity check -------------------------------------------

def _box_tables(shape):
    coords = list(itertools.product(*[range(s) for s in shape]))
    idx = {c: i for i, c in enumerate(coords)}
    d = len(shape)
    nbv = np.zeros(len(coords), dtype=np.uint64)
    eu, ev, mids = [], [], []
    for c, i in idx.items():
        m = 0
        for k in range(d):
            for s in (-1, 1):
                c2 = list(c)
                c2[k] += s
                j = idx.get(tuple(c2))
                if j is not None:
                    m |= 1 << j
                    if s == 1:
                        eu.append(i)
                        ev.append(j)
                        mids.append(tuple(2 * x + (1 if t == k else 0) for t, x in enumerate(c)))
        nbv[i] = np.uint64(m)
    mids = np.array(mids)
    ne = len(eu)
    nbe = np.zeros(ne, dtype=np.uint64)
    for a in range(ne):
        close = np.flatnonzero(np.abs(mids - mids[a]).max(axis=1) <= 2)
        m = 0
        for b in close:
            if b != a:
                m |= 1 << int(b)
        nbe[a] = np.uint64(m)
    return nbv, np.array(eu, dtype=np.int64), np.array(ev, dtype=np.int64), nbe


def _kernels():
    import numba

    @numba.njit(cache=True)
    def lowbit_index(b):
        i = 0
        while (b >> np.uint64(i)) != np.uint64(1):
            i += 1
        return i

    @numba.njit(cache=True)
    def flood(mask, nb):
        one = np.uint64(1)
        low = mask & (~mask + one)
        reach = low
        frontier = low
        while frontier != np.uint64(0):
            new = np.uint64(0)
            f = frontier
            while f != np.uint64(0):
                b = f & (~f + one)
                f ^= b
                new |= nb[lowbit_index(b)]
            new &= mask
            new &= ~reach
            reach |= new
            frontier = new
        return reach == mask

    @numba.njit(cache=True)
    def run(nv, nbv, eu, ev, nbe, max_report):
        one = np.uint64(1)
        full = (one << np.uint64(nv)) - one
        admissible = 0
        bad = np.zeros(max_report, dtype=np.uint64)
        nbad = 0
        m = np.uint64(1)
        while m < full:
            if flood(m, nbv) and flood(full ^ m, nbv):
                admissible += 1
                bmask = np.uint64(0)
                for e in range(len(eu)):
                    if ((m >> np.uint64(eu[e])) & one) != ((m >> np.uint64(ev[e])) & one):
                        bmask |= one << np.uint64(e)
                if not flood(bmask, nbe):
                    if nbad < max_report:
                        bad[nbad] = m
                    nbad += 1
            m += np.uint64(2)
        return admissible, nbad, bad

    return run


def star_connectivity_exhaustive(shape, max_report: int = 16) -> dict:
    """Check *-connectivity of the box boundary of every admissible D in a small box.

    D ranges over subsets with D and its complement nonempty and lattice
    connected.  Only sets containing the first vertex are visited, since D and
    its complement have the same boundary.  Boxes up to 63 vertices and 64 edges.
    """
    shape = tuple(int(s) for s in shape)
    nv = int(np.prod(shape))
    nbv, eu, ev, nbe = _box_tables(shape)
    if nv > 63 or len(eu) > 64:
        raise ParameterError("box too large for 64-bit enumeration")
    run = _kernels()
    admissible, nbad, bad = run(nv, nbv, eu, ev, nbe, max_report)
    return {"shape": shape, "admissible": int(admissible), "violations": int(nbad),
            "examples": [int(x) for x in bad[:min(nbad, max_report)]]}


def box_mask_from_bits(shape, bits: int, lo=None) -> SubsetMask:
    """Decode an enumeration bitmask into a SubsetMask over ``Box(lo, shape)``."""
    box = Box(tuple(lo) if lo is not None else (0,) * len(shape), tuple(shape))
    arr = np.array([(bits >> i) & 1 for i in range(box.size)], dtype=bool)
    return SubsetMask(box, arr)
