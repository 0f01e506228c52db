"""Bernoulli site/bond configurations on finite boxes of Z^d and the PERC1 format.

Every cell (site, or edge ``v -> v + e_i``) carries a 64-bit hash of
``(seed, cell_index)``; the cell is open iff ``hash < p * 2**64``.  Sampling is
therefore order independent, and thresholding the same hashes at a larger
``p`` gives a superset of open cells (monotone coupling).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    FormatError,
    ParameterError,
    ResourceLimitError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"PERC"
VERSION = 1
_HEADER = struct.Struct("<4sBBBIdQ")

#: bytes of working memory a single sampling call may use
MEMORY_CAP_BYTES = 2 * 1024**3
_CHUNK = 1 << 22

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class Model:
    kind: str
    d: int = 2

    def __post_init__(self):
        if self.kind not in ("site", "bond"):
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.kind == "site" and self.d != 2:
            raise ParameterError("site model is two-dimensional only")
        if not 2 <= self.d <= 6:
            raise ParameterError(f"dimension must be in [2, 6], got {self.d}")

    @classmethod
    def site2d(cls) -> "Model":
        return cls("site", 2)

    @classmethod
    def bond(cls, d: int) -> "Model":
        return cls("bond", d)

    @property
    def is_site(self) -> bool:
        return self.kind == "site"

    def __str__(self):
        return "site2d" if self.is_site else f"bond{self.d}d"

    @classmethod
    def parse(cls, text: str) -> "Model":
        text = text.strip().lower()
        if text in ("site", "site2d"):
            return cls.site2d()
        if text.startswith("bond"):
            rest = text[4:].rstrip("d") or "2"
            return cls.bond(int(rest))
        raise ParameterError(f"cannot parse model {text!r}")


def _splitmix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform64(seed: int, index: np.ndarray) -> np.ndarray:
    """Counter-based 64-bit hash of ``(seed, index)`` (splitmix64 stream)."""
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix(np.array(seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
        return _splitmix(key + (index + np.uint64(1)) * _GAMMA)


def _threshold(p: float) -> int:
    # exact: p is a double and 2**64 a power of two
    return int(float(p) * 2.0**64)


def _open_mask(seed: int, ncells: int, p: float) -> np.ndarray:
    out = np.empty(ncells, dtype=bool)
    thr = _threshold(p)
    if thr >= 2**64:
        out[:] = True
        return out
    if thr <= 0:
        out[:] = False
        return out
    t = np.uint64(thr)
    for start in range(0, ncells, _CHUNK):
        stop = min(ncells, start + _CHUNK)
        idx = np.arange(start, stop, dtype=np.uint64)
        out[start:stop] = uniform64(seed, idx) < t
    return out


def _bond_valid(d: int, side: int) -> np.ndarray:
    """Mask of edge slots ``v -> v + e_i`` whose target lies in the box."""
    valid = np.ones((d,) + (side,) * d, dtype=bool)
    for i in range(d):
        sl = [i] + [slice(None)] * d
        sl[1 + i] = side - 1
        valid[tuple(sl)] = False
    return valid


@dataclass(frozen=True, eq=False)
class Configuration:
    """One percolation environment on the stored box ``[-m, m]^d``.

    ``occupancy`` has shape ``(2m+1,)*d`` for sites and ``(d,) + (2m+1,)*d``
    for bonds, where ``occupancy[i][v]`` is the edge from ``v`` to ``v+e_i``.
    Array indices are coordinates shifted by ``m``.
    """

    model: Model
    m: int
    p: float
    seed: int
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != self.expected_shape:
            raise ParameterError(
                f"occupancy shape {occ.shape} != expected {self.expected_shape}")
        if not self.model.is_site:
            occ = occ & _bond_valid(self.d, self.side)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def side(self) -> int:
        return 2 * self.m + 1

    @property
    def expected_shape(self) -> tuple:
        box = (2 * self.m + 1,) * self.model.d
        return box if self.model.is_site else (self.model.d,) + box

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (self.model == other.model and self.m == other.m
                and self.p == other.p and self.seed == other.seed
                and np.array_equal(self.occupancy, other.occupancy))

    def __repr__(self):
        return (f"Configuration(model={self.model}, m={self.m}, p={self.p}, "
                f"seed={self.seed}, open_fraction={open_fraction(self):.4f})")

    # -- views on sub-boxes -------------------------------------------------

    def _window(self, n: int, center=None) -> tuple:
        if n < 0 or n > self.m:
            raise ParameterError(f"box half-side {n} outside [0, {self.m}]")
        center = (0,) * self.d if center is None else tuple(center)
        sl = []
        for c in center:
            lo, hi = c - n + self.m, c + n + self.m + 1
            if lo < 0 or hi > self.side:
                raise ParameterError(f"box of half-side {n} at {center} leaves the stored box")
            sl.append(slice(lo, hi))
        return tuple(sl)

    def box_sites(self, n: int, center=None) -> np.ndarray:
        """Vertex mask of ``center + [-n, n]^d``: open sites (site) or all (bond)."""
        w = self._window(n, center)
        if self.model.is_site:
            return self.occupancy[w].copy()
        return np.ones((2 * n + 1,) * self.d, dtype=bool)

    def box_edges(self, n: int, center=None) -> np.ndarray:
        """Open edges with both endpoints in ``center + [-n, n]^d``.

        Shape ``(d,) + (2n+1,)*d``; entry ``[i][v]`` is the edge ``v -> v+e_i``.
        """
        w = self._window(n, center)
        side = 2 * n + 1
        if self.model.is_site:
            s = self.occupancy[w]
            out = np.zeros((self.d,) + s.shape, dtype=bool)
            for i in range(self.d):
                lo = [slice(None)] * self.d
                hi = [slice(None)] * self.d
                lo[i] = slice(0, side - 1)
                hi[i] = slice(1, side)
                out[i][tuple(lo)] = s[tuple(lo)] & s[tuple(hi)]
            return out
        out = np.stack([self.occupancy[i][w] for i in range(self.d)])
        return out & _bond_valid(self.d, side)


def _validate(model: Model, m: int, p: float):
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ParameterError(f"half-side m must be a positive integer, got {m}")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")
    cells = (2 * m + 1) ** model.d * (1 if model.is_site else model.d)
    need = cells * 2 + 9 * min(cells, _CHUNK)
    if need > MEMORY_CAP_BYTES:
        raise ResourceLimitError(
            f"sampling {cells} cells needs about {need} bytes, cap is {MEMORY_CAP_BYTES}")
    return cells


def sample_configuration(model: Model, m: int, p: float, seed: int) -> Configuration:
    cells = _validate(model, m, p)
    occ = _open_mask(seed, cells, p)
    box = (2 * m + 1,) * model.d
    if model.is_site:
        occ = occ.reshape(box)
    else:
        # cell index = vertex_index * d + direction
        occ = np.moveaxis(occ.reshape(box + (model.d,)), -1, 0)
    return Configuration(model, int(m), float(p), int(seed), occ)


def sample_coupled(model: Model, m: int, ps: Sequence[float], seed: int) -> list:
    """Configurations at several p sharing the same underlying uniforms."""
    return [sample_configuration(model, m, p, seed) for p in ps]


def from_open_sites(points: Iterable, m: int, p: float = float("nan"), seed: int = 0) -> Configuration:
    """Hand-built site configuration with exactly ``points`` open."""
    occ = np.zeros((2 * m + 1,) * 2, dtype=bool)
    for x in points:
        occ[tuple(np.asarray(x) + m)] = True
    return Configuration(Model.site2d(), m, p, seed, occ)


def from_open_edges(edges: Iterable, m: int, d: int = 2, p: float = float("nan"),
                    seed: int = 0) -> Configuration:
    """Hand-built bond configuration; ``edges`` are pairs of adjacent points."""
    occ = np.zeros((d,) + (2 * m + 1,) * d, dtype=bool)
    for x, y in edges:
        x, y = np.asarray(x), np.asarray(y)
        diff = y - x
        if np.abs(diff).sum() != 1:
            raise ParameterError(f"{tuple(x)} and {tuple(y)} are not lattice neighbours")
        i = int(np.flatnonzero(diff)[0])
        lo = x if diff[i] > 0 else y
        occ[(i,) + tuple(lo + m)] = True
    return Configuration(Model.bond(d), m, p, seed, occ)


def open_fraction(cfg: Configuration) -> float:
    if cfg.model.is_site:
        eligible = cfg.occupancy.size
    else:
        eligible = cfg.d * cfg.side ** (cfg.d - 1) * (cfg.side - 1)
    return float(cfg.occupancy.sum()) / eligible


# -- PERC1 serialization -----------------------------------------------------

def _payload_bits(cfg: Configuration) -> np.ndarray:
    if cfg.model.is_site:
        return cfg.occupancy.reshape(-1)
    # per vertex (row-major), direction bits d-1 ... 0
    per_vertex = np.moveaxis(cfg.occupancy, 0, -1)[..., ::-1]
    return per_vertex.reshape(-1)


def to_bytes(cfg: Configuration) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, 0 if cfg.model.is_site else 1,
                          cfg.d, cfg.m, cfg.p, cfg.seed & 0xFFFFFFFFFFFFFFFF)
    payload = np.packbits(_payload_bits(cfg), bitorder="little").tobytes()
    return header + payload


def from_bytes(data: bytes) -> Configuration:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < 5:
        raise TruncatedPayloadError("stream ends inside the header")
    if data[4] != VERSION:
        raise UnsupportedVersionError(f"unsupported PERC version {data[4]}")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("stream ends inside the header")
    _, _, kind, d, m, p, seed = _HEADER.unpack_from(data)
    if kind not in (0, 1):
        raise FormatError(f"unknown model byte {kind}")
    try:
        model = Model("site" if kind == 0 else "bond", d)
    except ParameterError as exc:
        raise FormatError(str(exc)) from None
    if m < 1:
        raise FormatError("half-side m must be positive")
    nvert = (2 * m + 1) ** d
    nbits = nvert if model.is_site else nvert * d
    nbytes = (nbits + 7) // 8
    payload = data[_HEADER.size:]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {nbytes}")
    if len(payload) > nbytes:
        raise FormatError(f"{len(payload) - nbytes} trailing bytes after payload")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    if bits[nbits:].any():
        raise FormatError("nonzero padding bits")
    bits = bits[:nbits].astype(bool)
    box = (2 * m + 1,) * d
    if model.is_site:
        occ = bits.reshape(box)
    else:
        occ = np.moveaxis(bits.reshape(box + (d,))[..., ::-1], -1, 0)
        if (occ & ~_bond_valid(d, 2 * m + 1)).any():
            raise FormatError("edge bit set toward a vertex outside the box")
    return Configuration(model, m, p, seed, occ)


def save_configuration(cfg: Configuration, sink: BinaryIO) -> int:
    data = to_bytes(cfg)
    sink.write(data)
    return len(data)


def load_configuration(source: BinaryIO) -> Configuration:
    return from_bytes(source.read())
