"""Cube-split constellation.

The Grassmannian of lines in C^T is split into T cells, cell ``i`` holding
the lines whose ``i``-th coordinate dominates in modulus. Each cell is
parameterized by ``2(T-1)`` real coordinates in (0, 1), and a regular grid
on those coordinates is pushed onto the cell.

Conventions used throughout the package:

* cell indices are 0-based (the cell bits of a label are the binary
  representation of the cell index);
* symbol index ``k`` of an enumerated constellation is the integer whose
  MSB-first binary expansion is the symbol's label, so ``labels()[k]`` is
  just ``k`` written in ``B`` bits;
* LLR sign convention elsewhere: positive favours bit value 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .numerics import inv_norm_cdf, norm_cdf

__all__ = [
    "CellBoundaryError",
    "CubeSplit",
    "LocalCoordinates",
    "map_xi1",
    "inverse_xi1",
    "allocate_bits",
    "coordinate_grid",
    "gray_encode",
    "gray_decode",
    "mindist_cs_t1",
    "conjectured_mindist",
    "cs_t1_constants",
    "MAX_ENUMERATION",
]

MAX_ENUMERATION = 2**26
_T_CLAMP = 1.0 - 1e-15
_A_CLAMP = 1e-12


class CellBoundaryError(ValueError):
    """Two coordinates of a point tie in modulus, so its cell is ambiguous."""


@dataclass(frozen=True)
class LocalCoordinates:
    """Cell index (0-based) and local coordinates of a point in that cell."""

    cell: int
    a: np.ndarray  # real, length 2(T-1), entries in (0, 1)
    w: np.ndarray  # complex, length T-1
    t: np.ndarray  # complex, length T-1, |t_j| < 1


def gray_encode(p):
    """Binary-reflected Gray label of grid position ``p``."""
    p = np.asarray(p)
    return p ^ (p >> 1)


def gray_decode(g):
    """Grid position whose Gray label is ``g``."""
    g = np.array(g, dtype=np.int64, copy=True)
    shift = g >> 1
    while np.any(shift):
        g ^= shift
        shift >>= 1
    return g


def coordinate_grid(bits: int) -> np.ndarray:
    """The ``2**bits`` grid points ``(2k-1) / 2**(bits+1)``, k = 1..2**bits."""
    n = 1 << bits
    return (2.0 * np.arange(n) + 1.0) / (2.0 * n)


def map_xi1(a1, a2):
    """Map a pair of coordinates in (0, 1) to a point of the open unit disc.

    ``w = Ninv(a1) + j Ninv(a2)`` and ``t = sqrt(tanh(|w|^2 / 4)) w / |w|``,
    which is the same as ``sqrt((1 - exp(-|w|^2/2)) / (1 + exp(-|w|^2/2)))``.
    ``w = 0`` maps to 0 by continuity.
    """
    w = np.asarray(inv_norm_cdf(a1)) + 1j * np.asarray(inv_norm_cdf(a2))
    return _t_from_w(w)


def _t_from_w(w):
    w = np.asarray(w, dtype=complex)
    r2 = np.abs(w) ** 2
    mag = np.sqrt(np.tanh(0.25 * r2))
    r = np.sqrt(r2)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(r > 0, mag * w / np.where(r > 0, r, 1.0), 0.0)
    return t[()] if t.ndim == 0 else t


def _w_from_t(t):
    t = np.asarray(t, dtype=complex)
    mag = np.minimum(np.abs(t), _T_CLAMP)
    # 2 log((1+s)/(1-s)) = 4 artanh(s), s = |t|^2
    wmag = np.sqrt(4.0 * np.arctanh(mag * mag))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(mag > 0, t / np.where(np.abs(t) > 0, np.abs(t), 1.0), 0.0)
    return wmag * unit


def inverse_xi1(t):
    """Inverse of :func:`map_xi1`; returns ``(a1, a2)`` clamped into (0, 1)."""
    w = _w_from_t(t)
    a1 = np.clip(norm_cdf(np.real(w)), _A_CLAMP, 1.0 - _A_CLAMP)
    a2 = np.clip(norm_cdf(np.imag(w)), _A_CLAMP, 1.0 - _A_CLAMP)
    return a1, a2


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def allocate_bits(T: int, B: int, rng: np.random.Generator | None = None) -> tuple[int, ...]:
    """Split ``B - log2(T)`` coordinate bits over the ``2(T-1)`` real dimensions.

    Every dimension gets the floor share; the remainder bits go to the
    lowest-indexed dimensions, or to randomly chosen ones when ``rng`` is
    supplied.
    """
    if not _is_power_of_two(T) or T < 2:
        raise ValueError("bit allocation needs T to be a power of 2")
    cell_bits = T.bit_length() - 1
    dims = 2 * (T - 1)
    coord_bits = B - cell_bits
    if coord_bits < dims:
        raise ValueError(f"B={B} leaves fewer than one bit per dimension for T={T}")
    base, rem = divmod(coord_bits, dims)
    widths = [base] * dims
    if rng is None:
        chosen = range(rem)
    else:
        chosen = rng.choice(dims, size=rem, replace=False)
    for j in chosen:
        widths[int(j)] += 1
    return tuple(widths)


class CubeSplit:
    """Cube-split constellation with per-dimension bit widths.

    Parameters
    ----------
    T : int
        Block length (number of cells), at least 2.
    widths : sequence of int
        Bits per real dimension, ``2(T-1)`` positive integers.
    """

    def __init__(self, T: int, widths: Sequence[int]):
        T = int(T)
        widths = tuple(int(b) for b in widths)
        if T < 2:
            raise ValueError("T must be at least 2")
        if len(widths) != 2 * (T - 1):
            raise ValueError(f"expected {2 * (T - 1)} bit widths, got {len(widths)}")
        if any(b < 1 for b in widths):
            raise ValueError("every bit width must be at least 1")
        self.T = T
        self.widths = widths
        self._grids = [coordinate_grid(b) for b in widths]
        self._wgrid = [inv_norm_cdf(g) for g in self._grids]

    @classmethod
    def symmetric(cls, T: int, b0: int) -> "CubeSplit":
        """CS(T, b0): every dimension carries ``b0`` bits."""
        return cls(T, [b0] * (2 * (T - 1)))

    @classmethod
    def from_total_bits(cls, T: int, B: int, rng: np.random.Generator | None = None) -> "CubeSplit":
        return cls(T, allocate_bits(T, B, rng))

    def __repr__(self):
        return f"CubeSplit(T={self.T}, widths={self.widths})"

    # -- sizes ---------------------------------------------------------------

    @property
    def dims(self) -> int:
        return 2 * (self.T - 1)

    @property
    def per_cell(self) -> int:
        return 1 << sum(self.widths)

    @property
    def size(self) -> int:
        return self.T * self.per_cell

    @property
    def labeled(self) -> bool:
        return _is_power_of_two(self.T)

    @property
    def cell_bits(self) -> int:
        self._require_labels()
        return self.T.bit_length() - 1

    @property
    def bits(self) -> int:
        """Total label length B."""
        return self.cell_bits + sum(self.widths)

    def _require_labels(self):
        if not self.labeled:
            raise ValueError("binary labeling requires T to be a power of 2")

    def grid(self, j: int) -> np.ndarray:
        return self._grids[j]

    # -- forward / inverse maps ---------------------------------------------

    def encode(self, cell: int, a) -> np.ndarray:
        """Symbol for cell ``cell`` (0-based) and coordinates ``a``."""
        a = np.asarray(a, dtype=float)
        if a.shape != (self.dims,):
            raise ValueError(f"expected {self.dims} coordinates")
        if np.any((a <= 0) | (a >= 1)):
            raise ValueError("coordinates must lie strictly inside (0, 1)")
        if not 0 <= cell < self.T:
            raise ValueError("cell index out of range")
        t = map_xi1(a[0::2], a[1::2])
        return self._assemble(np.array([cell]), np.atleast_1d(t)[None, :])[0]

    def _assemble(self, cells: np.ndarray, t: np.ndarray) -> np.ndarray:
        # place 1 at the cell position and t elsewhere, then normalize
        n = cells.shape[0]
        X = np.empty((n, self.T), dtype=complex)
        cols = np.arange(self.T)
        other = cols[None, :] != cells[:, None]
        X[~other] = 1.0
        X[other] = t.reshape(-1)
        X /= np.sqrt(1.0 + np.sum(np.abs(t) ** 2, axis=1))[:, None]
        return X

    def inverse_map(self, x, tie_break: bool = False) -> LocalCoordinates:
        """Cell index and local coordinates of a unit vector.

        Raises :class:`CellBoundaryError` when the two largest moduli tie
        within 1e-12, unless ``tie_break`` is set, in which case the lowest
        index wins.
        """
        x = np.asarray(x, dtype=complex).reshape(-1)
        if x.shape[0] != self.T:
            raise ValueError("dimension mismatch")
        mags = np.abs(x)
        cell = int(np.argmax(mags))
        if not tie_break:
            rest = np.delete(mags, cell)
            if mags[cell] - rest.max() <= 1e-12 * mags[cell]:
                raise CellBoundaryError("point lies on a cell boundary")
        t = np.delete(x, cell) / x[cell]
        w = _w_from_t(t)
        a1, a2 = inverse_xi1(t)
        a = np.empty(self.dims)
        a[0::2], a[1::2] = a1, a2
        return LocalCoordinates(cell, a, w, np.asarray(t))

    def locate(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched inverse map with the lowest-index tie rule.

        ``U`` has shape (n, T). Returns cells (n,) and coordinates (n, dims).
        """
        U = np.asarray(U, dtype=complex)
        n = U.shape[0]
        cells = np.argmax(np.abs(U), axis=1)
        pivot = U[np.arange(n), cells]
        keep = np.arange(self.T)[None, :] != cells[:, None]
        t = U[keep].reshape(n, self.T - 1) / pivot[:, None]
        a1, a2 = inverse_xi1(t)
        a = np.empty((n, self.dims))
        a[:, 0::2], a[:, 1::2] = a1, a2
        return cells, a

    def quantize(self, a: np.ndarray) -> np.ndarray:
        """Nearest grid position per dimension; exact midpoints go down."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        pos = np.empty(a.shape, dtype=np.int64)
        for j, b in enumerate(self.widths):
            n = 1 << b
            s = a[:, j] * n
            p = np.floor(s).astype(np.int64)
            p = np.where((s == p) & (p > 0), p - 1, p)
            pos[:, j] = np.clip(p, 0, n - 1)
        return pos

    # -- indexing -------------------------------------------------------------

    def index_of(self, cells, positions) -> np.ndarray:
        """Symbol index from cell and grid positions (Gray-labeled per dim)."""
        cells = np.asarray(cells, dtype=np.int64)
        positions = np.atleast_2d(np.asarray(positions, dtype=np.int64))
        idx = cells.copy()
        for j, b in enumerate(self.widths):
            idx = (idx << b) | gray_encode(positions[:, j])
        return idx

    def split_index(self, index) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of :meth:`index_of`."""
        idx = np.array(index, dtype=np.int64, ndmin=1, copy=True)
        pos = np.empty((idx.shape[0], self.dims), dtype=np.int64)
        for j in range(self.dims - 1, -1, -1):
            b = self.widths[j]
            pos[:, j] = gray_decode(idx & ((1 << b) - 1))
            idx >>= b
        return idx, pos

    def symbols_from_grid(self, cells, positions) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        positions = np.atleast_2d(np.asarray(positions, dtype=np.int64))
        w = np.empty((cells.shape[0], self.T - 1), dtype=complex)
        for k in range(self.T - 1):
            w[:, k] = self._wgrid[2 * k][positions[:, 2 * k]] + 1j * self._wgrid[2 * k + 1][positions[:, 2 * k + 1]]
        return self._assemble(cells, _t_from_w(w).reshape(cells.shape[0], self.T - 1))

    def symbol(self, index: int) -> np.ndarray:
        cells, pos = self.split_index(index)
        return self.symbols_from_grid(cells, pos)[0]

    def coordinates_of(self, index) -> tuple[np.ndarray, np.ndarray]:
        """Cells and coordinate values (grid points) of symbol indices."""
        cells, pos = self.split_index(index)
        a = np.empty(pos.shape)
        for j in range(self.dims):
            a[:, j] = self._grids[j][pos[:, j]]
        return cells, a

    def symbols(self) -> np.ndarray:
        """All symbols, ordered by symbol index; shape (size, T)."""
        return self._symbols

    @cached_property
    def _symbols(self) -> np.ndarray:
        if self.size > MAX_ENUMERATION:
            raise ValueError(f"constellation size {self.size} exceeds enumeration guard")
        idx = np.arange(self.size, dtype=np.int64)
        cells, pos = self.split_index(idx)
        X = self.symbols_from_grid(cells, pos)
        X.setflags(write=False)
        return X

    def enumerate(self):
        """Yield ``(label, symbol)`` pairs in index order (label is a bit string)."""
        X = self.symbols()
        for k in range(self.size):
            yield (self.label_string(k) if self.labeled else None), X[k]

    # -- labels ---------------------------------------------------------------

    def labels(self) -> np.ndarray:
        """(size, B) uint8 matrix of labels, MSB first."""
        self._require_labels()
        return self._labels

    @cached_property
    def _labels(self) -> np.ndarray:
        B = self.bits
        idx = np.arange(self.size, dtype=np.int64)
        L = ((idx[:, None] >> np.arange(B - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
        L.setflags(write=False)
        return L

    def label_string(self, index: int) -> str:
        self._require_labels()
        return format(int(index), f"0{self.bits}b")

    def label_of(self, cell: int, a) -> np.ndarray:
        """Label bits of the grid point nearest ``a`` in cell ``cell``."""
        self._require_labels()
        pos = self.quantize(np.asarray(a, dtype=float)[None, :])
        k = int(self.index_of(np.array([cell]), pos)[0])
        return self._label_bits(k)

    def _label_bits(self, k: int) -> np.ndarray:
        B = self.bits
        return np.array([(k >> (B - 1 - s)) & 1 for s in range(B)], dtype=np.uint8)

    def label_to_index(self, label) -> int:
        self._require_labels()
        bits = [int(c) for c in label] if isinstance(label, str) else [int(b) for b in label]
        if len(bits) != self.bits or any(b not in (0, 1) for b in bits):
            raise ValueError(f"label must have {self.bits} binary digits")
        k = 0
        for b in bits:
            k = (k << 1) | b
        return k

    def label_to_symbol(self, label) -> np.ndarray:
        return self.symbol(self.label_to_index(label))

    def label_to_coordinates(self, label) -> tuple[int, np.ndarray]:
        cells, a = self.coordinates_of(self.label_to_index(label))
        return int(cells[0]), a[0]

    def cell_of_index(self, index) -> np.ndarray:
        return np.asarray(index, dtype=np.int64) >> sum(self.widths)

    # -- decoding helper --------------------------------------------------------

    def nearest_index(self, U: np.ndarray) -> np.ndarray:
        """Greedy localization of unit vectors: cell by largest modulus, then
        per-dimension quantization of the local coordinates."""
        cells, a = self.locate(U)
        return self.index_of(cells, self.quantize(a))


# --------------------------------------------------------------------------
# closed-form distances
# --------------------------------------------------------------------------


def cs_t1_constants(T: int) -> tuple[float, float]:
    """``(m, c)`` with ``m = Ninv(3/4)`` and ``c = (1 - e^{-m^2}) / (1 + e^{-m^2})``."""
    m = inv_norm_cdf(0.75)
    e = math.exp(-m * m)
    return m, (1.0 - e) / (1.0 + e)


def mindist_cs_t1(T: int) -> float:
    """Minimum chordal distance of CS(T, 1)."""
    if T < 2:
        raise ValueError("T must be at least 2")
    _, c = cs_t1_constants(T)
    z = 1.0 - (1.0 + 1.0j) / (1.0 / c + T - 1)
    return math.sqrt(1.0 - abs(z) ** 2)


def conjectured_mindist(T: int, b0: int) -> float:
    """Distance of the edge-midpoint pair of CS(T, b0), conjectured minimal."""
    if T < 2 or b0 < 1:
        raise ValueError("need T >= 2 and b0 >= 1")
    h = 2.0 ** (-b0 - 1)
    m0 = inv_norm_cdf(h)
    m1 = inv_norm_cdf(0.5 + h)
    alpha = math.tanh(0.25 * (m0 * m0 + m1 * m1))
    beta = 1.0 + (T - 2) * math.tanh(0.5 * m0 * m0)
    phi = math.atan(m1 / m0)
    k = alpha / (alpha + beta)
    # |1 + k(e^{2j phi} - 1)|^2 = 1 - 4 k (1 - k) sin^2(phi), written without cancellation
    return 2.0 * abs(math.sin(phi)) * math.sqrt(k * (1.0 - k))
