"""Geometry on the Grassmannian of lines G(C^T, 1).

A line is stored as a unit-norm complex vector; two vectors that differ by
a unit-modulus factor are the same point. Constellations are handled as
``(size, T)`` complex arrays throughout the package.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "GrassmannPoint",
    "DistanceSpectrum",
    "as_points",
    "chordal_distance",
    "packing_bounds",
    "distance_spectrum",
    "min_distance",
    "random_points",
    "packing_objective",
    "riemannian_pack",
    "PackResult",
    "write_symbols_csv",
    "read_symbols_csv",
]

_NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    """A line in C^T represented by a unit vector.

    Equality is phase invariant: ``x`` and ``exp(1j*theta) * x`` compare equal.
    """

    coords: np.ndarray

    def __post_init__(self):
        v = np.array(self.coords, dtype=complex).reshape(-1)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("a Grassmann point needs a nonzero vector")
        if abs(n - 1.0) > _NORM_TOL:
            v = v / n
        v.setflags(write=False)
        object.__setattr__(self, "coords", v)

    @property
    def T(self) -> int:
        return self.coords.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrassmannPoint):
            return NotImplemented
        return self.T == other.T and chordal_distance(self, other) < 1e-12

    def __hash__(self):  # points are compared up to phase; no useful hash
        raise TypeError("GrassmannPoint is unhashable")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


@dataclass(frozen=True)
class DistanceSpectrum:
    """Nearest-neighbour chordal distance of every symbol."""

    nearest: np.ndarray  # per-symbol nearest-neighbour distance
    neighbor: np.ndarray  # index of that nearest neighbour
    min_distance: float
    pair: tuple[int, int]


def as_points(points) -> np.ndarray:
    """Stack points (GrassmannPoint, vectors, or an array) into (n, T)."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=complex)
    else:
        arr = np.array([np.asarray(p, dtype=complex) for p in points])
    if arr.ndim != 2:
        raise ValueError("points must form a (n, T) array")
    return arr


def chordal_distance(x, y) -> float:
    """``sqrt(1 - |x^H y|^2)`` for unit vectors."""
    xv = np.asarray(x, dtype=complex).reshape(-1)
    yv = np.asarray(y, dtype=complex).reshape(-1)
    # Lagrange identity: 1 - |x^H y|^2 = sum_{i<j} |x_i y_j - x_j y_i|^2,
    # which stays accurate when the lines nearly coincide
    W = np.outer(xv, yv)
    d2 = 0.5 * float(np.sum(np.abs(W - W.T) ** 2))
    return math.sqrt(min(1.0, d2))


def packing_bounds(T: int, size: int) -> tuple[float, float]:
    """Lower and upper bounds on the best achievable minimum distance.

    Returns ``(size**(-1/(2(T-1))), min(1, 2*size**(-1/(2(T-1)))))``.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    if size < 1:
        raise ValueError("size must be positive")
    lower = float(size) ** (-1.0 / (2 * (T - 1)))
    return lower, min(1.0, 2.0 * lower)


def distance_spectrum(points, chunk: int = 1024) -> DistanceSpectrum:
    """Exhaustive nearest-neighbour scan (O(n^2), chunked over rows)."""
    C = as_points(points)
    n = C.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    best_corr = np.empty(n)
    best_idx = np.empty(n, dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        corr = np.abs(C[start:stop].conj() @ C.T) ** 2
        corr[np.arange(stop - start), np.arange(start, stop)] = -1.0
        idx = np.argmax(corr, axis=1)
        best_idx[start:stop] = idx
        best_corr[start:stop] = corr[np.arange(stop - start), idx]
    nearest = np.sqrt(np.clip(1.0 - best_corr, 0.0, None))
    k = int(np.argmin(nearest))
    j = int(best_idx[k])
    return DistanceSpectrum(nearest, best_idx, float(nearest[k]), (min(k, j), max(k, j)))


def min_distance(points) -> float:
    return distance_spectrum(points).min_distance


def random_points(T: int, size: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((size, T)) + 1j * rng.standard_normal((size, T))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# --------------------------------------------------------------------------
# numerical packing
# --------------------------------------------------------------------------


def _pair_abs(C: np.ndarray):
    G = C.conj() @ C.T  # G[j, l] = c_j^H c_l
    iu = np.triu_indices(C.shape[0], k=1)
    return G, iu


def packing_objective(C: np.ndarray, epsilon: float) -> float:
    """Smoothed max-correlation: ``log sum_{j<l} exp(|c_j^H c_l| / eps)``."""
    G, iu = _pair_abs(C)
    return float(logsumexp(np.abs(G[iu]) / epsilon))


def _objective_and_grad(C: np.ndarray, epsilon: float):
    G, iu = _pair_abs(C)
    A = np.abs(G)
    vals = A[iu] / epsilon
    f = logsumexp(vals)
    W = np.zeros_like(A)
    W[iu] = np.exp(vals - f)
    W = W + W.T
    # d|g_jl| / d conj(c_j) = conj(g_jl) c_l / (2 |g_jl|); real gradient doubles it
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(A > 0, np.conj(G) / np.where(A > 0, A, 1.0), 0.0)
    # row j: sum_l W_jl * conj(G_jl)/|G_jl| * c_l  (G_jl = c_j^H c_l)
    grad = ((W * phase) @ C) / epsilon
    return float(f), grad


def _project(C: np.ndarray, D: np.ndarray) -> np.ndarray:
    # horizontal tangent space: remove the complex component along c_j
    return D - C * np.sum(C.conj() * D, axis=1, keepdims=True)


def _retract(C: np.ndarray) -> np.ndarray:
    return C / np.linalg.norm(C, axis=1, keepdims=True)


@dataclass
class PackResult:
    points: np.ndarray
    min_distance: float
    initial_min_distance: float
    objective_history: list[float]


def riemannian_pack(
    T: int,
    size: int,
    epsilon: float = 0.01,
    iters: int = 500,
    seed: int = 0,
    armijo: float = 1e-4,
    shrink: float = 0.5,
) -> PackResult:
    """Spread ``size`` lines in C^T by descending the smoothed packing objective.

    Plain Riemannian gradient descent: tangent-space projection of the
    Euclidean gradient, renormalization as the retraction, and Armijo
    backtracking. The epsilon is fixed (no annealing). The returned points
    are the iterate with the largest minimum distance seen, which includes
    the random starting point.
    """
    if size < 2:
        raise ValueError("size must be at least 2")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    C = random_points(T, size, rng)
    init_d = min_distance(C)
    best, best_d = C.copy(), init_d
    f, g = _objective_and_grad(C, epsilon)
    history = [f]
    step = 1.0
    for _ in range(iters):
        d = -_project(C, g)
        slope = -float(np.sum(np.abs(d) ** 2))
        if -slope < 1e-24:
            break
        t = step
        accepted = False
        while t > 1e-16:
            Cn = _retract(C + t * d)
            fn = packing_objective(Cn, epsilon)
            if fn <= f + armijo * t * slope:
                accepted = True
                break
            t *= shrink
        if not accepted:
            break
        C = Cn
        f, g = _objective_and_grad(C, epsilon)
        history.append(f)
        step = 2.0 * t
        dn = min_distance(C)
        if dn > best_d:
            best, best_d = C.copy(), dn
    return PackResult(best, best_d, init_d, history)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _symbol_header(T: int) -> list[str]:
    cols = []
    for k in range(T):
        cols += [f"re_{k}", f"im_{k}"]
    return cols


def write_symbols_csv(
    stream,
    points,
    labels: Sequence[str] | None = None,
    comments: Iterable[str] = (),
) -> None:
    """Write one row per symbol with 17 significant digits.

    When ``labels`` is given a trailing ``label`` column holds the bit
    string, MSB first.
    """
    C = as_points(points)
    for line in comments:
        stream.write(f"# {line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    header = _symbol_header(C.shape[1])
    if labels is not None:
        header.append("label")
    writer.writerow(header)
    for i, row in enumerate(C):
        cells = []
        for z in row:
            cells += [f"{z.real:.17g}", f"{z.imag:.17g}"]
        if labels is not None:
            cells.append(labels[i])
        writer.writerow(cells)


def read_symbols_csv(stream) -> tuple[np.ndarray, list[str] | None]:
    """Inverse of :func:`write_symbols_csv`; comment lines are skipped."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = [line for line in stream if line.strip() and not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    has_label = header[-1] == "label"
    ncols = len(header) - (1 if has_label else 0)
    if ncols % 2 or header[:ncols] != _symbol_header(ncols // 2):
        raise ValueError("unexpected symbol CSV header")
    pts, labels = [], []
    for row in reader:
        vals = [float(v) for v in row[:ncols]]
        pts.append([complex(vals[2 * k], vals[2 * k + 1]) for k in range(ncols // 2)])
        if has_label:
            labels.append(row[-1])
    return np.array(pts, dtype=complex), (labels if has_label else None)
