"""Symbol decoders and bit LLRs for Grassmannian constellations.

Batched routines take ``Y`` with shape ``(n, T, N)``; single-frame wrappers
accept a ``(T, N)`` matrix. LLRs follow ``log p(b=1 | Y) / p(b=0 | Y)`` and
are clamped to +/- ``LLR_CLAMP``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from .constellation import CubeSplit, LocalCoordinates
from .numerics import DegenerateSpectrumError, dominant_left_singular_vectors

__all__ = [
    "LLR_CLAMP",
    "EXACT_GUARD",
    "SymbolSet",
    "LlrFrame",
    "NeighborTable",
    "decision_metric",
    "llr_scale",
    "ml_decode",
    "ml_decode_batch",
    "greedy_decode",
    "greedy_decode_batch",
    "exact_llr",
    "exact_llr_batch",
    "approx_llr",
    "approx_llr_batch",
    "build_neighbor_table",
    "msd_cell_stage",
    "msd_coord_stage",
    "msd_cell_stage_batch",
    "msd_coord_stage_batch",
    "write_llr_csv",
]

LLR_CLAMP = 80.0
EXACT_GUARD = 2**20
_CHUNK_ELEMS = 2**22


@dataclass(frozen=True)
class SymbolSet:
    """A plain labeled (or unlabeled) constellation given by its symbols."""

    points: np.ndarray
    label_bits: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=complex)
        P = P / np.linalg.norm(P, axis=1, keepdims=True)
        object.__setattr__(self, "points", P)
        if self.label_bits is not None:
            L = np.asarray(self.label_bits, dtype=np.uint8)
            if L.shape[0] != P.shape[0]:
                raise ValueError("one label per symbol expected")
            object.__setattr__(self, "label_bits", L)

    @property
    def T(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def labeled(self) -> bool:
        return self.label_bits is not None

    @property
    def bits(self) -> int:
        if self.label_bits is None:
            raise ValueError("constellation carries no labels")
        return self.label_bits.shape[1]

    def symbols(self) -> np.ndarray:
        return self.points

    def labels(self) -> np.ndarray:
        if self.label_bits is None:
            raise ValueError("constellation carries no labels")
        return self.label_bits


@dataclass
class LlrFrame:
    """Per-bit LLRs for one received block.

    ``positions`` lists the label bit indices the values refer to; ``stage``
    is ``"full"``, ``"cell"`` or ``"coordinate"``.
    """

    values: np.ndarray
    stage: str = "full"
    positions: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.positions is None:
            self.positions = np.arange(self.values.shape[0])

    def hard_bits(self) -> np.ndarray:
        return (self.values > 0).astype(np.uint8)


def _stack(Y) -> tuple[np.ndarray, bool]:
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim == 2:
        return Y[None], True
    if Y.ndim != 3:
        raise ValueError("Y must be T x N or a stack n x T x N")
    return Y, False


def _check_dims(constellation, Y: np.ndarray):
    if Y.shape[1] != constellation.T:
        raise ValueError(f"Y has {Y.shape[1]} rows, constellation needs T={constellation.T}")


def llr_scale(rho: float, T: int) -> float:
    """Weight ``rho T / (1 + rho T)`` applied to ``||Y^H c||^2`` in likelihoods."""
    return rho * T / (1.0 + rho * T)


def decision_metric(points: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``||Y_n^H c_m||^2`` for every frame n and symbol m; shape (n, M)."""
    P = np.asarray(points, dtype=complex)
    n, _, N = Y.shape
    M = P.shape[0]
    out = np.empty((n, M))
    step = max(1, _CHUNK_ELEMS // max(1, M * N))
    Pc = P.conj()
    for s in range(0, n, step):
        Z = np.einsum("mt,ntk->nmk", Pc, Y[s:s + step], optimize=True)
        out[s:s + step] = np.sum(Z.real**2 + Z.imag**2, axis=2)
    return out


# --------------------------------------------------------------------------
# hard decoders
# --------------------------------------------------------------------------


def ml_decode_batch(constellation, Y) -> np.ndarray:
    """Exhaustive ML decisions (lowest index on ties)."""
    Y, _ = _stack(Y)
    _check_dims(constellation, Y)
    P = constellation.symbols()
    n = Y.shape[0]
    best = np.empty(n, dtype=np.int64)
    step = max(1, _CHUNK_ELEMS // max(1, P.shape[0] * Y.shape[2]))
    for s in range(0, n, step):
        best[s:s + step] = np.argmax(decision_metric(P, Y[s:s + step]), axis=1)
    return best


def ml_decode(constellation, Y) -> int:
    """Index of the symbol maximizing ``||Y^H x||^2``."""
    return int(ml_decode_batch(constellation, Y)[0])


def greedy_decode_batch(cs: CubeSplit, Y, tol: float = 1e-10, max_iters: int = 500):
    """Greedy cube-split decoding of a stack of blocks.

    Returns ``(indices, erasures)``. Erased frames (degenerate leading
    singular values) still carry a valid symbol index computed from an
    arbitrary dominant direction; callers count them as errors.
    """
    Y, _ = _stack(Y)
    _check_dims(cs, Y)
    U, erasures = dominant_left_singular_vectors(Y, tol, max_iters)
    return cs.nearest_index(U), erasures


def greedy_decode(cs: CubeSplit, Y, tol: float = 1e-10, max_iters: int = 500):
    """Greedy decoding of one block.

    Step 1 takes the dominant left singular vector ``u`` of ``Y``; step 2
    picks the cell of the largest ``|u_j|`` (lowest index on ties), inverts
    the cell map and rounds each coordinate to the nearest grid point.

    Returns ``(index, LocalCoordinates)`` where the coordinates are the
    quantized grid values of the decision.

    Raises
    ------
    DegenerateSpectrumError
        When ``Y`` has no unique dominant direction (decoding erasure).
    """
    Yb, _ = _stack(Y)
    idx, erased = greedy_decode_batch(cs, Yb, tol, max_iters)
    if erased[0]:
        raise DegenerateSpectrumError("decoding erasure: degenerate singular values")
    k = int(idx[0])
    x = cs.symbol(k)
    loc = cs.inverse_map(x, tie_break=True)
    cells, a = cs.coordinates_of(k)
    return k, LocalCoordinates(int(cells[0]), a[0], loc.w, loc.t)


# --------------------------------------------------------------------------
# soft outputs
# --------------------------------------------------------------------------


def _clamp(v: np.ndarray) -> np.ndarray:
    return np.clip(v, -LLR_CLAMP, LLR_CLAMP)


def _bit_llrs(scores: np.ndarray, labels: np.ndarray, positions: Iterable[int]) -> np.ndarray:
    # scores: (n, M) log-likelihoods up to a common constant
    cols = []
    for j in positions:
        ones = labels[:, j] == 1
        if not ones.any() or ones.all():
            raise ValueError(f"bit {j} takes a single value over the candidate set")
        l1 = logsumexp(scores[:, ones], axis=1)
        l0 = logsumexp(scores[:, ~ones], axis=1)
        cols.append(l1 - l0)
    return _clamp(np.stack(cols, axis=1))


def exact_llr_batch(constellation, Y, rho: float) -> np.ndarray:
    """Exact per-bit LLRs by enumeration of the constellation; shape (n, B)."""
    if constellation.size > EXACT_GUARD:
        raise ValueError(f"exact LLR limited to {EXACT_GUARD} symbols")
    Y, _ = _stack(Y)
    _check_dims(constellation, Y)
    labels = constellation.labels()
    scores = llr_scale(rho, constellation.T) * decision_metric(constellation.symbols(), Y)
    return _bit_llrs(scores, labels, range(labels.shape[1]))


def exact_llr(constellation, Y, rho: float) -> LlrFrame:
    return LlrFrame(exact_llr_batch(constellation, Y, rho)[0])


@dataclass(frozen=True)
class NeighborTable:
    """``index[c, j, b]`` lists the ``eta`` symbols nearest to symbol ``c``
    whose bit ``j`` equals ``b`` (nearest first, ties to the lower index)."""

    index: np.ndarray  # (M, B, 2, eta)
    eta: int

    @property
    def size(self) -> int:
        return self.index.shape[0]


def build_neighbor_table(constellation, eta: int, chunk: int = 256) -> NeighborTable:
    """Precompute eta-nearest same-bit-value sets for every symbol and bit."""
    labels = constellation.labels()
    P = constellation.symbols()
    M, B = labels.shape
    if eta < 1:
        raise ValueError("eta must be positive")
    for j in range(B):
        n1 = int(labels[:, j].sum())
        if eta > min(n1, M - n1):
            raise ValueError(f"eta={eta} exceeds the size of a bit class for bit {j}")
    table = np.empty((M, B, 2, eta), dtype=np.int64)
    members = [[np.flatnonzero(labels[:, j] == b) for b in (0, 1)] for j in range(B)]
    for s in range(0, M, chunk):
        corr = np.abs(P[s:s + chunk].conj() @ P.T) ** 2  # larger = nearer
        for j in range(B):
            for b in (0, 1):
                cand = members[j][b]
                # stable sort on -corr keeps lower indices first among ties
                order = np.argsort(-corr[:, cand], axis=1, kind="stable")[:, :eta]
                table[s:s + chunk, j, b] = cand[order]
    return NeighborTable(table, eta)


def _greedy_or_ml(constellation, Y):
    if isinstance(constellation, CubeSplit):
        idx, _ = greedy_decode_batch(constellation, Y)
        return idx
    return ml_decode_batch(constellation, Y)


def approx_llr_batch(constellation, table: NeighborTable | None, Y, rho: float) -> np.ndarray:
    """Neighbourhood LLRs around the greedy decision.

    Each bit's two sums run only over the precomputed ``eta`` nearest
    symbols of the decoded symbol having that bit equal to 0 or 1. With
    ``table=None`` and a cube-split constellation the candidate sets are
    built on the fly (see :func:`_on_the_fly_sets`).
    """
    Y, _ = _stack(Y)
    _check_dims(constellation, Y)
    kappa = llr_scale(rho, constellation.T)
    hat = _greedy_or_ml(constellation, Y)
    n = Y.shape[0]
    if table is None:
        if not isinstance(constellation, CubeSplit):
            raise ValueError("on-the-fly neighbour sets need a cube-split constellation")
        return np.stack(
            [_on_the_fly_llr(constellation, Y[k], hat[k], kappa) for k in range(n)]
        )
    P = constellation.symbols()
    sets = table.index[hat]  # (n, B, 2, eta)
    B = sets.shape[1]
    cand = P[sets.reshape(n, -1)]  # (n, B*2*eta, T)
    Z = np.einsum("nct,ntk->nck", cand.conj(), Y)
    scores = kappa * np.sum(Z.real**2 + Z.imag**2, axis=2)
    scores = scores.reshape(n, B, 2, table.eta)
    llr = logsumexp(scores[:, :, 1, :], axis=2) - logsumexp(scores[:, :, 0, :], axis=2)
    return _clamp(llr)


def approx_llr(constellation, table: NeighborTable | None, Y, rho: float) -> LlrFrame:
    return LlrFrame(approx_llr_batch(constellation, table, Y, rho)[0])


def _on_the_fly_sets(cs: CubeSplit, x_index: int) -> np.ndarray:
    # candidate pool: the decoded cell, plus the image of the decoded symbol
    # in every other cell together with its one-step grid neighbours
    cells, pos = cs.split_index(x_index)
    cell = int(cells[0])
    pool = [np.arange(cell * cs.per_cell, (cell + 1) * cs.per_cell)]
    x = cs.symbol(x_index)
    for k in range(cs.T):
        if k == cell or x[k] == 0:
            continue
        u = x.copy()
        u[k], u[cell] = x[cell], x[k]  # swap pivot so the image lands in cell k
        c_img, a_img = cs.locate(u[None, :])
        base = cs.quantize(a_img)[0]
        local = [base]
        for d in range(cs.dims):
            for step in (-1, 1):
                p = base.copy()
                p[d] += step
                if 0 <= p[d] < (1 << cs.widths[d]):
                    local.append(p)
        local = np.array(local)
        pool.append(cs.index_of(np.full(len(local), c_img[0]), local))
    return np.unique(np.concatenate(pool))


def _on_the_fly_llr(cs: CubeSplit, Y: np.ndarray, hat: int, kappa: float) -> np.ndarray:
    pool = _on_the_fly_sets(cs, int(hat))
    P = cs.symbols_from_grid(*cs.split_index(pool))
    B = cs.bits
    labels = ((pool[:, None] >> np.arange(B - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
    scores = kappa * decision_metric(P, Y[None])[0]
    out = np.empty(B)
    for j in range(B):
        ones = labels[:, j] == 1
        l1 = logsumexp(scores[ones]) if ones.any() else -np.inf
        l0 = logsumexp(scores[~ones]) if (~ones).any() else -np.inf
        out[j] = l1 - l0
    return _clamp(np.nan_to_num(out, nan=0.0, posinf=LLR_CLAMP, neginf=-LLR_CLAMP))


# --------------------------------------------------------------------------
# multistage decoding
# --------------------------------------------------------------------------


def msd_cell_stage_batch(cs: CubeSplit, Y, rho: float) -> np.ndarray:
    """Cell-bit LLRs over the whole constellation; shape (n, log2 T)."""
    Y, _ = _stack(Y)
    _check_dims(cs, Y)
    scores = llr_scale(rho, cs.T) * decision_metric(cs.symbols(), Y)
    return _bit_llrs(scores, cs.labels(), range(cs.cell_bits))


def msd_coord_stage_batch(cs: CubeSplit, Y, rho: float, cells) -> np.ndarray:
    """Coordinate-bit LLRs restricted to the symbols of the given cells."""
    Y, _ = _stack(Y)
    _check_dims(cs, Y)
    cells = np.broadcast_to(np.asarray(cells, dtype=np.int64), (Y.shape[0],))
    if np.any((cells < 0) | (cells >= cs.T)):
        raise ValueError("cell index out of range")
    kappa = llr_scale(rho, cs.T)
    per = cs.per_cell
    local_labels = cs.labels()[:per, cs.cell_bits:]
    out = np.empty((Y.shape[0], local_labels.shape[1]))
    P = cs.symbols()
    for c in np.unique(cells):
        rows = np.flatnonzero(cells == c)
        scores = kappa * decision_metric(P[c * per:(c + 1) * per], Y[rows])
        out[rows] = _bit_llrs(scores, local_labels, range(local_labels.shape[1]))
    return out


def msd_cell_stage(cs: CubeSplit, Y, rho: float) -> LlrFrame:
    v = msd_cell_stage_batch(cs, Y, rho)[0]
    return LlrFrame(v, "cell", np.arange(cs.cell_bits))


def msd_coord_stage(cs: CubeSplit, Y, rho: float, cell: int) -> LlrFrame:
    v = msd_coord_stage_batch(cs, Y, rho, cell)[0]
    return LlrFrame(v, "coordinate", np.arange(cs.cell_bits, cs.bits))


def write_llr_csv(stream, llrs: np.ndarray, comments: Iterable[str] = ()) -> None:
    """Rows ``frame, bit, llr`` for external FEC tooling."""
    for line in comments:
        stream.write(f"# {line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["frame", "bit", "llr"])
    L = np.atleast_2d(llrs)
    for f, row in enumerate(L):
        for j, v in enumerate(row):
            writer.writerow([f, j, f"{v:.17g}"])
