"""Reference schemes: coherent pilot + QAM, exp-map and Fourier constellations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .channel import RateEstimate, block_rng, complex_normal, run_blocks, trial_blocks
from .codec import LLR_CLAMP, SymbolSet
from .constellation import gray_decode, gray_encode
from .grassmann import min_distance
from .numerics import dominant_left_singular_vectors, exp_integral_e1

__all__ = [
    "Qam",
    "PilotConfig",
    "pilot_optimal_power",
    "pilot_config",
    "pilot_rate_lower_bound",
    "pilot_transmit",
    "mmse_estimate",
    "equalize",
    "pilot_slot_loglik",
    "pilot_ml_detect",
    "pilot_llr",
    "pilot_qam_rate",
    "pilot_error_rates",
    "ExpMap",
    "expmap_constellation",
    "expmap_greedy_decode",
    "fourier_constellation",
]


# --------------------------------------------------------------------------
# QAM
# --------------------------------------------------------------------------


class Qam:
    """Gray-labeled QAM with unit average energy; symbol index equals label value.

    Even ``bits`` give a square grid. Odd ``bits >= 5`` give the usual cross
    constellation by default (``shape="cross"``): the outer columns of the
    ``2^ceil(b/2) x 2^floor(b/2)`` rectangle are folded onto the top and
    bottom arms, which keeps the labeling Gray except across the fold.
    ``shape="rect"`` keeps the rectangle.
    """

    def __init__(self, bits: int, shape: str = "auto"):
        if bits < 1:
            raise ValueError("QAM needs at least one bit")
        if shape not in ("auto", "cross", "rect"):
            raise ValueError(f"unknown QAM shape {shape!r}")
        self.bits = int(bits)
        self.bits_i = (bits + 1) // 2
        self.bits_q = bits // 2
        self.MI = 1 << self.bits_i
        self.MQ = 1 << self.bits_q
        foldable = bits % 2 == 1 and bits >= 5
        if shape == "cross" and not foldable:
            raise ValueError("cross QAM needs an odd number of bits >= 5")
        self.shape = "cross" if (foldable and shape != "rect") else "rect"

    @property
    def order(self) -> int:
        return 1 << self.bits

    @cached_property
    def points(self) -> np.ndarray:
        idx = np.arange(self.order)
        gi, gq = idx >> self.bits_q, idx & (self.MQ - 1)
        re = 2 * gray_decode(gi) - (self.MI - 1)
        im = 2 * gray_decode(gq) - (self.MQ - 1)
        if self.shape == "cross":
            half = 3 * (1 << ((self.bits - 3) // 2)) - 1  # largest odd level kept
            shift = half - (self.MQ - 1)
            out = np.abs(re) > half
            re_new = np.sign(re[out]) * np.abs(im[out])
            im_new = np.sign(im[out]) * (np.abs(re[out]) - shift)
            re, im = re.copy(), im.copy()
            re[out], im[out] = re_new, im_new
        pts = (re + 1j * im).astype(complex)
        pts /= math.sqrt(np.mean(np.abs(pts) ** 2))
        pts.setflags(write=False)
        return pts

    @property
    def scale(self) -> float:
        # distance from a level-1 point to the origin along one axis
        return float(np.min(np.abs(self.points.real)))

    @cached_property
    def labels(self) -> np.ndarray:
        idx = np.arange(self.order)
        L = ((idx[:, None] >> np.arange(self.bits - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
        L.setflags(write=False)
        return L

    def hard_decision(self, z) -> np.ndarray:
        """Nearest QAM index for each complex sample."""
        z = np.asarray(z, dtype=complex)
        if self.shape == "cross":
            flat = z.reshape(-1)
            out = np.empty(flat.shape[0], dtype=np.int64)
            for s in range(0, flat.shape[0], 4096):
                d = np.abs(flat[s:s + 4096, None] - self.points[None, :])
                out[s:s + 4096] = np.argmin(d, axis=1)
            return out.reshape(z.shape)
        u = z / self.scale
        pi_ = np.clip(np.floor((u.real + self.MI) / 2.0), 0, self.MI - 1).astype(np.int64)
        pq = np.clip(np.floor((u.imag + self.MQ) / 2.0), 0, self.MQ - 1).astype(np.int64)
        return (gray_encode(pi_) << self.bits_q) | gray_encode(pq)


# --------------------------------------------------------------------------
# pilot-based scheme
# --------------------------------------------------------------------------


def pilot_optimal_power(rho: float, T: int) -> tuple[float, float]:
    """Pilot and data powers maximizing the effective SNR."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if T < 2:
        raise ValueError("T must be at least 2")
    if T == 2:
        rt = rho
    else:
        s = math.sqrt(T - 1 + rho * T)
        rt = s * (math.sqrt((T - 1) * (1 + rho * T)) - s) / (T - 2)
    rd = (rho * T - rt) / (T - 1)
    return rt, rd


def _effective_snr(rt: float, rd: float) -> float:
    return rt * rd / (1.0 + rt + rd)


@dataclass(frozen=True)
class PilotConfig:
    rho: float
    T: int
    N: int
    rho_tau: float
    rho_d: float
    slot_bits: tuple[int, ...]
    qam_shape: str = "auto"

    @property
    def rho_eff(self) -> float:
        return _effective_snr(self.rho_tau, self.rho_d)

    @property
    def bits(self) -> int:
        return sum(self.slot_bits)

    @cached_property
    def qams(self) -> tuple[Qam, ...]:
        return tuple(Qam(b, self.qam_shape) for b in self.slot_bits)


def pilot_config(rho: float, T: int, N: int, B: int, qam_shape: str = "auto") -> PilotConfig:
    """Optimal powers and per-slot QAM sizes for ``B`` bits per block.

    Bits are spread over the ``T - 1`` data slots; any remainder goes one
    bit each to the lowest-index slots.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if B < T - 1:
        raise ValueError("need at least one bit per data slot")
    rt, rd = pilot_optimal_power(rho, T)
    base, extra = divmod(B, T - 1)
    bits = tuple(base + (1 if j < extra else 0) for j in range(T - 1))
    return PilotConfig(rho, T, N, rt, rd, bits, qam_shape)


def pilot_rate_lower_bound(rho: float, N: int, T: int) -> float:
    """Gaussian-input rate lower bound of the pilot scheme, closed form.

    ``(1 - 1/T) E[log2(1 + rho_eff ||h||^2)]`` with ``h ~ CN(0, I_N)``,
    expanded with factorial sums and ``E1``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    rt, rd = pilot_optimal_power(rho, T)
    a = _effective_snr(rt, rd)
    inv = 1.0 / a
    # e^{1/a} E1(1/a); scaled form avoids overflow at low SNR
    base = _exp_e1(inv)
    total = 0.0
    for n in range(1, N + 1):
        # 1/(N-n)!: the Gamma(N) density contributes 1/(N-1)! to the (N-1)!/(N-n)! weight
        coef = math.exp(-math.lgamma(N - n + 1)) * (-inv) ** (N - n)
        inner = base + math.fsum(math.factorial(m - 1) * (-a) ** m for m in range(1, N - n + 1))
        total += coef * inner
    return (T - 1) / T * math.log2(math.e) * total


def _exp_e1(x: float) -> float:
    if x < 700.0:
        return math.exp(x) * exp_integral_e1(x)
    # asymptotic series e^x E1(x) ~ (1/x) sum (-1)^k k! / x^k
    return sum((-1) ** k * math.factorial(k) / x ** (k + 1) for k in range(8))


def pilot_transmit(cfg: PilotConfig, data: np.ndarray, rng: np.random.Generator):
    """Simulate pilot blocks; ``data`` holds QAM indices, shape (n, T-1).

    Returns ``(Y, h)`` with ``Y`` of shape (n, T, N).
    """
    data = np.asarray(data, dtype=np.int64)
    n = data.shape[0]
    if data.shape[1] != cfg.T - 1:
        raise ValueError("one QAM index per data slot expected")
    X = np.stack([q.points[data[:, j]] for j, q in enumerate(cfg.qams)], axis=1)
    h = complex_normal(rng, (n, cfg.N))
    Z = complex_normal(rng, (n, cfg.T, cfg.N))
    Y = np.empty((n, cfg.T, cfg.N), dtype=complex)
    Y[:, 0] = math.sqrt(cfg.rho_tau) * h + Z[:, 0]
    Y[:, 1:] = math.sqrt(cfg.rho_d) * X[:, :, None] * h[:, None, :] + Z[:, 1:]
    return Y, h


def mmse_estimate(y_tau, rho_tau: float) -> np.ndarray:
    """MMSE channel estimate from the pilot row."""
    return math.sqrt(rho_tau) / (1.0 + rho_tau) * np.asarray(y_tau)


def equalize(Yd, hhat, rho_d: float, mode: str = "zf") -> np.ndarray:
    """Linear equalization of the data rows; returns (..., T-1) symbol estimates."""
    Yd = np.asarray(Yd, dtype=complex)
    hhat = np.asarray(hhat, dtype=complex)
    energy = np.sum(np.abs(hhat) ** 2, axis=-1)
    if mode == "zf":
        den = energy
    elif mode == "mmse":
        den = energy + 1.0 / rho_d
    else:
        raise ValueError(f"unknown equalizer {mode!r}")
    proj = np.einsum("...tk,...k->...t", Yd, hhat.conj())
    return proj / (math.sqrt(rho_d) * den[..., None])


def pilot_slot_loglik(y, hhat, points, rho_d: float, rho_tau: float) -> np.ndarray:
    """Per-slot log-likelihood of each candidate symbol; shape (n, M).

    ``y`` and ``hhat`` have shape (n, N). The residual channel error
    inflates the noise variance to ``1 + rho_d |x|^2 / (1 + rho_tau)``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    hhat = np.atleast_2d(np.asarray(hhat, dtype=complex))
    pts = np.asarray(points, dtype=complex)
    N = y.shape[1]
    var = 1.0 + rho_d * np.abs(pts) ** 2 / (1.0 + rho_tau)  # (M,)
    r = y[:, None, :] - math.sqrt(rho_d) * pts[None, :, None] * hhat[:, None, :]
    dist = np.sum(r.real**2 + r.imag**2, axis=2)
    return -N * math.log(math.pi) - N * np.log(var)[None, :] - dist / var[None, :]


def pilot_ml_detect(Y, hhat, cfg: PilotConfig) -> np.ndarray:
    """Per-slot ML detection; returns QAM indices of shape (n, T-1)."""
    Y = np.asarray(Y, dtype=complex)
    out = np.empty((Y.shape[0], cfg.T - 1), dtype=np.int64)
    for j, q in enumerate(cfg.qams):
        ll = pilot_slot_loglik(Y[:, j + 1], hhat, q.points, cfg.rho_d, cfg.rho_tau)
        out[:, j] = np.argmax(ll, axis=1)
    return out


def pilot_llr(Y, hhat, cfg: PilotConfig) -> np.ndarray:
    """Bit LLRs of all data slots, concatenated in slot order; (n, B)."""
    Y = np.asarray(Y, dtype=complex)
    cols = []
    for j, q in enumerate(cfg.qams):
        ll = pilot_slot_loglik(Y[:, j + 1], hhat, q.points, cfg.rho_d, cfg.rho_tau)
        for b in range(q.bits):
            ones = q.labels[:, b] == 1
            cols.append(logsumexp(ll[:, ones], axis=1) - logsumexp(ll[:, ~ones], axis=1))
    return np.clip(np.stack(cols, axis=1), -LLR_CLAMP, LLR_CLAMP)


def _pilot_rate_block(args):
    cfg, seed, block, n = args
    rng = block_rng(seed, 0, block)
    data = np.stack([rng.integers(0, q.order, n) for q in cfg.qams], axis=1)
    Y, _ = pilot_transmit(cfg, data, rng)
    hhat = mmse_estimate(Y[:, 0], cfg.rho_tau)
    loss = np.zeros(n)
    for j, q in enumerate(cfg.qams):
        ll = pilot_slot_loglik(Y[:, j + 1], hhat, q.points, cfg.rho_d, cfg.rho_tau)
        own = ll[np.arange(n), data[:, j]]
        loss += logsumexp(ll - own[:, None], axis=1) / math.log(2.0)
    return float(loss.sum()), float(np.sum(loss**2))


def pilot_qam_rate(cfg: PilotConfig, samples: int, seed: int = 0, workers: int = 1) -> RateEstimate:
    """Achievable rate of pilot + QAM with the mismatched per-slot likelihood."""
    if samples < 2:
        raise ValueError("need at least two samples")
    tasks = [(cfg, seed, b, k) for b, k in enumerate(trial_blocks(samples))]
    parts = run_blocks(_pilot_rate_block, tasks, workers)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / samples
    var = max(0.0, (s2 - samples * mean * mean) / (samples - 1))
    rate = (cfg.bits - mean) / cfg.T
    return RateEstimate(rate, math.sqrt(var / samples) / cfg.T, samples)


def _pilot_error_block(args):
    cfg, detector, seed, stream, block, n = args
    rng = block_rng(seed, stream, block)
    data = np.stack([rng.integers(0, q.order, n) for q in cfg.qams], axis=1)
    Y, _ = pilot_transmit(cfg, data, rng)
    hhat = mmse_estimate(Y[:, 0], cfg.rho_tau)
    if detector == "ml":
        dec = pilot_ml_detect(Y, hhat, cfg)
    else:
        xe = equalize(Y[:, 1:], hhat, cfg.rho_d, detector)
        dec = np.stack([q.hard_decision(xe[:, j]) for j, q in enumerate(cfg.qams)], axis=1)
    flips = sum(int(np.sum(q.labels[data[:, j]] != q.labels[dec[:, j]]))
                for j, q in enumerate(cfg.qams))
    return int(np.any(dec != data, axis=1).sum()), flips


def pilot_error_rates(cfg: PilotConfig, trials: int, detector: str = "ml", seed: int = 0,
                      stream: int = 0, workers: int = 1) -> tuple[int, int]:
    """Block (symbol) errors and bit errors over ``trials`` blocks."""
    if detector not in ("ml", "zf", "mmse"):
        raise ValueError(f"unknown detector {detector!r}")
    tasks = [(cfg, detector, seed, stream, b, k) for b, k in enumerate(trial_blocks(trials))]
    parts = run_blocks(_pilot_error_block, tasks, workers)
    return sum(p[0] for p in parts), sum(p[1] for p in parts)


# --------------------------------------------------------------------------
# exp-map constellation
# --------------------------------------------------------------------------


class ExpMap:
    """Exp-map constellation from a product of ``T - 1`` identical QAMs.

    ``c = [cos(g |q|), -sin(g |q|) q^T / |q|]``. The homothetic factor is
    kept below ``pi / (2 max |q|)`` so that the map is invertible.
    """

    def __init__(self, T: int, qam_bits: int, gamma: float, shape: str = "auto"):
        if T < 2:
            raise ValueError("T must be at least 2")
        self.T = int(T)
        self.qam = Qam(qam_bits, shape)
        grid = np.array(np.meshgrid(*([np.arange(self.qam.order)] * (T - 1)), indexing="ij"))
        self._digits = grid.reshape(T - 1, -1).T  # row k: QAM indices, first slot most significant
        self.Q = self.qam.points[self._digits]
        rmax = float(np.max(np.linalg.norm(self.Q, axis=1)))
        self.gamma_max = math.pi / (2.0 * rmax)
        if not 0.0 < gamma < self.gamma_max:
            raise ValueError(f"gamma must lie in (0, {self.gamma_max!r})")
        self.gamma = float(gamma)

    @property
    def size(self) -> int:
        return self.qam.order ** (self.T - 1)

    @property
    def labeled(self) -> bool:
        return True

    @property
    def bits(self) -> int:
        return self.qam.bits * (self.T - 1)

    @cached_property
    def _symbols(self) -> np.ndarray:
        r = np.linalg.norm(self.Q, axis=1)
        th = self.gamma * r
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(r > 0, np.sin(th) / np.where(r > 0, r, 1.0), 0.0)
        C = np.concatenate([np.cos(th)[:, None] + 0j, -f[:, None] * self.Q], axis=1)
        C.setflags(write=False)
        return C

    def symbols(self) -> np.ndarray:
        return self._symbols

    @cached_property
    def _labels(self) -> np.ndarray:
        L = np.concatenate([self.qam.labels[self._digits[:, j]] for j in range(self.T - 1)], axis=1)
        L.setflags(write=False)
        return L

    def labels(self) -> np.ndarray:
        return self._labels

    def index_of(self, digits: np.ndarray) -> np.ndarray:
        digits = np.asarray(digits, dtype=np.int64)
        k = np.zeros(digits.shape[0], dtype=np.int64)
        for j in range(self.T - 1):
            k = k * self.qam.order + digits[:, j]
        return k

    def greedy_decode_batch(self, Y):
        return expmap_greedy_decode(self, Y)


def expmap_constellation(T: int, qam_bits: int, gamma: float | None = None,
                         grid: int = 64, shape: str = "auto") -> ExpMap:
    """Build an exp-map constellation; ``gamma=None`` maximizes min distance.

    The search scans ``grid`` points of (0, gamma_max) and polishes the best
    one with a bounded scalar search on its neighbouring interval.
    """
    probe = ExpMap(T, qam_bits, 1e-6, shape)
    gmax = probe.gamma_max
    if gamma is not None:
        return ExpMap(T, qam_bits, gamma, shape)

    def score(g: float) -> float:
        return min_distance(ExpMap(T, qam_bits, g, shape).symbols())

    cand = gmax * np.arange(1, grid) / grid
    vals = [score(g) for g in cand]
    k = int(np.argmax(vals))
    lo = cand[k - 1] if k > 0 else cand[k] / 2
    hi = cand[k + 1] if k + 1 < len(cand) else 0.5 * (cand[k] + gmax)
    res = minimize_scalar(lambda g: -score(g), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10 * gmax})
    best = res.x if -res.fun > vals[k] else cand[k]
    return ExpMap(T, qam_bits, float(best), shape)


def expmap_greedy_decode(em: ExpMap, Y):
    """SVD direction, inverse exponential map, per-dimension QAM slicing.

    Returns ``(indices, erasures)`` for a stack ``Y`` of shape (n, T, N).
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim == 2:
        Y = Y[None]
    U, erased = dominant_left_singular_vectors(Y)
    u1 = U[:, 0]
    mag = np.abs(u1)
    phase = np.where(mag > 0, u1.conj() / np.where(mag > 0, mag, 1.0), 1.0)
    tail = U[:, 1:] * phase[:, None]
    theta = np.arccos(np.clip(mag, 0.0, 1.0))
    tn = np.linalg.norm(tail, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(tn > 0, theta / (em.gamma * np.where(tn > 0, tn, 1.0)), 0.0)
    qhat = -tail * scale[:, None]
    digits = np.stack([em.qam.hard_decision(qhat[:, j]) for j in range(em.T - 1)], axis=1)
    return em.index_of(digits), erased


# --------------------------------------------------------------------------
# Fourier constellation
# --------------------------------------------------------------------------


def fourier_constellation(T: int, size: int, u: Sequence[int] | None = None) -> SymbolSet:
    """``c_k = T^{-1/2} exp(2 pi j k u / size)``, ``k = 0..size-1``.

    Natural binary labels are attached when ``size`` is a power of two.
    """
    if T < 2 or size < 1:
        raise ValueError("need T >= 2 and size >= 1")
    freqs = np.arange(T) if u is None else np.asarray(u, dtype=float)
    if freqs.shape != (T,):
        raise ValueError("one frequency per dimension expected")
    k = np.arange(size)[:, None]
    C = np.exp(2j * np.pi * k * freqs[None, :] / size) / math.sqrt(T)
    labels = None
    if size & (size - 1) == 0 and size > 1:
        b = size.bit_length() - 1
        labels = ((np.arange(size)[:, None] >> np.arange(b - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
    return SymbolSet(C, labels)
