"""Rayleigh block-fading link: sampling, likelihoods and Monte Carlo engines.

Monte Carlo work is split into fixed-size trial blocks. Block ``b`` of
sweep point ``s`` draws from a Philox stream keyed by ``(seed, s, b)``, so
the result does not depend on how blocks are spread over workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .codec import (
    EXACT_GUARD,
    approx_llr_batch,
    decision_metric,
    exact_llr_batch,
    greedy_decode_batch,
    llr_scale,
    ml_decode_batch,
)
from .constellation import CubeSplit
from .numerics import digamma

__all__ = [
    "BLOCK",
    "ChannelConfig",
    "ReceivedBlock",
    "SweepPoint",
    "SweepResult",
    "RateEstimate",
    "LlrHistogram",
    "block_rng",
    "complex_normal",
    "simulate_block",
    "simulate_batch",
    "likelihood_log",
    "make_decoder",
    "run_error_sweep",
    "estimate_rate",
    "highsnr_capacity",
    "union_bound_ser",
    "llr_histogram",
    "db_to_linear",
    "run_blocks",
    "trial_blocks",
]

BLOCK = 4096
METRICS = ("ser", "ber", "cell", "coord")


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ChannelConfig:
    T: int
    N: int
    rho: float
    seed: int = 0
    trials: int = 10_000

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.rho)

    def with_rho(self, rho: float) -> "ChannelConfig":
        return ChannelConfig(self.T, self.N, rho, self.seed, self.trials)


@dataclass(frozen=True)
class ReceivedBlock:
    Y: np.ndarray
    index: int | None = None


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    """Counter-based generator for one trial block of one sweep point."""
    if not (0 <= stream < 2**24 and 0 <= block < 2**40):
        raise ValueError("stream or block index out of range")
    key = (int(seed) << 64) | (int(stream) << 40) | int(block)
    return np.random.Generator(np.random.Philox(key=key))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples by Box-Muller: ``sqrt(-ln U1) * exp(2 pi j U2)``."""
    u1 = 1.0 - rng.random(shape)  # (0, 1]
    u2 = rng.random(shape)
    return np.sqrt(-np.log(u1)) * np.exp(2j * np.pi * u2)


def simulate_batch(points: np.ndarray, index: np.ndarray, N: int, rho: float,
                   rng: np.random.Generator) -> np.ndarray:
    """``Y = sqrt(rho T) x h^T + Z`` for each transmitted index; (n, T, N)."""
    X = np.asarray(points)[index]
    n, T = X.shape
    h = complex_normal(rng, (n, N))
    Z = complex_normal(rng, (n, T, N))
    return math.sqrt(rho * T) * X[:, :, None] * h[:, None, :] + Z


def simulate_block(config: ChannelConfig, x, rng: np.random.Generator) -> ReceivedBlock:
    v = np.asarray(x, dtype=complex).reshape(-1)
    if v.shape[0] != config.T:
        raise ValueError("symbol length differs from T")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("symbol must have unit norm")
    Y = simulate_batch(v[None], np.zeros(1, dtype=np.int64), config.N, config.rho, rng)[0]
    return ReceivedBlock(Y)


def likelihood_log(x, Y, rho: float) -> float:
    """Log density of ``Y`` given the unit-norm symbol ``x``."""
    v = np.asarray(x, dtype=complex).reshape(-1)
    Y = np.asarray(Y, dtype=complex)
    T, N = Y.shape
    if v.shape[0] != T:
        raise ValueError("dimension mismatch")
    g = v.conj() @ Y  # x^H Y, row of length N
    q = float(np.sum(np.abs(g) ** 2))
    fro = float(np.sum(np.abs(Y) ** 2))
    kappa = llr_scale(rho, T)
    return N * (-T * math.log(math.pi) - math.log1p(rho * T)) - fro + kappa * q


# --------------------------------------------------------------------------
# decoders and block workers
# --------------------------------------------------------------------------


def make_decoder(constellation, name: str) -> Callable:
    """Return ``decode(Y, rng) -> (indices, erasures)`` for a decoder name.

    ``greedy`` uses the constellation's own low-complexity decoder (cube-split
    or exp-map); ``ml`` is exhaustive; ``random`` guesses uniformly.
    """
    if name == "ml":
        if constellation.size > EXACT_GUARD:
            raise ValueError(f"ML decoding limited to {EXACT_GUARD} symbols")
        return lambda Y, rng: (ml_decode_batch(constellation, Y), np.zeros(len(Y), bool))
    if name == "greedy":
        if isinstance(constellation, CubeSplit):
            return lambda Y, rng: greedy_decode_batch(constellation, Y)
        if hasattr(constellation, "greedy_decode_batch"):
            return lambda Y, rng: constellation.greedy_decode_batch(Y)
        raise ValueError("greedy decoder needs a cube-split or exp-map constellation")
    if name == "random":
        return lambda Y, rng: (rng.integers(0, constellation.size, len(Y)), np.zeros(len(Y), bool))
    raise ValueError(f"unknown decoder {name!r}")


def _error_block(args):
    constellation, decoder, N, rho, seed, stream, block, n = args
    rng = block_rng(seed, stream, block)
    sent = rng.integers(0, constellation.size, n)
    Y = simulate_batch(constellation.symbols(), sent, N, rho, rng)
    dec, erased = make_decoder(constellation, decoder)(Y, rng)
    wrong = (dec != sent) | erased
    out = {"trials": n, "ser": int(wrong.sum())}
    if getattr(constellation, "labeled", False):
        labels = constellation.labels()
        flips = np.sum(labels[sent] != labels[dec], axis=1)
        out["ber"] = int(flips.sum())
        out["bits"] = n * labels.shape[1]
    if isinstance(constellation, CubeSplit):
        per = constellation.per_cell
        cell_ok = ((sent // per) == (dec // per)) & ~erased
        out["cell"] = int((~cell_ok).sum())
        out["cell_ok"] = int(cell_ok.sum())
        out["coord"] = int((cell_ok & (dec != sent)).sum())
    return out


def run_blocks(fn, tasks: Sequence, workers: int = 1) -> list:
    """Evaluate ``fn`` over tasks, in task order, optionally in processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def trial_blocks(trials: int, block: int = BLOCK) -> list[int]:
    sizes = [block] * (trials // block)
    if trials % block:
        sizes.append(trials % block)
    return sizes


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    snr_db: float
    metric: str
    estimate: float
    ci_halfwidth: float
    trials: int
    errors: int


def _halfwidth(errors: int, n: int, method: str = "normal") -> float:
    p = errors / n
    if method == "normal":
        return 1.96 * math.sqrt(p * (1.0 - p) / n)
    if method == "wilson":
        z = 1.96
        den = 1.0 + z * z / n
        return z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / den
    raise ValueError(f"unknown interval method {method!r}")


@dataclass
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)

    def select(self, metric: str) -> list[SweepPoint]:
        return [p for p in self.points if p.metric == metric]

    def get(self, metric: str, snr_db: float) -> SweepPoint:
        for p in self.points:
            if p.metric == metric and abs(p.snr_db - snr_db) < 1e-12:
                return p
        raise KeyError((metric, snr_db))

    def write_csv(self, stream, comments: Iterable[str] = ()) -> None:
        for line in comments:
            stream.write(f"# {line}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["snr_db", "metric", "estimate", "ci_halfwidth", "trials", "errors"])
        for p in self.points:
            w.writerow([f"{p.snr_db:.17g}", p.metric, f"{p.estimate:.17g}",
                        f"{p.ci_halfwidth:.17g}", p.trials, p.errors])


def run_error_sweep(
    constellation,
    decoder: str,
    configs: Sequence[ChannelConfig],
    metrics: Sequence[str] = ("ser", "ber"),
    workers: int = 1,
    interval: str = "normal",
) -> SweepResult:
    """Monte Carlo error rates of ``decoder`` at each configuration.

    Metrics: ``ser`` symbol errors, ``ber`` label bit errors per bit,
    ``cell`` wrong cell decisions, ``coord`` wrong symbol among trials whose
    cell was right (cube-split only). Erasures count as errors.
    """
    for m in metrics:
        if m not in METRICS:
            raise ValueError(f"unknown metric {m!r}")
    if "ber" in metrics and not getattr(constellation, "labeled", False):
        raise ValueError("BER needs a labeled constellation")
    if ("cell" in metrics or "coord" in metrics) and not isinstance(constellation, CubeSplit):
        raise ValueError("cell/coordinate metrics need a cube-split constellation")
    make_decoder(constellation, decoder)  # validate early
    result = SweepResult()
    for s, cfg in enumerate(configs):
        if cfg.T != constellation.T:
            raise ValueError("config T differs from constellation T")
        tasks = [(constellation, decoder, cfg.N, cfg.rho, cfg.seed, s, b, n)
                 for b, n in enumerate(trial_blocks(cfg.trials))]
        parts = run_blocks(_error_block, tasks, workers)
        total = {k: sum(p.get(k, 0) for p in parts) for k in parts[0]}
        for m in metrics:
            if m == "ber":
                n, e = total["bits"], total["ber"]
            elif m == "coord":
                n, e = total["cell_ok"], total["coord"]
            else:
                n, e = total["trials"], total[m]
            est = e / n if n else float("nan")
            hw = _halfwidth(e, n, interval) if n else float("nan")
            result.points.append(SweepPoint(cfg.snr_db, m, est, hw, n, e))
    return result


# --------------------------------------------------------------------------
# rate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    stderr: float
    samples: int


def _rate_block(args):
    constellation, N, rho, seed, stream, block, n = args
    rng = block_rng(seed, stream, block)
    P = constellation.symbols()
    sent = rng.integers(0, P.shape[0], n)
    Y = simulate_batch(P, sent, N, rho, rng)
    s = llr_scale(rho, P.shape[1]) * decision_metric(P, Y)
    own = s[np.arange(n), sent]
    loss = logsumexp(s - own[:, None], axis=1) / math.log(2.0)
    return float(loss.sum()), float(np.sum(loss**2))


def estimate_rate(constellation, config: ChannelConfig, samples: int | None = None,
                  workers: int = 1, stream: int = 0) -> RateEstimate:
    """Monte Carlo achievable rate with uniform inputs, in bits per channel use.

    ``R = log2|C|/T - E[log2 sum_c p(Y|c)/p(Y|x)] / T``; the log of the sum
    is taken with the largest term factored out.
    """
    n = config.trials if samples is None else samples
    if n < 2:
        raise ValueError("need at least two samples")
    T = constellation.T
    if constellation.size == 1:
        return RateEstimate(0.0, 0.0, n)
    tasks = [(constellation, config.N, config.rho, config.seed, stream, b, k)
             for b, k in enumerate(trial_blocks(n))]
    parts = run_blocks(_rate_block, tasks, workers)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / n
    var = max(0.0, (s2 - n * mean * mean) / (n - 1))
    rate = math.log2(constellation.size) / T - mean / T
    return RateEstimate(rate, math.sqrt(var / n) / T, n)


def highsnr_capacity(rho: float, N: int, T: int) -> float:
    """High-SNR capacity expansion ``(1 - 1/T) log2(rho) + c(N, T)``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if N < 1 or T < 2:
        raise ValueError("need N >= 1 and T >= 2")
    lo, hi = min(N, T - 1), max(N, T - 1)
    log2e = 1.0 / math.log(2.0)
    c = (
        (math.lgamma(lo) - math.lgamma(N) - math.lgamma(T)) * log2e / T
        + (1.0 - 1.0 / T) * math.log2(T)
        + (lo / T) * math.log2(N / lo)
        + (hi / T) * (digamma(N) - 1.0) * log2e
    )
    return (1.0 - 1.0 / T) * math.log2(rho) + c


def union_bound_ser(d_min: float, size: int, rho: float, T: int) -> float:
    """Pairwise-error union bound on the ML symbol error probability (N = 1)."""
    if size < 1:
        raise ValueError("size must be positive")
    if size == 1:
        return 0.0
    if not 0.0 < d_min <= 1.0:
        raise ValueError("d_min must lie in (0, 1]")
    rt = rho * T
    pep = 0.5 * (1.0 - (1.0 + 4.0 * (1.0 + rt) / (d_min * rt) ** 2) ** -0.5)
    return min(1.0, max(0.0, (size - 1) * pep))


# --------------------------------------------------------------------------
# LLR statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LlrHistogram:
    """LLR histogram given bit 0 sent, with exponential fits per side.

    ``rate_neg`` models ``-L`` for ``L <= 0``, ``rate_pos`` models ``L`` for
    ``L > 0``; each rate is the reciprocal of that side's empirical mean.
    """

    edges: np.ndarray
    counts: np.ndarray
    mass_neg: float
    mean_neg: float
    mean_pos: float
    rate_neg: float
    rate_pos: float
    samples: int

    def write_csv(self, stream, comments: Iterable[str] = ()) -> None:
        for line in comments:
            stream.write(f"# {line}\n")
        stream.write(
            f"# fit mass_neg={self.mass_neg:.17g} rate_neg={self.rate_neg:.17g} "
            f"rate_pos={self.rate_pos:.17g} samples={self.samples}\n"
        )
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            w.writerow([f"{lo:.17g}", f"{hi:.17g}", int(c)])


def _llr_block(args):
    constellation, bit, N, rho, seed, block, n, eta_table = args
    rng = block_rng(seed, 0, block)
    pool = np.flatnonzero(constellation.labels()[:, bit] == 0)
    sent = pool[rng.integers(0, pool.size, n)]
    Y = simulate_batch(constellation.symbols(), sent, N, rho, rng)
    if eta_table is None:
        return exact_llr_batch(constellation, Y, rho)[:, bit]
    return approx_llr_batch(constellation, eta_table, Y, rho)[:, bit]


def llr_histogram(constellation, config: ChannelConfig, bit: int, samples: int | None = None,
                  bins: int = 60, table=None, workers: int = 1) -> LlrHistogram:
    """Distribution of ``LLR_bit`` conditioned on that bit being 0."""
    if not 0 <= bit < constellation.bits:
        raise ValueError("bit index out of range")
    n = config.trials if samples is None else samples
    tasks = [(constellation, bit, config.N, config.rho, config.seed, b, k, table)
             for b, k in enumerate(trial_blocks(n))]
    L = np.concatenate(run_blocks(_llr_block, tasks, workers))
    neg, pos = -L[L <= 0], L[L > 0]
    mean_neg = float(neg.mean()) if neg.size else float("nan")
    mean_pos = float(pos.mean()) if pos.size else float("nan")
    counts, edges = np.histogram(L, bins=bins)
    return LlrHistogram(
        edges, counts, neg.size / n, mean_neg, mean_pos,
        1.0 / mean_neg if neg.size and mean_neg > 0 else float("inf"),
        1.0 / mean_pos if pos.size and mean_pos > 0 else float("inf"),
        n,
    )
