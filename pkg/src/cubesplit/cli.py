"""Command line front end; every subcommand writes CSV.

Settings come from built-in defaults, then an optional INI file (section
``[experiment]`` plus an optional section named after the subcommand), then
command-line flags. Environment overrides: ``CUBESPLIT_WORKERS`` and
``CUBESPLIT_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import io
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .analytics import (
    cell_error_prob,
    cell_error_prob_t2,
    coord_error_prob_given_cell,
    symbol_error_bound,
    symbol_error_exact_t2,
)
from .baselines import (
    expmap_constellation,
    fourier_constellation,
    pilot_config,
    pilot_error_rates,
    pilot_qam_rate,
    pilot_rate_lower_bound,
)
from .channel import (
    ChannelConfig,
    SweepPoint,
    SweepResult,
    _halfwidth,
    db_to_linear,
    estimate_rate,
    highsnr_capacity,
    llr_histogram,
    run_error_sweep,
    simulate_batch,
    block_rng,
    union_bound_ser,
)
from .codec import (
    EXACT_GUARD,
    SymbolSet,
    approx_llr_batch,
    build_neighbor_table,
    exact_llr_batch,
    write_llr_csv,
)
from .constellation import CubeSplit, conjectured_mindist, mindist_cs_t1
from .grassmann import (
    distance_spectrum,
    packing_bounds,
    read_symbols_csv,
    riemannian_pack,
    write_symbols_csv,
)

SCHEMES = ("cube-split", "expmap", "fourier", "pilot", "optimized", "custom-csv")


class CliError(Exception):
    """Reported as ``error: <kind>: <message>`` with exit status 2."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass
class ExperimentConfig:
    """Resolved settings. Field names double as INI keys (with ``_``)."""

    scheme: str = "cube-split"
    T: int = 2
    N: int = 1
    b0: int | None = None
    bits: int | None = None
    widths: str | None = None
    size: int | None = None
    snr_db: str = "10"
    trials: int = 100_000
    seed: int = 0
    decoder: str = "greedy"
    llr: str = "exact"
    eta: int = 5
    bit: int = 0
    bins: int = 60
    qam_bits: int | None = None
    qam_shape: str = "auto"
    gamma: float | None = None
    detector: str = "ml"
    fourier_u: str | None = None
    symbols: str | None = None
    epsilon: float = 0.01
    iters: int = 500
    interval: str = "normal"
    dump_frames: int = 0
    dump: str | None = None
    workers: int = 1
    output: str | None = None

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise CliError("config", f"unknown scheme {self.scheme!r}")
        if not 2 <= self.T <= 64:
            raise CliError("config", "T must lie in [2, 64]")
        if not 1 <= self.N <= 64:
            raise CliError("config", "N must lie in [1, 64]")
        if self.decoder not in ("greedy", "ml", "random"):
            raise CliError("config", f"unknown decoder {self.decoder!r}")
        if self.llr not in ("exact", "approx"):
            raise CliError("config", f"unknown llr mode {self.llr!r}")
        if self.qam_shape not in ("auto", "cross", "rect"):
            raise CliError("config", f"unknown qam shape {self.qam_shape!r}")
        if self.detector not in ("ml", "zf", "mmse"):
            raise CliError("config", f"unknown detector {self.detector!r}")
        if self.trials < 1 or self.eta < 1 or self.workers < 1:
            raise CliError("config", "trials, eta and workers must be positive")
        if not 0 <= self.seed < 2**64:
            raise CliError("config", "seed must fit in 64 bits")

    def snr_grid(self) -> list[float]:
        return parse_snr_grid(self.snr_db)

    def header(self, command: str) -> list[str]:
        items = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)
                 if f.name not in ("output", "workers")]
        return [f"cubesplit {__version__} {command}", "config " + " ".join(items)]


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, value):
    kind = _FIELD_TYPES[name]
    if value is None:
        return None
    try:
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except ValueError:
        raise CliError("config", f"bad value for {name}: {value!r}") from None
    return str(value)


def parse_snr_grid(text: str) -> list[float]:
    """``"0,5,10"`` or ``"start:step:stop"`` (inclusive) in dB."""
    out: list[float] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                a, s, b = (float(v) for v in part.split(":"))
                if s <= 0:
                    raise ValueError
                n = int(math.floor((b - a) / s + 1e-9)) + 1
                out += [a + k * s for k in range(n)]
            else:
                out.append(float(part))
        except ValueError:
            raise CliError("config", f"bad SNR specification {part!r}") from None
    if not out:
        raise CliError("config", "empty SNR grid")
    return out


def load_config_file(path: str, command: str) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise CliError("config", str(exc).replace("\n", " ")) from None
    values: dict = {}
    for section in parser.sections():
        if section not in ("experiment", command):
            if section in COMMANDS:
                continue
            raise CliError("config", f"unknown section [{section}]")
    for section in ("experiment", command):
        if not parser.has_section(section):
            continue
        for key, val in parser.items(section):
            name = key.replace("-", "_")
            if name == "t":
                name = "T"
            elif name == "n":
                name = "N"
            if name not in _FIELD_TYPES:
                raise CliError("config", f"unknown key {key!r} in [{section}]")
            values[name] = val
    return values


def resolve_config(args: argparse.Namespace, command: str) -> ExperimentConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config, command))
    for name in _FIELD_TYPES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    env_workers = os.environ.get("CUBESPLIT_WORKERS")
    if env_workers and getattr(args, "workers", None) is None:
        values["workers"] = env_workers
    cfg = ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# constellation factory
# --------------------------------------------------------------------------


def build_constellation(cfg: ExperimentConfig):
    if cfg.scheme == "cube-split":
        if cfg.widths:
            widths = [int(w) for w in cfg.widths.split(",")]
            return CubeSplit(cfg.T, widths)
        if cfg.bits is not None:
            return CubeSplit.from_total_bits(cfg.T, cfg.bits)
        return CubeSplit.symmetric(cfg.T, cfg.b0 if cfg.b0 is not None else 1)
    if cfg.scheme == "expmap":
        qb = cfg.qam_bits
        if qb is None:
            if cfg.bits is None or cfg.bits % (cfg.T - 1):
                raise CliError("config", "expmap needs qam_bits or bits divisible by T-1")
            qb = cfg.bits // (cfg.T - 1)
        return expmap_constellation(cfg.T, qb, cfg.gamma, shape=cfg.qam_shape)
    if cfg.scheme == "fourier":
        size = cfg.size or (1 << cfg.bits if cfg.bits else None)
        if not size:
            raise CliError("config", "fourier needs size or bits")
        u = [float(v) for v in cfg.fourier_u.split(",")] if cfg.fourier_u else None
        return fourier_constellation(cfg.T, size, u)
    if cfg.scheme == "optimized":
        size = cfg.size or (1 << cfg.bits if cfg.bits else None)
        if not size:
            raise CliError("config", "optimized needs size or bits")
        res = riemannian_pack(cfg.T, size, cfg.epsilon, cfg.iters, cfg.seed)
        return _labeled_set(res.points)
    if cfg.scheme == "custom-csv":
        if not cfg.symbols:
            raise CliError("config", "custom-csv needs symbols=<path>")
        try:
            with open(cfg.symbols) as fh:
                pts, labels = read_symbols_csv(fh)
        except OSError as exc:
            raise CliError("io", f"cannot read {cfg.symbols}: {exc.strerror}") from None
        if pts.shape[1] != cfg.T:
            raise CliError("config", f"symbol file has T={pts.shape[1]}, config says {cfg.T}")
        if labels is not None:
            bits = np.array([[int(c) for c in lab] for lab in labels], dtype=np.uint8)
            return SymbolSet(pts, bits)
        return _labeled_set(pts)
    raise CliError("config", f"scheme {cfg.scheme!r} has no symbol constellation")


def _labeled_set(points) -> SymbolSet:
    n = points.shape[0]
    if n > 1 and n & (n - 1) == 0:
        b = n.bit_length() - 1
        labels = ((np.arange(n)[:, None] >> np.arange(b - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
        return SymbolSet(points, labels)
    return SymbolSet(points)


def _label_strings(C) -> list[str] | None:
    if not getattr(C, "labeled", False):
        return None
    return ["".join(str(int(b)) for b in row) for row in C.labels()]


def _guard(C, what: str) -> None:
    if C.size > EXACT_GUARD:
        raise CliError("guard", f"{what} limited to {EXACT_GUARD} symbols, constellation has {C.size}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen(cfg, out):
    C = build_constellation(cfg)
    write_symbols_csv(out, C.symbols(), _label_strings(C), cfg.header("gen"))


def cmd_pack(cfg, out):
    size = cfg.size or (1 << cfg.bits if cfg.bits else None)
    if not size:
        raise CliError("config", "pack needs size or bits")
    res = riemannian_pack(cfg.T, size, cfg.epsilon, cfg.iters, cfg.seed)
    comments = cfg.header("pack") + [
        f"min_distance={res.min_distance:.17g} initial={res.initial_min_distance:.17g}"
    ]
    write_symbols_csv(out, res.points, None, comments)


def _closed_form(cfg, C) -> float | None:
    if not isinstance(C, CubeSplit) or len(set(C.widths)) != 1:
        return None
    b0 = C.widths[0]
    if b0 == 1:
        return mindist_cs_t1(cfg.T)
    return conjectured_mindist(cfg.T, b0)


def cmd_mindist(cfg, out):
    C = build_constellation(cfg)
    sp = distance_spectrum(C.symbols())
    lo, hi = packing_bounds(C.T, C.size)
    cf = _closed_form(cfg, C)
    for line in cfg.header("mindist"):
        out.write(f"# {line}\n")
    out.write("scheme,T,size,min_distance,closed_form,lower_bound,upper_bound\n")
    cf_text = "" if cf is None else f"{cf:.17g}"
    out.write(f"{cfg.scheme},{C.T},{C.size},{sp.min_distance:.17g},{cf_text},"
              f"{lo:.17g},{hi:.17g}\n")


def cmd_spectrum(cfg, out):
    C = build_constellation(cfg)
    sp = distance_spectrum(C.symbols())
    labels = _label_strings(C)
    for line in cfg.header("spectrum"):
        out.write(f"# {line}\n")
    out.write("index,label,nearest_distance,neighbor\n")
    for k in range(C.size):
        lab = labels[k] if labels else ""
        out.write(f"{k},{lab},{sp.nearest[k]:.17g},{sp.neighbor[k]}\n")


def _configs(cfg) -> list[ChannelConfig]:
    return [ChannelConfig(cfg.T, cfg.N, db_to_linear(d), cfg.seed, cfg.trials)
            for d in cfg.snr_grid()]


def cmd_simulate(cfg, out, metric: str):
    if cfg.scheme == "pilot":
        res = SweepResult()
        if cfg.bits is None:
            raise CliError("config", "pilot scheme needs bits")
        for s, d in enumerate(cfg.snr_grid()):
            pc = pilot_config(db_to_linear(d), cfg.T, cfg.N, cfg.bits, cfg.qam_shape)
            blk, bit = pilot_error_rates(pc, cfg.trials, cfg.detector, cfg.seed, s, cfg.workers)
            n, e = (cfg.trials, blk) if metric == "ser" else (cfg.trials * pc.bits, bit)
            res.points.append(SweepPoint(d, metric, e / n, _halfwidth(e, n, cfg.interval), n, e))
    else:
        C = build_constellation(cfg)
        if cfg.decoder == "ml":
            _guard(C, "ML decoding")
        try:
            res = run_error_sweep(C, cfg.decoder, _configs(cfg), (metric,), cfg.workers, cfg.interval)
        except ValueError as exc:
            raise CliError("config", str(exc)) from None
    res.write_csv(out, cfg.header(f"simulate {metric}"))


def cmd_rate(cfg, out):
    res = SweepResult()
    for s, d in enumerate(cfg.snr_grid()):
        rho = db_to_linear(d)
        if cfg.scheme == "pilot":
            if cfg.bits is None:
                raise CliError("config", "pilot scheme needs bits")
            est = pilot_qam_rate(pilot_config(rho, cfg.T, cfg.N, cfg.bits, cfg.qam_shape),
                                 cfg.trials, cfg.seed, cfg.workers)
        else:
            C = build_constellation(cfg)
            _guard(C, "rate estimation")
            est = estimate_rate(C, ChannelConfig(cfg.T, cfg.N, rho, cfg.seed, cfg.trials),
                                workers=cfg.workers, stream=s)
        res.points.append(SweepPoint(d, "rate", est.rate, 1.96 * est.stderr, est.samples, 0))
        res.points.append(SweepPoint(d, "capacity_highsnr", highsnr_capacity(rho, cfg.N, cfg.T),
                                     0.0, 0, 0))
    res.write_csv(out, cfg.header("rate"))


def cmd_analytic(cfg, out):
    res = SweepResult()
    if cfg.N != 1:
        raise CliError("config", "analytic error rates need N=1")
    for d in cfg.snr_grid():
        rho = db_to_linear(d)
        cell = cell_error_prob_t2(rho) if cfg.T == 2 else cell_error_prob(cfg.T, rho)
        coord = coord_error_prob_given_cell(rho, cfg.T)
        ser = symbol_error_exact_t2(rho) if cfg.T == 2 else symbol_error_bound(cfg.T, rho, cell)
        ub = union_bound_ser(mindist_cs_t1(cfg.T), cfg.T * 4 ** (cfg.T - 1), rho, cfg.T)
        for name, v in (("analytic_cell", cell), ("analytic_coord", coord),
                        ("analytic_ser", ser), ("union_bound_ser", ub)):
            res.points.append(SweepPoint(d, name, v, 0.0, 0, 0))
    res.write_csv(out, cfg.header("analytic"))


def cmd_llr_hist(cfg, out):
    C = build_constellation(cfg)
    if not getattr(C, "labeled", False):
        raise CliError("config", "LLR histogram needs a labeled constellation")
    table = None
    if cfg.llr == "approx":
        table = build_neighbor_table(C, cfg.eta)
    else:
        _guard(C, "exact LLR")
    rho = db_to_linear(cfg.snr_grid()[0])
    chan = ChannelConfig(cfg.T, cfg.N, rho, cfg.seed, cfg.trials)
    try:
        hist = llr_histogram(C, chan, cfg.bit, bins=cfg.bins, table=table, workers=cfg.workers)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    hist.write_csv(out, cfg.header("llr-hist"))
    if cfg.dump_frames:
        if not cfg.dump:
            raise CliError("config", "dump_frames needs dump=<path>")
        rng = block_rng(cfg.seed, 1, 0)
        sent = rng.integers(0, C.size, cfg.dump_frames)
        Y = simulate_batch(C.symbols(), sent, cfg.N, rho, rng)
        L = exact_llr_batch(C, Y, rho) if table is None else approx_llr_batch(C, table, Y, rho)
        with open(_output_path(cfg.dump), "w", newline="") as fh:
            write_llr_csv(fh, L, cfg.header("llr-dump"))


def cmd_pilot_rate(cfg, out):
    res = SweepResult()
    for s, d in enumerate(cfg.snr_grid()):
        rho = db_to_linear(d)
        res.points.append(SweepPoint(d, "pilot_lower_bound", pilot_rate_lower_bound(rho, cfg.N, cfg.T),
                                     0.0, 0, 0))
        if cfg.bits is not None:
            est = pilot_qam_rate(pilot_config(rho, cfg.T, cfg.N, cfg.bits, cfg.qam_shape),
                                 cfg.trials, cfg.seed, cfg.workers)
            res.points.append(SweepPoint(d, "pilot_qam_rate", est.rate, 1.96 * est.stderr,
                                         est.samples, 0))
    res.write_csv(out, cfg.header("pilot-rate"))


COMMANDS = {
    "gen": cmd_gen,
    "mindist": cmd_mindist,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
    "rate": cmd_rate,
    "analytic": cmd_analytic,
    "llr-hist": cmd_llr_hist,
    "pack": cmd_pack,
    "pilot-rate": cmd_pilot_rate,
}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="INI file; [experiment] and [<command>] sections")
    g.add_argument("--scheme", choices=SCHEMES, default=S, help="constellation family (cube-split)")
    g.add_argument("--T", type=int, default=S, help="coherence length (2)")
    g.add_argument("--N", type=int, default=S, help="receive antennas (1)")
    g.add_argument("--b0", type=int, default=S, help="cube-split bits per real dimension (1)")
    g.add_argument("--bits", type=int, default=S, help="total bits per block B")
    g.add_argument("--widths", default=S, help="cube-split per-dimension bits, comma separated")
    g.add_argument("--size", type=int, default=S, help="constellation size (fourier, optimized, pack)")
    g.add_argument("--snr-db", dest="snr_db", default=S,
                   help="SNR grid in dB: list '0,5,10' or range 'start:step:stop' (10)")
    g.add_argument("--trials", type=int, default=S, help="Monte Carlo trials or samples (100000)")
    g.add_argument("--seed", type=int, default=S, help="64-bit seed (0)")
    g.add_argument("--decoder", choices=("greedy", "ml", "random"), default=S, help="(greedy)")
    g.add_argument("--llr", choices=("exact", "approx"), default=S, help="LLR mode (exact)")
    g.add_argument("--eta", type=int, default=S, help="neighbour-set size for approx LLR (5)")
    g.add_argument("--bit", type=int, default=S, help="label bit for llr-hist (0)")
    g.add_argument("--bins", type=int, default=S, help="histogram bins (60)")
    g.add_argument("--qam-bits", dest="qam_bits", type=int, default=S, help="exp-map QAM bits")
    g.add_argument("--qam-shape", dest="qam_shape", choices=("auto", "cross", "rect"), default=S,
                   help="odd-bit QAM layout (auto = cross when bits >= 5)")
    g.add_argument("--gamma", type=float, default=S, help="exp-map factor (grid search)")
    g.add_argument("--detector", choices=("ml", "zf", "mmse"), default=S, help="pilot detector (ml)")
    g.add_argument("--fourier-u", dest="fourier_u", default=S, help="Fourier frequencies, comma separated")
    g.add_argument("--symbols", default=S, help="symbol CSV for custom-csv")
    g.add_argument("--epsilon", type=float, default=S, help="packing smoothing (0.01)")
    g.add_argument("--iters", type=int, default=S, help="packing iterations (500)")
    g.add_argument("--interval", choices=("normal", "wilson"), default=S, help="CI method (normal)")
    g.add_argument("--dump-frames", dest="dump_frames", type=int, default=S,
                   help="llr-hist: also write LLRs of this many frames")
    g.add_argument("--dump", default=S, help="llr-hist: LLR dump path")
    g.add_argument("--workers", type=int, default=S, help="worker processes (1; env CUBESPLIT_WORKERS)")
    g.add_argument("--output", "-o", default=S,
                   help="output CSV (stdout); relative paths go under CUBESPLIT_OUTPUT_DIR if set")
    g.add_argument("--no-timestamp", dest="no_timestamp", action="store_true",
                   help="omit the timestamp comment line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cubesplit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "write constellation symbols and labels",
        "mindist": "exhaustive minimum chordal distance",
        "spectrum": "nearest-neighbour distance of every symbol",
        "rate": "Monte Carlo achievable rate",
        "analytic": "closed-form CS(T,1) error probabilities",
        "llr-hist": "LLR histogram with exponential fits",
        "pack": "numerically optimized packing",
        "pilot-rate": "pilot-scheme rate bound and QAM rate",
    }
    for name, text in helps.items():
        _add_common(sub.add_parser(name, help=text, description=text))
    sim = sub.add_parser("simulate", help="SER or BER sweep", description="SER or BER sweep")
    sim.add_argument("metric", choices=("ser", "ber"))
    _add_common(sim)
    return parser


def _output_path(path: str) -> str:
    base = os.environ.get("CUBESPLIT_OUTPUT_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args, args.command)
        buf = io.StringIO()
        if not args.no_timestamp:
            stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
            buf.write(f"# generated {stamp}\n")
        if args.command == "simulate":
            cmd_simulate(cfg, buf, args.metric)
        else:
            COMMANDS[args.command](cfg, buf)
        if cfg.output:
            path = _output_path(cfg.output)
            try:
                with open(path, "w", newline="") as fh:
                    fh.write(buf.getvalue())
            except OSError as exc:
                raise CliError("io", f"cannot write {path}: {exc.strerror}") from None
        else:
            sys.stdout.write(buf.getvalue())
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
