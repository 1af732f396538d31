"""Command-line entry points.

Every command is deterministic given its flags.  JSON goes out as UTF-8
with sorted keys; runs that query the oracle also write a manifest next to
their output.  Exit codes: 0 success, 2 bad input, 3 duration too short.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .filters import WINDOW_FLAT, WINDOW_LITERAL, derive_params, filt1d_freq, filt1d_time, g_hat, g_time
from .hashing import collision_band, collision_rate, large_offset_rate
from .locate import make_locate_config
from .metrics import match_tones, metrics_to_json, recenter, signal_err_gram, snr_estimate
from .recover import CandidateTone, MERGE_ORDERS, load_tones, make_recovery_config, recovery_stage, tones_to_json
from .signal import DurationError, NoiseModel, SignalOracle, SparseSignal, Tone, load_signal, noise_level, save_signal

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DURATION = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def make_manifest(command: str, config: dict, seed: int, wall: float, samples: int, **extra) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "wall_time": wall,
        "samples": samples,
        **extra,
    }


# --------------------------------------------------------------------------
# gen


def ball_volume(d: int, radius: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius**d


def packing_feasible(k: int, d: int, F: float, eta: float) -> bool:
    """Volume bound: ``k`` disjoint balls of radius ``eta/2`` centered in ``[-F, F]^d``."""
    return k * ball_volume(d, eta / 2) <= (2 * F + eta) ** d


def generate_signal(k: int, d: int, F: float, eta: float, T: float, seed: int, *,
                    max_tries: int = 200_000) -> SparseSignal:
    """Magnitudes uniform in ``[1, 2]`` with uniform phases; frequencies by rejection sampling."""
    if not packing_feasible(k, d, F, eta):
        raise CliError(f"{k} frequencies at separation {eta} cannot fit in [-{F}, {F}]^{d}")
    rng = np.random.default_rng(seed)
    freqs: list[np.ndarray] = []
    tries = 0
    while len(freqs) < k:
        tries += 1
        if tries > max_tries:
            raise CliError(f"rejection sampling placed only {len(freqs)} of {k} frequencies")
        cand = rng.uniform(-F, F, d)
        if all(np.linalg.norm(cand - q) >= eta for q in freqs):
            freqs.append(cand)
    mags = rng.uniform(1.0, 2.0, k) * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, k))
    tones = tuple(Tone(complex(v), tuple(f)) for v, f in zip(mags, freqs))
    return SparseSignal(tones, d, F, eta, T)


def cmd_gen(args) -> int:
    noise = NoiseModel.parse(args.noise, seed=args.seed)
    signal = generate_signal(args.k, args.d, args.F, args.eta, args.T, args.seed)
    save_signal(args.out, signal, noise)
    return EXIT_OK


# --------------------------------------------------------------------------
# recover


def filter_overrides(args) -> dict:
    out = {}
    for name in ("B", "alpha", "ell"):
        value = getattr(args, name)
        if value is not None:
            out[name] = value
    return out


def cmd_recover(args) -> int:
    signal, noise = load_signal(args.signal)
    p = derive_params(signal.k, signal.d, args.delta, signal.F, signal.eta, **filter_overrides(args))
    locate = make_locate_config(signal.d, signal.F, signal.eta, C=args.C, c_reg=args.c_reg,
                                strict_duration=not args.force)
    cfg = make_recovery_config(p, locate, r_merge=args.rmerge, seed=args.seed, merge_order=args.merge_order)
    oracle = SignalOracle(signal, noise, enforce_duration=not args.force)
    start = time.perf_counter()
    try:
        result = recovery_stage(oracle, cfg, signal.T, signal.k)
    except DurationError as exc:
        raise CliError(f"{exc} (pass --force to run anyway)", EXIT_DURATION) from exc
    wall = time.perf_counter() - start
    write_json(args.out, tones_to_json(result.tones, signal.k, signal.d, cfg.echo(), args.seed))
    manifest = make_manifest(
        "recover", cfg.echo(), args.seed, wall, oracle.n_samples,
        duration_violated=oracle.duration_violations > 0,
        padded=result.padded,
        candidates=list(result.n_candidates),
    )
    write_json(args.manifest or manifest_path(args.out), manifest)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    signal, noise = load_signal(args.truth)
    # Signal files share the tone layout, so either kind of file is accepted.
    recovered = load_tones(args.recovered)
    T = signal.T
    truth = [CandidateTone(recenter(t.v, t.f, T), t.f) for t in signal.tones]
    found = [CandidateTone(recenter(t.v, t.f, T), t.f) for t in recovered]
    if any(len(t.f) != signal.d for t in found):
        raise CliError("recovered tones and signal disagree on the dimension")
    report = match_tones(truth, found, signal.eta, T)
    level = noise_level(signal, noise, args.delta)
    snr = None
    if args.snr_trials > 0:
        p = derive_params(signal.k, signal.d, args.delta, signal.F, signal.eta, **filter_overrides(args))
        rng = np.random.default_rng(args.seed)
        oracle = SignalOracle(signal, noise)
        snr = [snr_estimate(oracle, p, i, args.snr_trials, rng)[1] for i in range(signal.k)]
    write_json(args.out, metrics_to_json(report, signal_err_gram(truth, found, T), level.value, snr))
    return EXIT_OK


# --------------------------------------------------------------------------
# filter-dump


def cmd_filter_dump(args) -> int:
    p = derive_params(args.k, args.d, args.delta, args.F, args.eta, window=args.window, **filter_overrides(args))
    n = args.points if args.points % 2 else args.points + 1
    t = np.linspace(-p.support, p.support, n)
    f = np.linspace(-args.f_range, args.f_range, n)
    cols = (t, g_time(p, t), filt1d_time(p, t), f, g_hat(p, f), filt1d_freq(p, f))
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", encoding="utf-8", newline="")
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["t", "G", "G_filter", "f", "G_hat", "G_filter_hat"])
        for row in zip(*cols):
            writer.writerow([repr(float(np.real(x))) for x in row])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# --------------------------------------------------------------------------
# hash-stats


def cmd_hash_stats(args) -> int:
    rng = np.random.default_rng(args.seed)
    f = np.zeros(args.d) if args.freq is None else np.asarray(args.freq, dtype=float)
    if f.shape != (args.d,):
        raise CliError(f"--freq needs {args.d} coordinates")
    if args.event == "offset":
        empirical, exact, stderr = large_offset_rate(rng, args.d, args.B, args.alpha, args.eta, f, args.draws)
    else:
        lo, hi = collision_band(args.d, args.B, args.eta)
        dist = args.distance if args.distance is not None else lo
        direction = np.zeros(args.d)
        direction[0] = 1.0
        empirical, exact, stderr = collision_rate(rng, args.d, args.B, args.eta, f, f + dist * direction, args.draws)
    write_json(args.out, {
        "event": args.event,
        "empirical": empirical,
        "exact_or_bound": exact,
        "stderr": stderr,
        "draws": args.draws,
        "seed": args.seed,
    })
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_filter_flags(parser) -> None:
    parser.add_argument("--B", type=int, default=None, help="bins per axis")
    parser.add_argument("--alpha", type=float, default=None, help="large-offset width")
    parser.add_argument("--ell", type=int, default=None, help="sinc power (even)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offgrid-sfft", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="plant a random sparse signal")
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--F", type=float, required=True)
    g.add_argument("--eta", type=float, required=True)
    g.add_argument("--T", type=float, required=True)
    g.add_argument("--noise", default="none", help="none or gaussian:SIGMA")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("recover", help="recover tones from a signal file")
    r.add_argument("--signal", required=True)
    r.add_argument("--delta", type=float, default=0.1)
    r.add_argument("--C", type=float, default=120.0)
    r.add_argument("--rmerge", type=int, default=None)
    r.add_argument("--c-reg", type=int, default=10, help="fine-step observations per dimension")
    r.add_argument("--merge-order", choices=MERGE_ORDERS, default="medoid")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--manifest", default=None, help="default: OUT with .manifest.json")
    r.add_argument("--force", action="store_true", help="run even when T is too short")
    _add_filter_flags(r)
    r.set_defaults(func=cmd_recover)

    e = sub.add_parser("eval", help="score recovered tones against the planted signal")
    e.add_argument("--truth", required=True)
    e.add_argument("--recovered", required=True)
    e.add_argument("--delta", type=float, default=0.1)
    e.add_argument("--snr-trials", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="-")
    _add_filter_flags(e)
    e.set_defaults(func=cmd_eval)

    fd = sub.add_parser("filter-dump", help="tabulate the filter in time and frequency")
    fd.add_argument("--k", type=int, default=1)
    fd.add_argument("--d", type=int, default=1)
    fd.add_argument("--delta", type=float, default=0.1)
    fd.add_argument("--F", type=float, default=1.0)
    fd.add_argument("--eta", type=float, default=1.0)
    fd.add_argument("--window", choices=(WINDOW_FLAT, WINDOW_LITERAL), default=WINDOW_FLAT)
    fd.add_argument("--points", type=int, default=401)
    fd.add_argument("--f-range", type=float, default=1.0)
    fd.add_argument("--out", default="-")
    _add_filter_flags(fd)
    fd.set_defaults(func=cmd_filter_dump)

    h = sub.add_parser("hash-stats", help="Monte-Carlo audit of hashing events")
    h.add_argument("--event", choices=("offset", "collision"), default="offset")
    h.add_argument("--d", type=int, default=1)
    h.add_argument("--B", type=int, default=8)
    h.add_argument("--alpha", type=float, default=0.1)
    h.add_argument("--eta", type=float, default=1.0)
    h.add_argument("--freq", type=float, nargs="+", default=None)
    h.add_argument("--distance", type=float, default=None, help="pair distance for collisions")
    h.add_argument("--draws", type=int, default=200_000)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", default="-")
    h.set_defaults(func=cmd_hash_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DURATION
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
