"""Command line front end: ``tvharm analyze | sweep | synth``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .pipeline import (
    MEASURE_CHOICES,
    PipelineConfig,
    WavFormatError,
    analyze_file,
    write_outputs,
    write_wav,
)
from .synthbench import DEFAULT_AXES, SynthSpec, run_sweep, synth_signal

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

log = logging.getLogger("tvharm")


class ConfigError(ValueError):
    pass


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _configs(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in _csv_list(text):
        try:
            lphi, l = item.split(":")
            out.append((int(lphi), int(l)))
        except ValueError:
            raise ConfigError(f"bad model config {item!r}, expected LPHI:L") from None
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvharm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="sliding-window analysis of a WAV file")
    an.add_argument("input", type=Path)
    an.add_argument("--fs", type=float, default=8000.0, help="analysis rate, Hz")
    an.add_argument("--window-ms", type=float, default=50.0)
    an.add_argument("--hop-ms", type=float, default=10.0)
    an.add_argument("--lphi", type=int, default=2, help="phase polynomial order")
    an.add_argument("--l", dest="L", type=int, default=1, help="amplitude polynomial order")
    grp = an.add_mutually_exclusive_group()
    grp.add_argument("--p", dest="P", type=int, help="fixed harmonic count")
    grp.add_argument("--fill-spectrum", action="store_true",
                     help="choose the harmonic count per window (default)")
    an.add_argument("--f0-min", type=float, default=60.0, help="Hz")
    an.add_argument("--f0-max", type=float, default=500.0, help="Hz")
    an.add_argument("--measures", default="hnr,rates",
                    help=f"comma list from {','.join(MEASURE_CHOICES)}")
    an.add_argument("--n-harmonic-hnr", type=int, default=3,
                    help="per-harmonic HNRs reported with band-hnr")
    an.add_argument("--ar-order", type=int, default=16)
    an.add_argument("--no-warm-start", action="store_true")
    an.add_argument("--out", default="csv,json", help="comma list from csv,json")
    an.add_argument("--no-series", action="store_true", help="skip the plot-series file")
    an.add_argument("--out-prefix", type=Path, help="default: input path without suffix")

    sw = sub.add_parser("sweep", help="Monte Carlo HNR sweep on synthetic signals")
    sw.add_argument("kind", choices=sorted(DEFAULT_AXES))
    sw.add_argument("--axis", help="comma list of axis values (default: built-in grid)")
    sw.add_argument("--configs", default="2:0,1:0", help="comma list of LPHI:L")
    sw.add_argument("--realizations", type=int, default=200)
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--f0dot", type=float, default=0.0, help="base F0 rate, Hz/s")
    sw.add_argument("--window-ms", type=float, default=50.0)
    sw.add_argument("--hnr", type=float, default=20.0, help="base true HNR, dB")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out-prefix", type=Path, default=Path("sweep"))

    sy = sub.add_parser("synth", help="render a synthetic test signal to WAV")
    sy.add_argument("output", type=Path)
    sy.add_argument("--fs", type=float, default=5000.0)
    sy.add_argument("--duration", type=float, default=1.0, help="s")
    sy.add_argument("--f0", type=float, default=150.0, help="centre F0, Hz")
    sy.add_argument("--f0dot", type=float, default=0.0, help="Hz/s")
    sy.add_argument("--p", dest="P", type=int)
    sy.add_argument("--hnr", type=float, default=20.0, help="dB")
    sy.add_argument("--law", choices=("geometric", "inverse"), default="geometric")
    sy.add_argument("--scale", type=float, default=0.25, help="output gain")
    sy.add_argument("--seed", type=int, default=0)
    return ap


def _analyze(args) -> int:
    measures = _csv_list(args.measures)
    formats = _csv_list(args.out)
    if set(formats) - {"csv", "json"}:
        raise ConfigError(f"unknown output format in {args.out!r}")
    try:
        cfg = PipelineConfig(
            target_fs=args.fs, window_s=args.window_ms / 1000, hop_s=args.hop_ms / 1000,
            L_phi=args.lphi, L=args.L, P=args.P, f0_min_hz=args.f0_min,
            f0_max_hz=args.f0_max, measures=measures, n_per_harmonic=args.n_harmonic_hnr,
            ar_order=args.ar_order, warm_start=not args.no_warm_start)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.L_phi < 1 or cfg.L < 0:
        raise ConfigError("need --lphi >= 1 and --l >= 0")
    try:
        records = analyze_file(args.input, cfg)
    except (OSError, WavFormatError) as exc:
        print(f"tvharm: {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not records:
        print(f"tvharm: {args.input}: shorter than one analysis window", file=sys.stderr)
        return EXIT_INPUT
    prefix = args.out_prefix or args.input.with_suffix("")
    meta = {"input": str(args.input), "config": {k: v for k, v in vars(cfg).items()}}
    try:
        paths = write_outputs(records, prefix, formats, series=not args.no_series, meta=meta)
    except OSError as exc:
        print(f"tvharm: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for p in paths:
        log.info("wrote %s", p)
    failed = sum(r.status == "failed" for r in records)
    if failed:
        print(f"tvharm: {failed} of {len(records)} windows failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _sweep(args) -> int:
    if args.realizations < 1 or args.jobs < 1:
        raise ConfigError("realizations and jobs must be positive")
    base = SynthSpec()
    base = replace(base, f0dot_norm=args.f0dot / base.fs ** 2,
                   n_samples=int(round(args.window_ms / 1000 * base.fs)),
                   noise_var=10 ** (-args.hnr / 10))
    try:
        axis = None if args.axis is None else tuple(float(v) for v in _csv_list(args.axis))
        configs = _configs(args.configs)
        res = run_sweep(args.kind, configs, args.realizations, args.seed, axis, base,
                        n_jobs=args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        res.to_csv(f"{args.out_prefix}.csv")
        res.to_json(f"{args.out_prefix}.json")
    except OSError as exc:
        print(f"tvharm: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_INPUT
    mean = res.mean()
    for i, v in enumerate(res.axis):
        cells = "  ".join(f"HM{lp},{l}={mean[i, j]:7.2f}" for j, (lp, l) in enumerate(res.configs))
        print(f"{args.kind}={v:g}  {cells}")
    return EXIT_OK


def _synth(args) -> int:
    n = int(round(args.duration * args.fs))
    try:
        spec = SynthSpec(fs=args.fs, n_samples=n, f0_norm=args.f0 / args.fs,
                         f0dot_norm=args.f0dot / args.fs ** 2, P=args.P,
                         amplitude_law=args.law, phase_seed=args.seed,
                         noise_var=10 ** (-args.hnr / 10), noise_seed=args.seed + 1)
        x = args.scale * synth_signal(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        write_wav(args.output, x, args.fs)
    except OSError as exc:
        print(f"tvharm: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"analyze": _analyze, "sweep": _sweep, "synth": _synth}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"tvharm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
