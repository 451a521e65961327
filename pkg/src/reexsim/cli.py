"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from .config import ConfigError, load_config, validate_config
from .detchain import detect
from .presets import PRESETS, PresetError, run_preset, scan_spectra
from .tagio import TagFormatError, read_tags, write_tags
from .trajectory import run

log = logging.getLogger("reexsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args):
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "n_pulses", None):
        overrides["simulation.n_pulses"] = args.n_pulses
    if getattr(args, "workers", None):
        overrides["simulation.n_workers"] = args.workers
    if overrides:
        cfg = cfg.with_overrides(overrides)
    seed = cfg.seed if args.seed is None else args.seed
    if args.seed is None:
        log.info("no --seed given; using config seed %d", seed)
    return cfg, seed


def cmd_simulate(args):
    cfg, seed = _load(args)
    stream = run(cfg.laser(), cfg.emitter(), cfg.phonons(), cfg.sim(seed=seed))
    if stream.aborted.size:
        log.warning("%d pulses exceeded max_photons_per_pulse and were dropped", stream.aborted.size)
    if args.photons:
        stream.to_csv(args.photons)
    tags = detect(stream, cfg.chain(), seed)
    write_tags(tags, args.output, args.format)
    log.info("wrote %d tags (%d photons, seed %d) to %s", len(tags), len(stream), seed, args.output)


def cmd_analyze(args):
    cfg = load_config(args.config)
    tags = read_tags(args.tags, args.format).sorted()
    if tags.reordered:
        log.warning("input was not time-sorted; %d tags reordered", tags.reordered)
    det = cfg["detection"]
    ana = cfg["analysis"]
    clock = tags.channel(det["clock_channel"])
    a = tags.channel(det["arm_a_channel"])
    b = tags.channel(det["arm_b_channel"])
    period = int(1e6 / cfg["laser"]["rep_rate"])
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sides = ana["g2_side_peaks"]
    span = int(max(abs(k) for k in sides) * period + period // 2 + 1)
    hist = an.cross_correlate(a, b, ana["bin_width"], span)
    meta = {"source": str(args.tags), "bin_width_ps": ana["bin_width"], "span_ps": span, "version": __version__}
    coarse = hist.rebinned(max(1, 50 // hist.bin_width))
    an.write_product(out / "g2_tau.csv", {"tau_ps": coarse.centers, "counts": coarse.counts}, dict(meta, bin_width_ps=coarse.bin_width))
    metrics = {"tags": len(tags), "clock": int(clock.size), "arm_a": int(a.size), "arm_b": int(b.size)}
    g2, err = _try(an.g2_zero, hist, period, side_peaks=sides)
    metrics.update(g2_zero=g2.value if g2 else None, g2_zero_err=g2.error if g2 else None, g2_error=err)
    pairs = an.coincidence_pairs(a, b, ana["coincidence_window"])
    h1, h2 = an.first_second_histograms(pairs, clock, ana["time_bin"], tuple(ana["time_range"]))
    an.write_product(out / "photon_histograms.csv", {"t_ps": h1.centers, "first": h1.counts, "second": h2.counts},
                     dict(meta, bin_width_ps=ana["time_bin"], coincidence_window_ps=ana["coincidence_window"]))
    h2d = an.histogram2d(pairs, clock, ana["hist2d_bin"], tuple(ana["hist2d_range"]))
    c = h2d.edges[:-1] + h2d.bin_width / 2.0
    t1, t2 = np.meshgrid(c, c, indexing="ij")
    an.write_product(out / "hist2d.csv", {"t1_ps": t1.ravel(), "t2_ps": t2.ravel(), "count": h2d.counts.ravel()},
                     dict(meta, bin_width_ps=ana["hist2d_bin"]))
    metrics.update(pairs=len(pairs), dropped_before_clock=h1.dropped)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(json.dumps(metrics, sort_keys=True))


def _try(fn, *a, **kw):
    try:
        return fn(*a, **kw), None
    except an.AnalysisError as exc:
        return None, str(exc)


def cmd_spectrum(args):
    cfg, seed = _load(args)
    exp = cfg["experiments"]
    start = exp["spectrum_start"] if args.start is None else args.start
    stop = exp["spectrum_stop"] if args.stop is None else args.stop
    step = exp["spectrum_step"] if args.step is None else args.step
    if not (step > 0 and start < stop):
        raise ConfigError([f"spectrum range: need start < stop and step > 0 (got {start}, {stop}, {step})"])
    centers = start + step * np.arange(int(round((stop - start) / step)) + 1)
    stream = run(cfg.laser(), cfg.emitter(), cfg.phonons(), cfg.sim(seed=seed))
    spec = scan_spectra(cfg, stream, seed, (args.mode,), centers)[args.mode]
    an.write_product(
        args.output,
        {"position_GHz": spec.positions, "counts": spec.counts.astype(np.int64), "err": spec.errors},
        {"mode": args.mode, "seed": seed, "n_pulses": cfg["simulation"]["n_pulses"], "version": __version__},
    )
    log.info("wrote %s spectrum (%d points, seed %d) to %s", args.mode, spec.positions.size, seed, args.output)


def cmd_g2scan(args):
    cfg, seed = _load(args)
    if args.pulse_lengths:
        cfg = cfg.with_overrides({"experiments.pulse_lengths": args.pulse_lengths})
    res = run_preset("fig4", cfg, seed=seed, out_dir=args.output_dir)
    print(json.dumps({k: v for k, v in res.metrics.items() if k != "rows"}, sort_keys=True))


def cmd_preset(args):
    cfg, seed = _load(args)
    res = run_preset(args.name, cfg, seed=seed, out_dir=args.output_dir)
    log.info("preset %s done in %.1f s; outputs in %s", args.name, res.manifest.wall_time_s, res.out_dir)


def cmd_validate(args):
    violations = validate_config(args.config)
    for v in violations:
        print(v)
    if violations:
        return EXIT_CONFIG
    print(f"{args.config}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reexsim", description="Re-excitation photon statistics simulator and analysis.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, output_dir=False):
        sp.add_argument("--config", help="YAML config (default: the shipped defaults)")
        sp.add_argument("--seed", type=int, help="RNG seed (default: config seed, logged)")
        sp.add_argument("--n-pulses", type=int, help="override simulation.n_pulses")
        sp.add_argument("--workers", type=int, help="override simulation.n_workers")
        if output_dir:
            sp.add_argument("--output-dir", required=True)

    sp = sub.add_parser("simulate", help="simulate pulses and write a timetag file")
    common(sp)
    sp.add_argument("--output", required=True, help="tag file (.qtag or .csv)")
    sp.add_argument("--format", choices=("qtag", "csv"))
    sp.add_argument("--photons", help="also write the photon records as CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="correlate a timetag file")
    sp.add_argument("--tags", required=True)
    sp.add_argument("--format", choices=("qtag", "csv"))
    sp.add_argument("--config", help="YAML config supplying channels and analysis settings")
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("spectrum", help="scan the filter and record a gated spectrum")
    common(sp)
    sp.add_argument("--mode", choices=an.SPECTRUM_MODES, default="two_photon")
    sp.add_argument("--start", type=float)
    sp.add_argument("--stop", type=float)
    sp.add_argument("--step", type=float)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("g2scan", help="g2(0) versus pulse length, with and without the fixed etalon")
    common(sp, output_dir=True)
    sp.add_argument("--pulse-lengths", type=_floats, help="comma-separated pulse lengths in ps")
    sp.set_defaults(func=cmd_g2scan)

    sp = sub.add_parser("preset", help="run a figure preset")
    sp.add_argument("name", choices=sorted(PRESETS))
    common(sp, output_dir=True)
    sp.set_defaults(func=cmd_preset)

    sp = sub.add_parser("validate", help="check a config file")
    sp.add_argument("config")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        code = args.func(args)
    except (ConfigError, PresetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TagFormatError, OSError, ValueError, an.AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
