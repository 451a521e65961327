"""Figure presets: simulate, detect and analyse one experiment end to end.

Every preset writes CSV series plus ``metrics.json`` into its output
directory, then ``manifest.json`` last.  Outputs are pure functions of
(config, seed, package version); only the manifest's wall time varies.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from .config import ExperimentConfig, filter_from
from .detchain import detect
from .physmodel import ghz, max_shift, peak_rabi_from_power, to_ghz
from .trajectory import run


class PresetError(ValueError):
    """Unknown preset or a config that lacks what the preset needs."""


@dataclass
class RunManifest:
    preset: str
    seed: int
    version: str
    config: dict
    derived: dict
    outputs: dict
    wall_time_s: float

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=an._json_default) + "\n")


@dataclass
class PresetResult:
    name: str
    out_dir: Path
    metrics: dict
    manifest: RunManifest
    products: dict = field(default_factory=dict)


class _Run:
    """Bookkeeping shared by the presets."""

    def __init__(self, name, cfg: ExperimentConfig, seed, out_dir, n_pulses):
        self.name, self.cfg, self.seed = name, cfg, seed
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.n_pulses = n_pulses or cfg["simulation"]["n_pulses"]
        self.files = []
        self.derived = {}
        self.products = {}

    def meta(self, **extra):
        return {"preset": self.name, "seed": self.seed, "n_pulses": self.n_pulses, "version": __version__, **extra}

    def write(self, filename, columns, **meta):
        path = self.out_dir / filename
        an.write_product(path, columns, self.meta(**meta))
        self.files.append(path)

    def simulate(self, **laser_kw):
        pulse = self.cfg.laser(**laser_kw)
        stream = run(pulse, self.cfg.emitter(), self.cfg.phonons(), self.cfg.sim(seed=self.seed, n_pulses=self.n_pulses))
        return pulse, stream


# --------------------------------------------------------------------------
# shared measurement helpers


def spectrum_centers(cfg: ExperimentConfig) -> np.ndarray:
    e = cfg["experiments"]
    n = int(round((e["spectrum_stop"] - e["spectrum_start"]) / e["spectrum_step"]))
    return e["spectrum_start"] + e["spectrum_step"] * np.arange(n + 1)


def scan_spectra(cfg: ExperimentConfig, stream, seed, modes, centers=None, shared_override=None) -> dict:
    """Spectra for each gating mode with the scanning filters in arm B.

    Two-photon and first-photon modes only need pulses with two or more
    photons; since detection randomness is keyed per pulse, detecting that
    subset gives the same coincidences as the full stream (dead time aside).
    """
    centers = spectrum_centers(cfg) if centers is None else np.asarray(centers, dtype=float)
    dead = any(d["dead_time"] > 0 for d in cfg["detection"]["detectors"])
    work = stream if ("unheralded" in modes or dead) else stream.multiphoton()
    window = cfg["analysis"]["coincidence_window"]
    gate = tuple(cfg["analysis"]["first_photon_gate"])
    cache = {}

    def measure(c):
        if c not in cache:
            chain = cfg.chain(arm_b=cfg.scan_filters(c), shared_override=shared_override)
            tags = detect(work, chain, seed)
            b = tags.channel("arm_b")
            out = {"unheralded": b.size}
            if "two_photon" in modes or "first_photon" in modes:
                pairs = an.coincidence_pairs(tags.channel("arm_a"), b, window)
                out["two_photon"] = len(pairs)
                out["first_photon"] = len(an.gated_pairs(pairs, tags.channel("clock"), gate))
            cache[c] = out
        return cache[c]

    return {m: an.scan_spectrum(m, centers, lambda c, m=m: measure(c)[m]) for m in modes}


def measure_g2(cfg: ExperimentConfig, stream, chain, seed):
    period = chain.rep_period_ps
    sides = cfg["analysis"]["g2_side_peaks"]
    span = int(max(abs(k) for k in sides) * period + period // 2 + 1)
    tags = detect(stream, chain, seed)
    hist = an.cross_correlate(tags.channel("arm_a"), tags.channel("arm_b"), cfg["analysis"]["bin_width"], span)
    return an.g2_zero(hist, period, side_peaks=sides), hist


def _fwhm_of_trace(centers, y):
    i = int(np.argmax(y))
    half = y[i] / 2.0
    lo = hi = np.nan
    for j in range(i, 0, -1):
        if y[j - 1] <= half:
            lo = centers[j - 1] + (half - y[j - 1]) * (centers[j] - centers[j - 1]) / (y[j] - y[j - 1])
            break
    for j in range(i, len(y) - 1):
        if y[j + 1] <= half:
            hi = centers[j] + (y[j] - half) * (centers[j + 1] - centers[j]) / (y[j] - y[j + 1])
            break
    return float(hi - lo)


def _safe(fn, *args, **kw):
    """Run an estimator; report failures as a message instead of raising."""
    try:
        return fn(*args, **kw), None
    except an.AnalysisError as exc:
        return None, str(exc)


def _drive_end_ps(cfg, pulse):
    return 1e12 * pulse.window(cfg["simulation"]["laser_off_threshold"])[1]


# --------------------------------------------------------------------------
# presets


def fig2b(r: _Run) -> dict:
    """Clock-referenced histograms of the early and late click of each pair."""
    cfg = r.cfg
    pulse, stream = r.simulate()
    t_on, t_off = pulse.window(cfg["simulation"]["laser_off_threshold"])
    multi = stream.counts_per_pulse[stream.pulse_index] >= 2
    first = multi & (stream.ordinal == 1)
    inside = (stream.emission_time[first] >= t_on) & (stream.emission_time[first] <= t_off)
    chain = cfg.chain()
    tags = detect(stream, chain, r.seed)
    ana = cfg["analysis"]
    pairs = an.coincidence_pairs(tags.channel("arm_a"), tags.channel("arm_b"), ana["coincidence_window"])
    h1, h2 = an.first_second_histograms(pairs, tags.channel("clock"), ana["time_bin"], tuple(ana["time_range"]))
    jit = [d["jitter_fwhm"] for d in cfg["detection"]["detectors"]]
    fit_lo = 1e12 * t_off + 2 * max(jit)
    fit_hi = ana["time_range"][1] - 500.0
    fit, err = _safe(an.decay_fit, h2, (fit_lo, fit_hi))
    fwhm1 = _fwhm_of_trace(h1.centers, h1.counts.astype(float))
    j_rms = float(np.sqrt(np.mean(np.square(jit))))
    fwhm1_deconv = float(np.sqrt(max(fwhm1**2 - j_rms**2, 0.0)))
    r.write("photon_histograms.csv", {"t_ps": h1.centers, "first": h1.counts, "second": h2.counts},
            bin_width_ps=ana["time_bin"], coincidence_window_ps=ana["coincidence_window"])
    r.products.update(first=h1, second=h2, stream=stream)
    return {
        "photon_number_distribution": stream.photon_number_distribution().tolist(),
        "multiphoton_pulses": int(np.count_nonzero(stream.counts_per_pulse >= 2)),
        "first_photon_inside_drive_fraction": float(inside.mean()) if inside.size else float("nan"),
        "drive_window_ps": [1e12 * t_on, 1e12 * t_off],
        "pairs": len(pairs),
        "second_tau_ps": fit.params["tau"] if fit else None,
        "second_tau_err_ps": fit.errors["tau"] if fit else None,
        "second_fit_window_ps": [fit_lo, fit_hi],
        "fit_error": err,
        "first_fwhm_ps": fwhm1,
        "first_fwhm_deconvolved_ps": fwhm1_deconv,
        "first_fwhm_over_pulse": fwhm1_deconv / cfg["laser"]["pulse_fwhm"],
    }


def _spectrum_metrics(cfg, spectra):
    ana = cfg["analysis"]
    out = {}
    if "two_photon" in spectra:
        tp = spectra["two_photon"]
        main, err = _safe(an.main_peak_position, tp, ana["side_peak_exclusion"])
        side, serr = _safe(an.side_peak_position, tp, ana["side_peak_exclusion"], ana["side_peak_method"])
        out["main_peak_GHz"] = main[0] if main else None
        out["main_peak_err_GHz"] = main[1] if main else None
        out["side_peak_GHz"] = side[0] if side else None
        out["side_peak_err_GHz"] = side[1] if side else None
        out["main_fwhm_GHz"] = an.peak_fwhm(tp, main[0]) if main else None
        out["side_fwhm_GHz"] = an.peak_fwhm(tp, side[0]) if side else None
        out["side_peak_error"] = serr or err
    if "first_photon" in spectra:
        fp = spectra["first_photon"]
        pk, ferr = _safe(an.side_peak_position, fp, ana["side_peak_exclusion"], ana["side_peak_method"])
        out["first_photon_peak_GHz"] = pk[0] if pk else None
        out["first_photon_peak_err_GHz"] = pk[1] if pk else None
        out["first_photon_error"] = ferr
    return out


def _spectra_columns(spectra):
    first = next(iter(spectra.values()))
    cols = {"position_GHz": first.positions}
    for mode, sp in spectra.items():
        cols[mode] = sp.counts.astype(np.int64)
        cols[f"{mode}_err"] = sp.errors
    return cols


def fig3a(r: _Run) -> dict:
    """Unheralded, two-photon and first-photon gated spectra."""
    cfg = r.cfg
    pulse, stream = r.simulate()
    spectra = scan_spectra(cfg, stream, r.seed, ("unheralded", "two_photon", "first_photon"))
    r.write("spectra.csv", _spectra_columns(spectra), gate_ps=cfg["analysis"]["first_photon_gate"],
            coincidence_window_ps=cfg["analysis"]["coincidence_window"])
    r.products.update(spectra)
    m = _spectrum_metrics(cfg, spectra)
    m["model_max_shift_GHz"] = to_ghz(max_shift(pulse.peak_rabi, pulse.detuning))
    return m


def fig3b(r: _Run) -> dict:
    """Power scan: side-peak position and extracted peak Rabi frequency."""
    cfg = r.cfg
    exp = cfg["experiments"]
    ref = cfg["laser"]["peak_rabi"]
    det = cfg["laser"]["detuning"]
    if det <= 0:
        raise PresetError("fig3b needs a blue-detuned laser (laser.detuning > 0)")
    rows = []
    long = {"scale": [], "position_GHz": [], "two_photon": [], "first_photon": []}
    for scale in exp["field_scales"]:
        _, stream = r.simulate(peak_rabi_ghz=scale * ref)
        spectra = scan_spectra(cfg, stream, r.seed, ("two_photon", "first_photon"))
        tp, fp = spectra["two_photon"], spectra["first_photon"]
        main, _ = _safe(an.main_peak_position, tp, cfg["analysis"]["side_peak_exclusion"])
        side, serr = _safe(an.side_peak_position, fp, exp["power_scan_exclusion"], cfg["analysis"]["side_peak_method"])
        rabi = an.rabi_with_error(side[0], side[1], det) if side and side[0] <= 0 else (np.nan, np.nan)
        rows.append(
            {
                "scale": scale,
                "applied_rabi_GHz": scale * ref,
                "side_peak_GHz": side[0] if side else np.nan,
                "side_peak_err_GHz": side[1] if side else np.nan,
                "main_peak_GHz": main[0] if main else np.nan,
                "main_peak_err_GHz": main[1] if main else np.nan,
                "model_max_shift_GHz": to_ghz(max_shift(ghz(scale * ref), ghz(det))) if scale > 0 else 0.0,
                "extracted_rabi_GHz": rabi[0],
                "extracted_rabi_err_GHz": rabi[1],
                "error": serr,
            }
        )
        for k in range(tp.positions.size):
            long["scale"].append(scale)
            long["position_GHz"].append(tp.positions[k])
            long["two_photon"].append(int(tp.counts[k]))
            long["first_photon"].append(int(fp.counts[k]))
        r.products[f"spectra_{scale:g}"] = spectra
    col = lambda k: [row[k] for row in rows]  # noqa: E731
    r.write("sidepeak_vs_field.csv", {k: col(k) for k in ("scale", "applied_rabi_GHz", "side_peak_GHz", "side_peak_err_GHz",
                                                          "main_peak_GHz", "main_peak_err_GHz", "model_max_shift_GHz")},
            spectrum_mode="first_photon", exclusion_GHz=exp["power_scan_exclusion"])
    r.write("rabi_vs_field.csv", {k: col(k) for k in ("scale", "applied_rabi_GHz", "extracted_rabi_GHz", "extracted_rabi_err_GHz")},
            detuning_GHz=det)
    r.write("spectra_vs_field.csv", long)
    r.derived["applied_rabi_GHz"] = dict(zip(map(str, col("scale")), col("applied_rabi_GHz")))
    ok = [row for row in rows if np.isfinite(row["extracted_rabi_GHz"])]
    m = {"rows": rows}
    if len(ok) >= 2:
        fit = an.linear_fit([row["scale"] for row in ok], [row["extracted_rabi_GHz"] for row in ok])
        m.update(rabi_fit_slope_GHz=fit["slope"], rabi_fit_intercept_GHz=fit["intercept"], rabi_fit_r2=fit.r2)
    m["points_used"] = len(ok)
    return m


def fig4(r: _Run) -> dict:
    """g2(0) versus pulse length at constant power, with and without the etalon."""
    cfg = r.cfg
    exp = cfg["experiments"]
    purity = cfg.purity_filter()
    if purity is None:
        raise PresetError("fig4 needs experiments.purity_filter (the fixed etalon at the transition)")
    tau = cfg["emitter"]["lifetime"]
    rows = []
    tau_cols = {}
    for dt in exp["pulse_lengths"]:
        rabi = to_ghz(peak_rabi_from_power(ghz(exp["power_reference_rabi"]), exp["power_reference_fwhm"], dt))
        _, stream = r.simulate(pulse_fwhm_ps=dt, peak_rabi_ghz=rabi)
        g_u, h_u = measure_g2(cfg, stream, cfg.chain(), r.seed)
        g_f, h_f = measure_g2(cfg, stream, cfg.chain(shared=(purity,)), r.seed)
        pn = stream.photon_number_distribution()
        rows.append(
            {
                "pulse_fwhm_ps": dt,
                "pulse_over_lifetime": dt / tau,
                "peak_rabi_GHz": rabi,
                "p0": float(pn[0]),
                "p2plus": float(pn[2:].sum()),
                "g2_unfiltered": g_u.value,
                "g2_unfiltered_err": g_u.error,
                "g2_filtered": g_f.value,
                "g2_filtered_err": g_f.error,
            }
        )
        for label, h, g in (("unfiltered", h_u, g_u), ("filtered", h_f, g_f)):
            coarse = h.rebinned(max(1, 50 // h.bin_width))
            side = np.mean(g.residuals["side"]) / (cfg.chain().rep_period_ps / 2.0) * coarse.bin_width
            tau_cols.setdefault("tau_ps", coarse.centers)
            tau_cols[f"{label}_{dt:g}ps"] = coarse.counts / side if side > 0 else coarse.counts * 0.0
        r.derived.setdefault("peak_rabi_GHz_by_pulse_ps", {})[f"{dt:g}"] = rabi
    col = lambda k: [row[k] for row in rows]  # noqa: E731
    r.write("g2_vs_pulselength.csv", {k: col(k) for k in rows[0]}, side_peaks=cfg["analysis"]["g2_side_peaks"],
            window_ps=cfg.chain().rep_period_ps / 2.0)
    r.write("g2_tau.csv", tau_cols, normalisation="mean side-peak level per bin", bin_width_ps=50)
    x = col("pulse_over_lifetime")
    fu = an.linear_fit(x, col("g2_unfiltered"), through_origin=True)
    ff = an.linear_fit(x, col("g2_filtered"), through_origin=True)
    gf = np.array(col("g2_filtered"))
    longest = int(np.argmax(col("pulse_fwhm_ps")))
    return {
        "rows": rows,
        "slope_unfiltered": fu["slope"],
        "slope_unfiltered_err": fu.errors["slope"],
        "r2_unfiltered": fu.r2,
        "slope_filtered": ff["slope"],
        "slope_filtered_err": ff.errors["slope"],
        "filtered_over_unfiltered_longest": rows[longest]["g2_filtered"] / rows[longest]["g2_unfiltered"],
        "filtered_max_over_min": float(gf.max() / gf.min()) if gf.min() > 0 else float("inf"),
    }


def figS3(r: _Run) -> dict:
    """Two-photon arrival-time maps without and with detector jitter."""
    cfg = r.cfg
    ana = cfg["analysis"]
    _, stream = r.simulate()
    work = stream.multiphoton()
    out = {}
    for label, jitter in (("nojitter", False), ("jitter", True)):
        tags = detect(work, cfg.chain(jitter=jitter), r.seed)
        pairs = an.coincidence_pairs(tags.channel("arm_a"), tags.channel("arm_b"), ana["coincidence_window"])
        h = an.histogram2d(pairs, tags.channel("clock"), ana["hist2d_bin"], tuple(ana["hist2d_range"]))
        c = h.edges[:-1] + h.bin_width / 2.0
        t1, t2 = np.meshgrid(c, c, indexing="ij")
        r.write(f"hist2d_{label}.csv", {"t1_ps": t1.ravel(), "t2_ps": t2.ravel(), "count": h.counts.ravel()},
                bin_width_ps=ana["hist2d_bin"])
        r.products[f"hist2d_{label}"] = h
        diag = h.diagonal()
        band = h.band_mean(50.0, 100.0)
        out[label] = {
            "pairs": len(pairs),
            "diagonal_sum": int(diag.sum()),
            "diagonal_mean": float(diag.mean()),
            "band_50_100_mean": band,
            "diagonal_over_band": float(diag.mean() / band) if band > 0 else float("nan"),
        }
    t = stream.emission_time
    same = stream.pulse_index[1:] == stream.pulse_index[:-1]
    gaps = np.diff(t)[same] * 1e12
    out["emission_gaps_below_bin"] = int(np.count_nonzero(gaps < ana["hist2d_bin"]))
    out["multiphoton_gaps"] = int(gaps.size)
    return out


def figS4(r: _Run) -> dict:
    """Two-photon spectra under blue and red detuning (laser notch follows the laser)."""
    cfg = r.cfg
    out = {}
    spectra_all = {}
    for label, det in (("blue", cfg["laser"]["detuning"]), ("red", cfg["experiments"]["red_detuning"])):
        shared = []
        for f in cfg["detection"]["shared_filters"]:
            f = dict(f, center=det) if f["kind"] == "notch" else f
            shared.append(filter_from(f))
        _, stream = r.simulate(detuning_ghz=det)
        spectra = scan_spectra(cfg, stream, r.seed, ("two_photon",), shared_override=shared)
        tp = spectra["two_photon"]
        spectra_all[label] = tp
        excl = cfg["analysis"]["side_peak_exclusion"]
        red_side = float(tp.counts[tp.positions < -excl].sum())
        blue_side = float(tp.counts[tp.positions > excl].sum())
        out[label] = {
            "detuning_GHz": det,
            "mean_photons_per_pulse": len(stream) / stream.n_pulses,
            "p2plus": float(stream.photon_number_distribution()[2:].sum()),
            "two_photon_total": float(tp.counts.sum()),
            "red_side_counts": red_side,
            "blue_side_counts": blue_side,
        }
    pos = spectra_all["blue"].positions
    r.write("spectra_detuning.csv", {"position_GHz": pos, "blue": spectra_all["blue"].counts.astype(np.int64),
                                     "red": spectra_all["red"].counts.astype(np.int64)})
    r.products.update(spectra_all)
    b, rd = out["blue"]["two_photon_total"], out["red"]["two_photon_total"]
    out["red_over_blue_two_photon"] = rd / b if b else float("nan")
    return out


def figS5(r: _Run) -> dict:
    """Clock-referenced time traces behind the scanning filter at fixed positions."""
    cfg = r.cfg
    ana = cfg["analysis"]
    pulse, stream = r.simulate()
    t_end = _drive_end_ps(cfg, pulse)
    traces = {}
    out = {"drive_end_ps": t_end, "model_max_shift_GHz": to_ghz(max_shift(pulse.peak_rabi, pulse.detuning))
           if pulse.detuning > 0 else None, "traces": {}}
    bin_ps = ana["hist2d_bin"]
    for f in cfg["experiments"]["trace_filters"]:
        chain = cfg.chain(arm_b=cfg.scan_filters(f), splitter=0.0)
        tags = detect(stream, chain, r.seed)
        h = an.time_histogram(tags.channel("arm_b"), tags.channel("clock"), bin_ps, tuple(ana["time_range"]))
        traces[f] = h
        out["traces"][f"{f:g}"] = trace_metrics(h, cfg, t_end)
    cols = {"t_ps": next(iter(traces.values())).centers}
    for f, h in traces.items():
        cols[f"filter_{f:g}GHz"] = h.counts
    r.write("filtered_traces.csv", cols, bin_width_ps=bin_ps)
    r.products["traces"] = traces
    return out


def trace_metrics(h: an.TimeHistogram, cfg: ExperimentConfig, t_end_ps: float, smooth_bins: int = 3) -> dict:
    """Shape summary of a clock-referenced trace.

    ``tail_fraction`` is the share of counts later than 200 ps after the drive
    ends; ``decay_tau_ps`` is a tail fit from 100 ps after the drive to the end
    of the window.
    """
    y = np.convolve(h.counts.astype(float), np.ones(smooth_bins) / smooth_bins, mode="same")
    peaks = an.local_maxima(h, prominence=0.1, smooth_bins=smooth_bins)
    total = float(h.counts.sum())
    tail = float(h.counts[h.centers > t_end_ps + 200.0].sum())
    fit, err = _safe(an.decay_fit, h, (t_end_ps + 100.0, h.edges[-1]))
    return {
        "counts": int(total),
        "peaks_ps": [float(p) for p in peaks],
        "n_peaks": int(peaks.size),
        "peak_separation_ps": float(peaks[-1] - peaks[0]) if peaks.size >= 2 else 0.0,
        "fwhm_ps": _fwhm_of_trace(h.centers, y) if total else float("nan"),
        "tail_fraction": tail / total if total else float("nan"),
        "decay_tau_ps": fit.params["tau"] if fit else None,
        "fit_error": err,
    }


PRESETS = {"fig2b": fig2b, "fig3a": fig3a, "fig3b": fig3b, "fig4": fig4, "figS3": figS3, "figS4": figS4, "figS5": figS5}


def _checksum(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_preset(name: str, config: ExperimentConfig, seed: int | None = None, out_dir=None, n_pulses=None) -> PresetResult:
    """Run a figure preset; see :data:`PRESETS` for the names."""
    if name not in PRESETS:
        raise PresetError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    seed = config.seed if seed is None else int(seed)
    out_dir = Path(out_dir or Path(config["output_dir"]) / name)
    t0 = time.perf_counter()
    r = _Run(name, config, seed, out_dir, n_pulses)
    metrics = PRESETS[name](r)
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(json.dumps(_clean(metrics), indent=2, sort_keys=True) + "\n")
    r.files.append(metrics_path)
    snapshot = config.snapshot()
    snapshot["seed"] = seed
    snapshot["simulation"]["n_pulses"] = r.n_pulses
    manifest = RunManifest(
        preset=name,
        seed=seed,
        version=__version__,
        config=snapshot,
        derived=r.derived,
        outputs={p.name: _checksum(p) for p in r.files},
        wall_time_s=round(time.perf_counter() - t0, 3),
    )
    manifest.write(out_dir / "manifest.json")
    return PresetResult(name, out_dir, metrics, manifest, r.products)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj
