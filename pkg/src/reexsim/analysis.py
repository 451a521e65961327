"""Correlation, gating, spectral and fitting tools on sorted timetag streams.

Times are integer picoseconds and spectral positions are GHz (``nu = w/2pi``)
throughout this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, curve_fit
from scipy.signal import find_peaks

from .physmodel import rabi_from_shift

SPECTRUM_MODES = ("unheralded", "two_photon", "first_photon")


class AnalysisError(ValueError):
    pass


class UnsortedInputError(AnalysisError):
    pass


def _check_sorted(t, name="input"):
    t = np.asarray(t, dtype=np.int64)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise UnsortedInputError(f"{name} timestamps are not sorted")
    return t


# --------------------------------------------------------------------------
# products


@dataclass
class FitResult:
    params: dict
    errors: dict
    r2: float = float("nan")
    residuals: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    @property
    def value(self) -> float:
        return next(iter(self.params.values()))

    @property
    def error(self) -> float:
        return next(iter(self.errors.values()))


@dataclass
class CorrelationHistogram:
    """Coincidence counts versus delay ``t_b - t_a``; bin ``k`` is centred at
    ``k * bin_width`` and covers ``[k w - w/2, k w + w/2)``."""

    bin_width: int
    centers: np.ndarray
    counts: np.ndarray
    n_a: int
    n_b: int
    acquisition: int

    def window_sum(self, center: float, width: float) -> int:
        lo, hi = center - width / 2.0, center + width / 2.0
        sel = (self.centers >= lo) & (self.centers < hi)
        return int(self.counts[sel].sum())

    def mirrored(self) -> "CorrelationHistogram":
        return CorrelationHistogram(
            self.bin_width, -self.centers[::-1], self.counts[::-1].copy(), self.n_b, self.n_a, self.acquisition
        )

    def rebinned(self, factor: int) -> "CorrelationHistogram":
        k = len(self.counts) // factor
        c = self.counts[: k * factor].reshape(k, factor).sum(axis=1)
        x = self.centers[: k * factor].reshape(k, factor).mean(axis=1)
        return CorrelationHistogram(self.bin_width * factor, x, c, self.n_a, self.n_b, self.acquisition)


@dataclass
class TimeHistogram:
    """Counts versus time since the laser clock (ps)."""

    edges: np.ndarray
    counts: np.ndarray
    dropped: int = 0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])


@dataclass
class Spectrum:
    positions: np.ndarray
    counts: np.ndarray
    errors: np.ndarray
    mode: str

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.positions.size > 1 and np.any(np.diff(self.positions) <= 0):
            raise AnalysisError("spectrum positions must be strictly increasing")
        if self.mode not in SPECTRUM_MODES:
            raise AnalysisError(f"unknown gating mode {self.mode!r}")


@dataclass
class Hist2D:
    """Two-photon coincidences binned by arrival time in arm A (rows, ``t1``)
    and arm B (columns, ``t2``), both relative to the laser clock."""

    edges: np.ndarray
    counts: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def _offsets(self):
        n = len(self.edges) - 1
        i = np.arange(n)
        return (i[None, :] - i[:, None]) * self.bin_width

    def diagonal(self, width: float | None = None) -> np.ndarray:
        """Counts of bins with ``|t1 - t2| <= width`` (default: one bin width),
        i.e. the main diagonal and its two neighbours."""
        width = self.bin_width if width is None else width
        return self.counts[np.abs(self._offsets()) <= width + 1e-9]

    def band_mean(self, lo: float, hi: float) -> float:
        """Mean count per bin over bins whose |t1 - t2| lies in [lo, hi]."""
        off = np.abs(self._offsets())
        sel = (off >= lo) & (off <= hi)
        return float(self.counts[sel].mean()) if sel.any() else float("nan")


@dataclass
class Pairs:
    """Cross-channel coincidences: ``t_a[i]`` on arm A pairs with ``t_b[i]``."""

    t_a: np.ndarray
    t_b: np.ndarray

    def __len__(self):
        return self.t_a.size

    @property
    def early(self):
        return np.minimum(self.t_a, self.t_b)

    @property
    def late(self):
        return np.maximum(self.t_a, self.t_b)

    def __getitem__(self, mask):
        return Pairs(self.t_a[mask], self.t_b[mask])


# --------------------------------------------------------------------------
# correlation


def _pair_indices(a, b, lo_off, hi_off, chunk=2_000_000):
    """Yield index arrays (ia, ib) of all pairs with lo_off <= b - a <= hi_off."""
    lo = np.searchsorted(b, a + lo_off, side="left")
    hi = np.searchsorted(b, a + hi_off, side="right")
    n = hi - lo
    cum = np.cumsum(n)
    start = 0
    while start < a.size:
        # split so each chunk yields at most ~chunk pairs
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + chunk, side="right"))
        stop = max(stop, start + 1)
        nn = n[start:stop]
        ia = np.repeat(np.arange(start, stop), nn)
        if ia.size:
            first = np.repeat(lo[start:stop], nn)
            offs = np.arange(ia.size) - np.repeat(np.cumsum(nn) - nn, nn)
            yield ia, first + offs
        start = stop


def cross_correlate(a, b, bin_width: int, span: int) -> CorrelationHistogram:
    """Histogram of the delays ``t_b - t_a`` in the bins covering ``[-span, span]``.

    The outermost bins are filled over their full width, so a delay slightly
    beyond ``span`` still lands in the last bin.
    """
    a = _check_sorted(a, "a")
    b = _check_sorted(b, "b")
    bin_width, span = int(bin_width), int(span)
    if bin_width < 1 or span < 0:
        raise AnalysisError("bin_width must be >= 1 and span >= 0")
    k = span // bin_width
    counts = np.zeros(2 * k + 1, dtype=np.int64)
    half = bin_width // 2
    for ia, ib in _pair_indices(a, b, -k * bin_width - half, k * bin_width - half + bin_width - 1):
        d = b[ib] - a[ia]
        idx = (d + half) // bin_width + k
        ok = (idx >= 0) & (idx < counts.size)
        counts += np.bincount(idx[ok], minlength=counts.size)
    t_all = np.concatenate([a[:1], a[-1:], b[:1], b[-1:]])
    acq = int(t_all.max() - t_all.min()) if t_all.size else 0
    centers = np.arange(-k, k + 1, dtype=np.int64) * bin_width
    return CorrelationHistogram(bin_width, centers, counts, a.size, b.size, acq)


def g2_zero(hist: CorrelationHistogram, rep_period: int, side_peaks=(-1, 1)) -> FitResult:
    """Central-peak area over the mean neighbouring-peak area.

    Each window is half a repetition period wide; side windows sit at
    ``k * rep_period`` for ``k`` in ``side_peaks``.
    """
    width = rep_period / 2.0
    reach = max(abs(k) for k in side_peaks) * rep_period + width / 2.0
    if hist.centers[-1] + hist.bin_width / 2.0 < reach or -hist.centers[0] + hist.bin_width / 2.0 < reach:
        raise AnalysisError("histogram span too short for the requested side peaks")
    if abs(width / hist.bin_width - round(width / hist.bin_width)) > 1e-9:
        raise AnalysisError(f"bin width {hist.bin_width} does not divide the {width} ps window")
    c0 = hist.window_sum(0.0, width)
    sides = [hist.window_sum(k * rep_period, width) for k in side_peaks]
    cs = float(sum(sides))
    if cs <= 0:
        raise AnalysisError("side peaks contain no counts")
    s = cs / len(sides)
    g = c0 / s
    var = c0 / s**2 + (c0**2 / s**4) * cs / len(sides) ** 2
    return FitResult(
        {"g2_0": g},
        {"g2_0": float(np.sqrt(var))},
        residuals={"central": c0, "side": sides, "window_ps": width},
    )


def coincidence_pairs(a, b, window: int) -> Pairs:
    """All pairs with ``|t_a - t_b| <= window``, ordered by (t_a, t_b)."""
    a = _check_sorted(a, "a")
    b = _check_sorted(b, "b")
    ias, ibs = [], []
    for ia, ib in _pair_indices(a, b, -int(window), int(window)):
        ias.append(ia)
        ibs.append(ib)
    if not ias:
        return Pairs(np.zeros(0, np.int64), np.zeros(0, np.int64))
    ia, ib = np.concatenate(ias), np.concatenate(ibs)
    return Pairs(a[ia], b[ib])


def clock_reference(times, clock):
    """Time since the latest clock tag at or before each time.

    Returns ``(delta, valid)``; tags before the first clock are invalid.
    """
    times = np.asarray(times, dtype=np.int64)
    clock = _check_sorted(clock, "clock")
    idx = np.searchsorted(clock, times, side="right") - 1
    valid = idx >= 0
    delta = np.where(valid, times - clock[np.maximum(idx, 0)], 0)
    return delta, valid


def _time_hist(values, bin_width, t_range):
    lo, hi = t_range
    edges = np.arange(lo, hi + bin_width, bin_width, dtype=float)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def first_second_histograms(pairs: Pairs, clock, bin_width: int, t_range=(0, 3000)):
    """Clock-referenced histograms of the early and the late click of each pair."""
    e, ve = clock_reference(pairs.early, clock)
    l, vl = clock_reference(pairs.late, clock)
    ok = ve & vl
    dropped = int(np.count_nonzero(~ok))
    h1 = TimeHistogram(*_time_hist(e[ok], bin_width, t_range), dropped=dropped)
    h2 = TimeHistogram(*_time_hist(l[ok], bin_width, t_range), dropped=dropped)
    return h1, h2


def time_histogram(times, clock, bin_width: int, t_range=(0, 3000)) -> TimeHistogram:
    d, v = clock_reference(times, clock)
    return TimeHistogram(*_time_hist(d[v], bin_width, t_range), dropped=int(np.count_nonzero(~v)))


def gated_pairs(pairs: Pairs, clock, gate, herald: str = "a") -> Pairs:
    """Pairs whose heralding click lies in ``gate = (t_min, t_max)`` after its clock."""
    t_min, t_max = gate
    if not t_min < t_max:
        raise AnalysisError("gate requires t_min < t_max")
    th = pairs.t_a if herald == "a" else pairs.t_b
    d, v = clock_reference(th, clock)
    keep = v & (d > t_min) & (d < t_max)
    if np.isinf(t_min) and np.isinf(t_max):
        keep = np.ones(len(pairs), dtype=bool)
    return pairs[keep]


def histogram2d(pairs: Pairs, clock, bin_width: int = 5, t_range=(0, 1500)) -> Hist2D:
    t1, v1 = clock_reference(pairs.t_a, clock)
    t2, v2 = clock_reference(pairs.t_b, clock)
    ok = v1 & v2
    lo, hi = t_range
    edges = np.arange(lo, hi + bin_width, bin_width, dtype=float)
    counts, _, _ = np.histogram2d(t1[ok], t2[ok], bins=[edges, edges])
    return Hist2D(edges, counts.astype(np.int64))


# --------------------------------------------------------------------------
# spectra


class SpectrumScanError(AnalysisError):
    def __init__(self, center, cause):
        super().__init__(f"runner failed at filter position {center:g} GHz: {cause}")
        self.center = center


def scan_spectrum(mode: str, centers, runner) -> Spectrum:
    """Call ``runner(center)`` for each filter position and collect counts."""
    centers = np.asarray(centers, dtype=float)
    if centers.size > 1 and np.any(np.diff(centers) <= 0):
        raise AnalysisError("filter centres must be strictly increasing")
    counts = np.empty(centers.size)
    for i, c in enumerate(centers):
        try:
            counts[i] = runner(c)
        except Exception as exc:
            raise SpectrumScanError(c, exc) from exc
    return Spectrum(centers, counts, np.sqrt(counts), mode)


def _vertex(x, y):
    """Vertex abscissa of the parabola through three points."""
    x0, x1, x2 = x
    y0, y1, y2 = y
    d0, d2 = x0 - x1, x2 - x1
    num = d0 * d0 * (y1 - y2) - d2 * d2 * (y1 - y0)
    den = d0 * (y1 - y2) - d2 * (y1 - y0)
    if den == 0:
        return x1
    return x1 + 0.5 * num / den


def _refine(x, y, err, i):
    xs, ys, es = x[i - 1 : i + 2], y[i - 1 : i + 2], err[i - 1 : i + 2]
    pos = _vertex(xs, ys)
    grad = np.empty(3)
    for j in range(3):
        h = max(es[j], 1e-9) * 1e-3
        yp = ys.copy()
        yp[j] += h
        grad[j] = (_vertex(xs, yp) - pos) / h
    sigma = float(np.sqrt(np.sum((grad * es) ** 2)))
    # the vertex of a noisy parabola cannot leave the bracketing interval
    pos = float(np.clip(pos, xs[0], xs[2]))
    return pos, min(sigma, float(xs[2] - xs[0]))


def side_peak_position(spec: Spectrum, exclusion: float = 10.0, method: str = "parabola"):
    """Position (GHz) and error of the strongest peak below ``-exclusion``.

    The maximum is refined by a 3-point parabola, or with
    ``method="gaussian"`` by a Gaussian-plus-offset fit over the points within
    8 steps of it.
    """
    if method not in ("parabola", "gaussian"):
        raise AnalysisError(f"unknown refinement method {method!r}")
    x, y, e = spec.positions, spec.counts, np.maximum(spec.errors, 1.0)
    cand = np.flatnonzero(x < -exclusion)
    if cand.size < 5:
        raise AnalysisError(f"fewer than 5 spectrum points below -{exclusion:g} GHz")
    i = int(cand[np.argmax(y[cand])])
    if i == cand[0] or i == cand[-1]:
        raise AnalysisError("no interior side-peak maximum below the exclusion zone")
    floor = y[cand].min()
    if y[i] - floor < 3.0 * e[i]:
        raise AnalysisError("side peak not significant above the spectrum floor")
    if method == "gaussian":
        return _gauss_refine(x, y, e, i)
    return _refine(x, y, e, i)


def _gauss_refine(x, y, err, i, half=8):
    sl = slice(max(i - half, 0), i + half + 1)
    xs, ys, es = x[sl], y[sl], err[sl]

    def model(v, base, amp, mu, sig):
        return base + amp * np.exp(-0.5 * ((v - mu) / sig) ** 2)

    p0 = (ys.min(), y[i] - ys.min(), x[i], max((xs[-1] - xs[0]) / 4.0, 1e-3))
    try:
        popt, pcov = curve_fit(model, xs, ys, p0=p0, sigma=es, absolute_sigma=True, maxfev=5000)
    except RuntimeError as exc:
        raise AnalysisError(f"gaussian side-peak fit failed: {exc}") from None
    return float(popt[2]), float(np.sqrt(pcov[2, 2]))


def main_peak_position(spec: Spectrum, exclusion: float = 10.0):
    """Position of the maximum within ``|position| <= exclusion``."""
    x, y, e = spec.positions, spec.counts, np.maximum(spec.errors, 1.0)
    cand = np.flatnonzero(np.abs(x) <= exclusion)
    if cand.size < 3:
        raise AnalysisError("too few points around the zero-phonon line")
    i = int(cand[np.argmax(y[cand])])
    if i == 0 or i == x.size - 1:
        return float(x[i]), float("nan")
    return _refine(x, y, e, i)


def peak_fwhm(spec: Spectrum, position: float) -> float:
    """Full width at half maximum of the peak nearest ``position``.

    Walks outwards from the local maximum to the half-height crossings
    (linear interpolation); a flank that never crosses gives ``nan``.
    """
    x, y = spec.positions, spec.counts
    i = int(np.argmin(np.abs(x - position)))
    while 0 < i < x.size - 1 and (y[i - 1] > y[i] or y[i + 1] > y[i]):
        i = i - 1 if y[i - 1] > y[i + 1] else i + 1
    half = y[i] / 2.0
    left = right = np.nan
    for j in range(i, 0, -1):
        if y[j - 1] <= half:
            left = x[j - 1] + (half - y[j - 1]) * (x[j] - x[j - 1]) / (y[j] - y[j - 1])
            break
    for j in range(i, x.size - 1):
        if y[j + 1] <= half:
            right = x[j] + (y[j] - half) * (x[j + 1] - x[j]) / (y[j] - y[j + 1])
            break
    return float(right - left)


def extract_rabi(spec: Spectrum, detuning_ghz: float, **kwargs):
    """Peak Rabi frequency (GHz) and error from the measured side-peak shift."""
    if detuning_ghz <= 0:
        raise AnalysisError("detuning must be > 0")
    pos, err = side_peak_position(spec, **kwargs)
    return rabi_with_error(pos, err, detuning_ghz)


def rabi_with_error(shift_ghz: float, err: float, detuning_ghz: float):
    if shift_ghz > 0:
        raise AnalysisError(f"unphysical blue-shifted side peak at {shift_ghz:+.2f} GHz")
    rabi = rabi_from_shift(shift_ghz, detuning_ghz)
    if rabi == 0:
        return 0.0, float(np.sqrt(2.0 * detuning_ghz * err))
    return rabi, abs(shift_ghz - detuning_ghz) / rabi * err


# --------------------------------------------------------------------------
# fitting


def linear_fit(x, y, y_err=None, through_origin: bool = False) -> FitResult:
    """Weighted least-squares line; ``through_origin`` fits ``y = A x``.

    ``r2`` is the weighted coefficient of determination about the weighted
    mean of ``y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise AnalysisError("need >= 2 points of equal-length x and y")
    w = np.ones_like(y) if y_err is None else 1.0 / np.asarray(y_err, dtype=float) ** 2
    if through_origin:
        if np.all(x == 0):
            raise AnalysisError("degenerate x: all zero")
        X = x[:, None]
    else:
        if np.ptp(x) == 0:
            raise AnalysisError("degenerate x: all values equal")
        X = np.column_stack([x, np.ones_like(x)])
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    resid = y - X @ beta
    dof = x.size - X.shape[1]
    chi2 = float(np.sum(w * resid**2))
    if y_err is None:
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    errs = np.sqrt(np.diag(cov))
    ybar = np.sum(w * y) / np.sum(w)
    sst = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - chi2 / sst if sst > 0 else (1.0 if chi2 == 0 else 0.0)
    params = {"slope": float(beta[0])}
    errors = {"slope": float(errs[0])}
    if not through_origin:
        params["intercept"] = float(beta[1])
        errors["intercept"] = float(errs[1])
    return FitResult(params, errors, r2, {"chi2": chi2, "dof": dof, "max_abs": float(np.max(np.abs(resid)))})


def decay_fit(hist: TimeHistogram, fit_window) -> FitResult:
    """Poisson maximum-likelihood fit of ``A exp(-t / tau)`` on a window.

    With the amplitude profiled out the likelihood equation reduces to matching
    the count-weighted mean time to the model mean, which is monotone in the
    decay rate and solved by bracketing.  A histogram that does not fall off
    returns ``tau = inf`` with ``flags['unbounded']`` set.
    """
    lo, hi = fit_window
    t = hist.centers
    sel = (t >= lo) & (t < hi)
    n = hist.counts[sel].astype(float)
    if n.sum() <= 0:
        raise AnalysisError("empty fit window")
    if np.count_nonzero(n) < 10:
        raise AnalysisError("fewer than 10 populated bins in the fit window")
    x = t[sel] - t[sel][0]
    total = n.sum()
    observed = float(np.sum(n * x) / total)

    def model_mean(lam):
        wgt = np.exp(-lam * x)
        return float(np.sum(x * wgt) / np.sum(wgt))

    if observed >= model_mean(0.0):
        return FitResult({"tau": float("inf")}, {"tau": float("inf")}, flags={"unbounded": True})
    hi_lam = 1.0 / max(x[1], 1e-12)
    while model_mean(hi_lam) > observed:
        hi_lam *= 4.0
        if hi_lam > 1e6:
            raise AnalysisError("decay too fast for the histogram binning")
    lam = brentq(lambda v: model_mean(v) - observed, 0.0, hi_lam, xtol=1e-15, rtol=1e-13)
    wgt = np.exp(-lam * x)
    p = wgt / wgt.sum()
    var_t = float(np.sum(p * x * x) - np.sum(p * x) ** 2)
    sigma_lam = 1.0 / np.sqrt(total * var_t)
    tau = 1.0 / lam
    mu = total * p
    dev = 2.0 * float(np.sum(np.where(n > 0, n * np.log(np.where(n > 0, n, 1) / mu), 0.0) - (n - mu)))
    return FitResult(
        {"tau": tau, "amplitude": float(total / wgt.sum())},
        {"tau": sigma_lam / lam**2},
        flags={"unbounded": False},
        residuals={"deviance": dev, "bins": int(x.size)},
    )


# --------------------------------------------------------------------------
# time-trace shape helpers


def local_maxima(hist: TimeHistogram, prominence: float = 0.1, smooth_bins: int = 1):
    """Positions (ps) of local maxima whose prominence exceeds ``prominence``
    times the histogram maximum, after an optional boxcar smoothing."""
    y = hist.counts.astype(float)
    if smooth_bins > 1:
        y = np.convolve(y, np.ones(smooth_bins) / smooth_bins, mode="same")
    if y.max() <= 0:
        return np.zeros(0)
    idx, _ = find_peaks(y, prominence=prominence * y.max())
    return hist.centers[idx]


def write_product(path, columns: dict, meta: dict):
    """CSV with a one-line ``# {json}`` metadata header."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True, default=_json_default) + "\n")
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return f"{float(v):.6g}"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
