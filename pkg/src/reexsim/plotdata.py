"""Gnuplot-ready CSV and small self-contained SVG renderings of analysis products."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .analysis import CorrelationHistogram, Hist2D, Spectrum, TimeHistogram

W, H, PAD = 640, 400, 50


def _columns(product):
    if isinstance(product, Spectrum):
        return ("position_GHz", "counts", "err"), (product.positions, product.counts, product.errors)
    if isinstance(product, TimeHistogram):
        return ("t_ps", "counts"), (product.centers, product.counts)
    if isinstance(product, CorrelationHistogram):
        return ("tau_ps", "counts"), (product.centers, product.counts)
    if isinstance(product, Hist2D):
        c = product.edges[:-1] + product.bin_width / 2.0
        t1, t2 = np.meshgrid(c, c, indexing="ij")
        return ("t1_ps", "t2_ps", "count"), (t1.ravel(), t2.ravel(), product.counts.ravel())
    raise TypeError(f"no plot data for {type(product).__name__}")


def emit_plotdata(product, path, svg: bool = False, log_y: bool = False, title: str = "") -> list:
    """Write ``<path>.csv`` (space separated, ``#`` header) and optionally ``<path>.svg``."""
    path = Path(path)
    names, cols = _columns(product)
    csv_path = path.with_suffix(".csv")
    rows = np.column_stack([np.asarray(c, dtype=float) for c in cols])
    try:
        np.savetxt(csv_path, rows, fmt="%.6g", header=" ".join(names))
    except OSError as exc:
        raise OSError(f"cannot write plot data to {csv_path}: {exc}") from exc
    written = [csv_path]
    if svg:
        svg_path = path.with_suffix(".svg")
        body = _heatmap(product) if isinstance(product, Hist2D) else _line(cols[0], cols[1], log_y)
        svg_path.write_text(_frame(body, title or names[-1]), encoding="utf-8")
        written.append(svg_path)
    return written


def _frame(body, title):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>\n'
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>\n'
        f"{body}</svg>\n"
    )


def _scale(v, lo, hi, a, b):
    return a + (v - lo) / (hi - lo if hi > lo else 1.0) * (b - a)


def _line(x, y, log_y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if log_y:
        y = np.log10(np.maximum(y, 0.5))
    px = _scale(x, x.min(), x.max(), PAD, W - PAD)
    py = _scale(y, y.min(), y.max(), H - PAD, PAD)
    pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
    labels = (
        f'<text x="{PAD}" y="{H - PAD / 3}" font-family="sans-serif" font-size="11">{x.min():.4g}</text>\n'
        f'<text x="{W - PAD}" y="{H - PAD / 3}" text-anchor="end" font-family="sans-serif" font-size="11">{x.max():.4g}</text>\n'
    )
    return f'<polyline fill="none" stroke="navy" stroke-width="1.2" points="{pts}"/>\n' + labels


def _heatmap(h: Hist2D):
    n = h.counts.shape[0]
    top = h.counts.max() or 1
    cw = (W - 2 * PAD) / n
    ch = (H - 2 * PAD) / n
    cells = []
    for i, j in zip(*np.nonzero(h.counts)):
        shade = int(255 * (1 - h.counts[i, j] / top))
        x = PAD + j * cw
        y = H - PAD - (i + 1) * ch
        cells.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" fill="rgb({shade},{shade},255)"/>')
    return "\n".join(cells) + "\n"
