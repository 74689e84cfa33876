"""Minimal SVG line plots; CSV stays the normative output."""
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, MARGIN = 640, 360, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


class Series:
    def __init__(self, label: str, y: Sequence[float], band: Optional[Sequence[float]] = None):
        self.label = label
        self.y = np.asarray(y, dtype=np.float64)
        self.band = None if band is None else np.asarray(band, dtype=np.float64)


def _scale(values: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return out_lo + (values - lo) / span * (out_hi - out_lo)


def line_plot(series: Sequence[Series], title: str, x_label: str, y_label: str) -> str:
    n = max(s.y.size for s in series)
    lows = [np.min(s.y - (s.band if s.band is not None else 0.0)) for s in series]
    highs = [np.max(s.y + (s.band if s.band is not None else 0.0)) for s in series]
    lo, hi = float(min(lows)), float(max(highs))
    xs = _scale(np.arange(n, dtype=np.float64), 0.0, max(n - 1, 1), MARGIN, WIDTH - MARGIN)

    def ys(v):
        return _scale(v, lo, hi, HEIGHT - MARGIN, MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="12" y="{HEIGHT / 2}" transform="rotate(-90 12 {HEIGHT / 2})" text-anchor="middle">{escape(y_label)}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="#999"/>',
    ]
    for i, s in enumerate(series):
        color = COLORS[i % len(COLORS)]
        x = xs[: s.y.size]
        if s.band is not None:
            upper = list(zip(x, ys(s.y + s.band)))
            lower = list(zip(x[::-1], ys((s.y - s.band)[::-1])))
            points = " ".join(f"{a:.2f},{b:.2f}" for a, b in upper + lower)
            parts.append(f'<polygon points="{points}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        points = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, ys(s.y)))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH - MARGIN - 4}" y="{MARGIN + 16 * (i + 1)}" text-anchor="end" fill="{color}">{escape(s.label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_plot(path: Path, series: Sequence[Series], title: str, x_label: str, y_label: str) -> None:
    Path(path).write_text(line_plot(series, title, x_label, y_label))
