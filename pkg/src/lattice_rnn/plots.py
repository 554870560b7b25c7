"""Loss curves from ``metrics.jsonl`` files: one SVG chart plus a merged CSV."""
from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]
REQUIRED = ("epoch", "train_cce", "valid_cce", "test_cce")


class MetricsFormatError(ValueError):
    pass


def read_metrics(path) -> list[dict]:
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricsFormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or any(k not in rec for k in REQUIRED):
                raise MetricsFormatError(f"{path}: line {lineno}: record lacks one of {', '.join(REQUIRED)}")
            rows.append(rec)
    if not rows:
        raise MetricsFormatError(f"{path}: no records")
    return rows


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_svg(series: dict[str, list[dict]], width: int = 640, height: int = 400) -> str:
    """Test CCE (solid, with markers) and valid CCE (dashed) against epoch."""
    left, right, top, bottom = 70, 160, 30, 50
    pw, ph = width - left - right, height - top - bottom
    epochs = [r["epoch"] for rows in series.values() for r in rows]
    losses = [r[k] for rows in series.values() for r in rows for k in ("test_cce", "valid_cce")]
    x0, x1 = min(epochs), max(epochs)
    y0, y1 = min(losses), max(losses)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for v in _ticks(y0, y1):
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.3f}</text>')
    for v in _ticks(x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{top + ph + 16}" text-anchor="middle">{v:g}</text>')
    out.append(f'<text class="x-label" x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">epochs</text>')
    out.append(
        f'<text class="y-label" x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">CCE</text>'
    )
    out.append('<g class="legend">')
    for i, name in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 32}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend-entry" x="{left + pw + 38}" y="{ly}">{escape(name)}</text>')
    ny = top + 14 + 18 * len(series) + 8
    out.append(f'<text class="legend-note" x="{left + pw + 12}" y="{ny}">solid: test, dashed: valid</text>')
    out.append("</g>")
    for i, (name, rows) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        rows = sorted(rows, key=lambda r: r["epoch"])
        sid = escape(name, {'"': "&quot;"})
        valid_pts = " ".join(f"{sx(r['epoch']):.2f},{sy(r['valid_cce']):.2f}" for r in rows)
        test_pts = " ".join(f"{sx(r['epoch']):.2f},{sy(r['test_cce']):.2f}" for r in rows)
        out.append(f'<g class="series" data-series="{sid}">')
        out.append(f'<polyline class="valid" points="{valid_pts}" fill="none" stroke="{color}" stroke-dasharray="4 3"/>')
        out.append(f'<polyline class="test" points="{test_pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for r in rows:
            out.append(f'<circle class="point" cx="{sx(r["epoch"]):.2f}" cy="{sy(r["test_cce"]):.2f}" r="3" fill="{color}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_curves(metric_files, out_dir) -> tuple[Path, Path]:
    """Write ``curves.svg`` and ``curves.csv`` for the given metrics files.

    Series are named after the file stems (the parent directory name is used
    when stems collide, e.g. several ``metrics.jsonl``).
    """
    paths = [Path(p) for p in metric_files]
    if not paths:
        raise MetricsFormatError("no metrics files given")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        stems = [f"{p.parent.name}/{p.stem}" for p in paths]
    series = {stem: read_metrics(p) for stem, p in zip(stems, paths)}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    svg_path = out / "curves.svg"
    svg_path.write_text(render_svg(series))
    csv_path = out / "curves.csv"
    with open(csv_path, "w") as fh:
        fh.write("series,epoch,train_cce,valid_cce,test_cce\n")
        for name, rows in series.items():
            for r in rows:
                fh.write(f"{name},{r['epoch']},{r['train_cce']!r},{r['valid_cce']!r},{r['test_cce']!r}\n")
    return svg_path, csv_path
