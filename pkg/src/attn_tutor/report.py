"""Report rendering: deterministic SVG line charts from TSV logs, the
variant summary table (rank correlation up, EMD down), and per-sample
comparison of two directories of exported map grids.
"""

from __future__ import annotations

import os

import numpy as np

from . import explain as E
from . import metrics as ME

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _MARGIN = 640, 400, 60


def read_metrics_tsv(path):
    """Parse a metrics TSV into row dicts with typed columns."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"empty metrics log: {path}")
    header = tuple(lines[0].split("\t"))
    if header != ME.TSV_COLUMNS:
        raise ValueError(f"unexpected TSV header {header} in {path}")
    rows = []
    for line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != len(header):
            raise ValueError(f"ragged TSV row in {path}: {line!r}")
        row = {"epoch": int(parts[0]), "variant": parts[1]}
        for name, value in zip(header[2:], parts[2:]):
            row[name] = float(value)
        rows.append(row)
    return rows


def read_sweep_tsv(path):
    """Parse an eta-sweep TSV into row dicts with float columns."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0].split("\t")[0] != "eta":
        raise ValueError(f"not a sweep TSV: {path}")
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != len(header):
            raise ValueError(f"ragged sweep row in {path}: {line!r}")
        rows.append({name: float(v) for name, v in zip(header, parts)})
    return rows


def _scale(values, lo_px, hi_px):
    vmin, vmax = min(values), max(values)
    if vmax == vmin:
        vmax = vmin + 1.0
    span = vmax - vmin

    def to_px(v):
        return lo_px + (v - vmin) / span * (hi_px - lo_px)

    return to_px, vmin, vmax


def line_chart(title, x_label, y_label, series):
    """SVG polyline chart. Series is [(label, xs, ys)].

    Each polyline carries its y-values verbatim in a data-values
    attribute so the plotted numbers round-trip from the source log.
    """
    if not series:
        raise ValueError("line_chart needs at least one series")
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    if not all_x:
        raise ValueError("line_chart needs non-empty series")
    to_px_x, xmin, xmax = _scale(all_x, _MARGIN, _W - _MARGIN)
    to_px_y, ymin, ymax = _scale(all_y, _H - _MARGIN, _MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{_MARGIN}" y1="{_H - _MARGIN}" x2="{_W - _MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
        f'<text x="{_W // 2}" y="{_H - 16}" text-anchor="middle" font-size="12">'
        f"{x_label}</text>",
        f'<text x="18" y="{_H // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {_H // 2})">{y_label}</text>',
        f'<text x="{_MARGIN}" y="{_H - _MARGIN + 16}" font-size="10">{xmin:g}</text>',
        f'<text x="{_W - _MARGIN}" y="{_H - _MARGIN + 16}" text-anchor="end" '
        f'font-size="10">{xmax:g}</text>',
        f'<text x="{_MARGIN - 4}" y="{_H - _MARGIN}" text-anchor="end" '
        f'font-size="10">{ymin:g}</text>',
        f'<text x="{_MARGIN - 4}" y="{_MARGIN + 4}" text-anchor="end" '
        f'font-size="10">{ymax:g}</text>',
    ]
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{to_px_x(x):.2f},{to_px_y(y):.2f}" for x, y in zip(xs, ys))
        raw = ",".join(repr(float(y)) for y in ys)
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'data-label="{label}" data-values="{raw}" points="{points}"/>'
        )
        parts.append(
            f'<text x="{_W - _MARGIN + 4}" y="{_MARGIN + 14 * i}" font-size="11" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def chart_from_log(rows, column, title):
    """Per-variant series of one TSV column against the epoch axis."""
    variants = []
    for row in rows:
        if row["variant"] not in variants:
            variants.append(row["variant"])
    series = []
    for variant in variants:
        sub = [r for r in rows if r["variant"] == variant]
        series.append((variant, [r["epoch"] for r in sub], [r[column] for r in sub]))
    return line_chart(title, "epoch", column, series)


def eta_chart(etas, rcs):
    return line_chart("rank correlation by eta", "eta", "rc", [("rc", etas, rcs)])


def final_rows(rows):
    """Last epoch's row per variant, in first-seen variant order."""
    out = {}
    order = []
    for row in rows:
        if row["variant"] not in out:
            order.append(row["variant"])
        out[row["variant"]] = row
    return [out[v] for v in order]


def summary_table(rows):
    """Aligned text table of variant, RC (higher better), EMD (lower better)."""
    width = max([len("variant")] + [len(r["variant"]) for r in rows])
    lines = [f"{'variant':<{width}}  {'rc(up)':>12}  {'emd(down)':>12}"]
    for row in sorted(rows, key=lambda r: -r["rc"]):
        lines.append(f"{row['variant']:<{width}}  {row['rc']:>12.4f}  {row['emd']:>12.4f}")
    return "\n".join(lines) + "\n"


def compare_map_dirs(left_dir, right_dir):
    """Per-sample rank correlation and exact EMD for matching CSV grids."""
    left = {f for f in os.listdir(left_dir) if f.endswith(".csv")}
    right = {f for f in os.listdir(right_dir) if f.endswith(".csv")}
    common = sorted(left & right)
    if not common:
        raise ValueError(
            f"no common .csv map files between {left_dir} and {right_dir}"
        )
    results = []
    for name in common:
        a = E.read_map_csv(os.path.join(left_dir, name))
        b = E.read_map_csv(os.path.join(right_dir, name))
        if a.shape != b.shape:
            raise ValueError(f"map shapes differ for {name}: {a.shape} vs {b.shape}")
        rc = ME.rank_correlation(a.reshape(-1), b.reshape(-1))
        dist = ME.emd(a / a.sum(), b / b.sum())
        results.append((name, rc, dist))
    return results


def write_comparison_tsv(path, results):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample\trc\temd\n")
        for name, rc, dist in results:
            fh.write(f"{name}\t{rc!r}\t{dist!r}\n")
