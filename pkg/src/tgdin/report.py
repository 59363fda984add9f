"""Report emission: metric tables as CSV, capacity-sweep charts as SVG.

Outputs are deterministic byte-for-byte given the same records: stable
column order, repr-formatted floats, and a hand-rolled SVG writer with
no timestamps or generator metadata.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import MetricRecord
from .studies import POOLED

CSV_COLUMNS = ("model", "source", "target_capacity_mbps", "scenario",
               "rmse_mbps", "rel_mae", "pearson_r", "n_windows",
               "pearson_excluded")

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2")


def records_to_csv(records: list[MetricRecord]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        d = rec.as_dict()
        row = []
        for col in CSV_COLUMNS:
            v = d[col]
            if isinstance(v, float):
                row.append(repr(v))
            else:
                row.append(str(v).replace(",", ";"))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def read_metrics_csv(path: str | Path) -> list[MetricRecord]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected metrics header")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        p = line.split(",")
        out.append(MetricRecord(
            model=p[0], source=p[1], target_capacity_mbps=float(p[2]),
            scenario=p[3], rmse_mbps=float(p[4]), rel_mae=float(p[5]),
            pearson_r=float(p[6]), n_windows=int(p[7]),
            pearson_excluded=int(p[8])))
    return out


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def sweep_svg(records: list[MetricRecord], metric: str,
              title: str) -> str:
    """Line chart of a pooled metric vs capacity, one polyline per model."""
    pooled = [r for r in records if r.scenario == POOLED]
    models = sorted({r.model for r in pooled})
    caps = sorted({r.target_capacity_mbps for r in pooled})
    if not pooled or not caps:
        raise ValueError("no pooled records to plot")

    W, H = 640, 400
    ml, mr, mt, mb = 60, 180, 40, 50
    pw, ph = W - ml - mr, H - mt - mb
    values = [getattr(r, metric) for r in pooled
              if np.isfinite(getattr(r, metric))]
    vmax = max(values) if values else 1.0
    vmin = min(0.0, min(values)) if values else 0.0
    if vmax == vmin:
        vmax = vmin + 1.0
    cmin, cmax = min(caps), max(caps)
    cspan = (cmax - cmin) or 1.0

    def sx(c):
        return ml + (c - cmin) / cspan * pw

    def sy(v):
        return mt + ph - (v - vmin) / (vmax - vmin) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{ml}" y="24" font-family="sans-serif" font-size="15">'
        f'{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
        f'stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for c in caps:
        parts.append(f'<text x="{_fmt(sx(c))}" y="{mt + ph + 18}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'text-anchor="middle">{_fmt(c)}</text>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = vmin + frac * (vmax - vmin)
        parts.append(f'<text x="{ml - 6}" y="{_fmt(sy(v) + 4)}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'text-anchor="end">{_fmt(v)}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{H - 12}" '
                 f'font-family="sans-serif" font-size="12" '
                 f'text-anchor="middle">capacity (Mbps)</text>')

    for i, model in enumerate(models):
        pts = sorted(((r.target_capacity_mbps, getattr(r, metric))
                      for r in pooled if r.model == model))
        pts = [(c, v) for c, v in pts if np.isfinite(v)]
        if not pts:
            continue
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{_fmt(sx(c))},{_fmt(sy(v))}" for c, v in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" '
                     f'stroke-width="2" points="{coords}"/>')
        for c, v in pts:
            parts.append(f'<circle cx="{_fmt(sx(c))}" cy="{_fmt(sy(v))}" '
                         f'r="3" fill="{color}"/>')
        ly = mt + 16 * i
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly}" '
                     f'x2="{ml + pw + 30}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 34}" y="{ly + 4}" '
                     f'font-family="sans-serif" font-size="11">{model}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(tables: dict[str, list[MetricRecord]],
                out_dir: str | Path) -> list[Path]:
    """Write one CSV per table and one SVG per metric per table."""
    if not tables or all(not recs for recs in tables.values()):
        raise ValueError("no metric tables to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, records in tables.items():
        if not records:
            continue
        csv_path = out_dir / f"metrics_{name}.csv"
        csv_path.write_text(records_to_csv(records))
        written.append(csv_path)
        for metric, title in (("rmse_mbps", "Pooled RMSE (Mbps)"),
                              ("rel_mae", "Pooled relative MAE"),
                              ("pearson_r", "Mean Pearson r")):
            if not any(r.scenario == POOLED for r in records):
                continue
            svg_path = out_dir / f"fig_{name}_{metric}.svg"
            svg_path.write_text(sweep_svg(records, metric, title))
            written.append(svg_path)
    return written
