"""Accuracy tables and the 2-D scatter export.

The SVG draws synthetic-domain points as circles and everything else as
crosses, colored by class. It stays dependency-free: coordinates are scaled
into the viewport here and written as plain markup.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import DataError
from .embed import LatentPoint

_PALETTE = ("#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
            "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0")


def accuracy_report(predictions: list[tuple[int, ...]],
                    labels: list[tuple[int, ...]],
                    domains: list[str] | None = None) -> dict:
    if len(predictions) != len(labels):
        raise DataError(f"report: {len(predictions)} predictions vs "
                        f"{len(labels)} labels")
    if not labels:
        raise DataError("report: empty input")
    hits = [p == t for p, t in zip(predictions, labels)]
    report: dict = {
        "n": len(labels),
        "overall": 100.0 * sum(hits) / len(labels),
        "per_class": {},
    }
    for cls in sorted(set(labels)):
        rows = [h for h, t in zip(hits, labels) if t == cls]
        report["per_class"][cls] = 100.0 * sum(rows) / len(rows)
    if domains is not None:
        if len(domains) != len(labels):
            raise DataError("report: domains length mismatch")
        report["per_domain"] = {}
        for dom in sorted(set(domains)):
            rows = [h for h, d in zip(hits, domains) if d == dom]
            report["per_domain"][dom] = 100.0 * sum(rows) / len(rows)
    return report


def write_report_csv(report: dict, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group,accuracy,n\n")
        fh.write(f"overall,{report['overall']:.4f},{report['n']}\n")
        for cls, acc in report["per_class"].items():
            tag = "|".join(str(c) for c in cls)
            fh.write(f"class={tag},{acc:.4f},\n")
        for dom, acc in report.get("per_domain", {}).items():
            fh.write(f"domain={dom},{acc:.4f},\n")


def _class_color(cls: tuple[int, ...], classes: list[tuple[int, ...]]) -> str:
    return _PALETTE[classes.index(cls) % len(_PALETTE)]


def export_scatter_svg(coords: np.ndarray, points: list[LatentPoint],
                       path: str | os.PathLike,
                       width: int = 640, height: int = 480) -> None:
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) != len(points):
        raise DataError(f"svg: {len(coords)} coords vs {len(points)} points")
    margin = 24.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect x="0.5" y="0.5" width="{width - 1}" height="{height - 1}" '
             f'fill="white" stroke="#555"/>']
    if len(coords):
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        classes = sorted({p.class_tuple for p in points})
        for (x, y), p in zip(coords, points):
            px = margin + (x - lo[0]) / span[0] * (width - 2 * margin)
            py = margin + (y - lo[1]) / span[1] * (height - 2 * margin)
            color = _class_color(p.class_tuple, classes)
            if p.domain_tag == "synthetic":
                parts.append(f'<circle class="pt" cx="{px:.2f}" cy="{py:.2f}" '
                             f'r="3" fill="{color}" fill-opacity="0.75"/>')
            else:
                s = 3.2
                parts.append(
                    f'<path class="pt" stroke="{color}" stroke-width="1.4" '
                    f'd="M {px - s:.2f} {py - s:.2f} L {px + s:.2f} {py + s:.2f} '
                    f'M {px - s:.2f} {py + s:.2f} L {px + s:.2f} {py - s:.2f}"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
