"""Report rendering: metric-vs-n SVG curves and side-by-side overlay
panels comparing explanation masks at one shared pixel budget.

SVG is written by hand (textual, diffable, no plotting dependency).
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .evaluation import ALL_METHODS
from .explainers import pixel_budget_mask

SERIES_COLORS = {
    "lime": "#2ca02c",
    "guided": "#1f77b4",
    "salience": "#ff7f0e",
    "random": "#7f7f7f",
}


def svg_line_plot(x_values, series, path, title="", xlabel="", ylabel="",
                  y_range=(0.0, 1.0)) -> None:
    """Write a fixed-size line plot; `series` maps name -> y values."""
    width, height = 640, 400
    ml, mr, mt, mb = 60, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    x_min, x_max = min(x_values), max(x_values)
    y_min, y_max = y_range

    def sx(x):
        if x_max == x_min:
            return ml + pw / 2
        return ml + (x - x_min) / (x_max - x_min) * pw

    def sy(y):
        return mt + (y_max - y) / (y_max - y_min) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="15" font-family="sans-serif">{title}</text>',
    ]
    # axes and ticks
    parts.append(
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_min + frac * (y_max - y_min)
        parts.append(
            f'<line x1="{ml - 4}" y1="{sy(y):.1f}" x2="{ml}" y2="{sy(y):.1f}" '
            'stroke="black"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{sy(y) + 4:.1f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{y:.2f}</text>'
        )
    for x in x_values:
        parts.append(
            f'<line x1="{sx(x):.1f}" y1="{mt + ph}" x2="{sx(x):.1f}" '
            f'y2="{mt + ph + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(x):.1f}" y="{mt + ph + 16}" text-anchor="middle" '
            f'font-size="10" font-family="sans-serif">{x}</text>'
        )
    parts.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 18 {mt + ph / 2:.1f})">'
        f"{ylabel}</text>"
    )
    # series lines and legend
    legend_y = mt + 10
    for name, ys in series.items():
        color = SERIES_COLORS.get(name, "#000000")
        points = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(x_values, ys))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            'stroke-width="1.8"/>'
        )
        parts.append(
            f'<line x1="{ml + pw + 12}" y1="{legend_y}" x2="{ml + pw + 36}" '
            f'y2="{legend_y}" stroke="{color}" stroke-width="3"/>'
        )
        parts.append(
            f'<text x="{ml + pw + 42}" y="{legend_y + 4}" font-size="12" '
            f'font-family="sans-serif">{name}</text>'
        )
        legend_y += 18
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def lime_budget_mask(ranking, budget: int) -> np.ndarray:
    """Exactly `budget` pixels, taken in superpixel rank order (row-major
    within a superpixel)."""
    labels = ranking.segments.labels
    total = sum(int(ranking.segments.sizes[sid]) for sid, _ in ranking.ranked)
    if not 1 <= budget <= total:
        raise InputError(
            f"budget {budget} out of range [1, {total}] for this ranking"
        )
    mask = np.zeros(labels.shape, dtype=bool)
    remaining = budget
    for sid, _ in ranking.ranked:
        ys, xs = np.nonzero(labels == sid)
        take = min(remaining, len(ys))
        mask[ys[:take], xs[:take]] = True
        remaining -= take
        if remaining == 0:
            break
    return mask


def _mask_panel(mask) -> np.ndarray:
    return np.broadcast_to(np.where(mask, 1.0, 0.0), (3,) + mask.shape).copy()


def render_overlay(record, explanations, budget: int) -> np.ndarray:
    """Side-by-side panels: original, adversarial, ground truth, then one
    binary mask per method at the same budget. White marks selected
    pixels; every panel has the input image's dimensions."""
    n = record.mask.size
    if not 1 <= budget <= n:
        raise InputError(f"budget {budget} out of range [1, {n}]")
    panels = [
        record.original,
        record.adversarial,
        _mask_panel(record.mask),
        _mask_panel(pixel_budget_mask(explanations.salience, budget)),
        _mask_panel(pixel_budget_mask(explanations.guided, budget)),
        _mask_panel(lime_budget_mask(explanations.lime, budget)),
    ]
    return np.concatenate(panels, axis=2)


OVERLAY_PANELS = ("original", "adversarial", "truth", "salience", "guided", "lime")


def plot_example_curves(rows, example_id, path_base) -> None:
    """Jaccard and Hamming vs n for one example from eval.csv rows."""
    mine = [r for r in rows if r["example_id"] == example_id]
    if not mine:
        raise InputError(f"no evaluation rows for example {example_id!r}")
    ns = sorted({r["n"] for r in mine})
    for metric in ("jaccard", "hamming"):
        series = {}
        for method in ALL_METHODS:
            by_n = {r["n"]: r[metric] for r in mine if r["method"] == method}
            series[method] = [by_n[n] for n in ns]
        svg_line_plot(
            ns,
            series,
            f"{path_base}_{metric}.svg",
            title=f"{metric} vs explanation size, example {example_id}",
            xlabel="n (superpixels in LIME partial union)",
            ylabel=metric,
        )
