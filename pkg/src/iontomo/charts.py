"""Dependency-free SVG bar charts of process matrices."""

from __future__ import annotations

import numpy as np

from .quantum_core import pauli_labels

CELL = 28
MARGIN = 60


def _color(v: float, vmax: float) -> str:
    t = min(1.0, abs(v) / vmax) if vmax > 0 else 0.0
    if v >= 0:
        r, g, b = int(255 * (1 - t)), int(255 * (1 - 0.6 * t)), 255
    else:
        r, g, b = 255, int(255 * (1 - 0.6 * t)), int(255 * (1 - t))
    return f"#{r:02x}{g:02x}{b:02x}"


def chi_bar_svg(values: np.ndarray, title: str, threshold: float = 1e-9) -> str:
    """Render a real 16x16 matrix as a grid of bars with Pauli-product axes.

    Each cell holds a bar whose height is proportional to ``|value|`` relative
    to the largest entry; the fill encodes sign and magnitude. Bars below
    ``threshold`` are omitted.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    labels = pauli_labels(2)
    size = MARGIN + n * CELL + 10
    vmax = float(np.abs(values).max())
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
        f'viewBox="0 0 {size} {size + 20}" font-family="sans-serif" font-size="9">',
        f'<title>{title}</title>',
        f'<text x="{size / 2:.1f}" y="14" text-anchor="middle" font-size="13">{title}</text>',
    ]
    top = MARGIN
    for i, lab in enumerate(labels):
        x = MARGIN + i * CELL + CELL / 2
        y = top + i * CELL + CELL / 2
        out.append(f'<text x="{x:.1f}" y="{top - 6}" text-anchor="middle">{lab}</text>')
        out.append(f'<text x="{MARGIN - 6}" y="{y + 3:.1f}" text-anchor="end">{lab}</text>')
    out.append(
        f'<rect x="{MARGIN}" y="{top}" width="{n * CELL}" height="{n * CELL}" '
        'fill="none" stroke="#cccccc"/>'
    )
    for m in range(n):
        for k in range(n):
            v = values[m, k]
            if abs(v) <= threshold or vmax == 0:
                continue
            h = (CELL - 4) * abs(v) / vmax
            x = MARGIN + k * CELL + 2
            y = top + (m + 1) * CELL - 2 - h
            out.append(
                f'<rect class="bar" data-row="{labels[m]}" data-col="{labels[k]}" data-value="{v:.6f}" '
                f'x="{x}" y="{y:.2f}" width="{CELL - 4}" height="{h:.2f}" fill="{_color(v, vmax)}" '
                'stroke="#333333" stroke-width="0.3"/>'
            )
    out.append(f'<text x="{MARGIN}" y="{size + 12}">max |value| = {vmax:.4f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def chi_charts(chi: np.ndarray) -> dict[str, str]:
    """The three panels: absolute value, real part and imaginary part."""
    chi = np.asarray(chi)
    return {
        "chi_abs.svg": chi_bar_svg(np.abs(chi), "|chi|"),
        "chi_re.svg": chi_bar_svg(chi.real, "Re chi"),
        "chi_im.svg": chi_bar_svg(chi.imag, "Im chi"),
    }
